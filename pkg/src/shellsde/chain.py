"""Continuous-time Markov chain simulation of the second-moment flow.

The chain jumps on the positive integers with the rates of the symmetric
matrix built in :mod:`shellsde.moments`: exponential holding time with
rate pi_n, then a jump drawn from the normalised row.  Because the rates
grow geometrically the chain runs away to infinity in finite time; a path
is declared exploded once it exceeds a level cap or a jump-count cap,
which is a conservative proxy that converges as the caps grow.  The
expected remaining time above the level cap is reported alongside so the
proxy error is accounted for.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .algebra import ModelSpec
from .moments import embedded_matrix, _require_identity_grams

__all__ = [
    "ChainCaps",
    "ChainTrajectory",
    "IncrementDistribution",
    "embedded_step",
    "increment_distribution",
    "simulate_chain",
    "SurvivalEstimate",
    "survival_curve",
    "VisitStats",
    "visit_statistics",
    "explosion_tail_bound",
    "chain_rng",
]


def chain_rng(seed: int, replicate: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=[seed, 0x6368, replicate]))


@dataclass(frozen=True)
class ChainCaps:
    max_jumps: int = 100_000
    max_level: int = 60


@dataclass(frozen=True, eq=False)
class ChainTrajectory:
    """Jump times t_0 = 0 < t_1 < ... and positions, plus terminal status."""

    times: np.ndarray
    states: np.ndarray
    status: str  # 'alive' | 'exploded' | 'absorbed'

    def position_at(self, t: float) -> Optional[int]:
        """State at time t, or None when the path is already dead."""
        if self.status == "exploded" and t >= self.times[-1]:
            return None
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return int(self.states[idx])


class _RateTable:
    """Cached holding rates and alias rows up to a level cap."""

    def __init__(self, spec: ModelSpec, max_level: int):
        _require_identity_grams(spec)
        self.max_level = max_level
        self.pi = np.array([spec.pi_n(n) for n in range(1, max_level + 1)])
        self.targets: list[np.ndarray] = []
        self.cum: list[np.ndarray] = []
        for n in range(1, max_level + 1):
            rates: dict[int, float] = {}
            for iid in spec.ids:
                k = spec.k_eff(iid, n)
                if k == 0.0:
                    continue
                m = n + spec.interaction(iid).r
                rates[m] = rates.get(m, 0.0) + spec.sigma**2 * k * k
            if rates:
                t = np.array(sorted(rates))
                p = np.array([rates[m] for m in t])
                self.targets.append(t)
                self.cum.append(np.cumsum(p) / p.sum())
            else:
                self.targets.append(np.array([], dtype=int))
                self.cum.append(np.array([]))


def embedded_step(spec: ModelSpec, n: int, rng: np.random.Generator) -> int:
    """One jump of the embedded discrete chain from position n.

    The target law is the normalised rate row, which does not depend on
    sigma (it cancels between numerator and denominator).
    """
    if n < 1:
        raise ValueError("position must be >= 1")
    rates: dict[int, float] = {}
    for iid in spec.ids:
        k = spec.k_eff(iid, n)
        if k == 0.0:
            continue
        m = n + spec.interaction(iid).r
        rates[m] = rates.get(m, 0.0) + k * k
    if not rates:
        raise ValueError(f"no active interaction at shell {n}")
    targets = np.array(sorted(rates))
    probs = np.array([rates[m] for m in targets])
    cum = np.cumsum(probs) / probs.sum()
    return int(targets[np.searchsorted(cum, rng.random(), side="right")])


@dataclass(frozen=True, eq=False)
class IncrementDistribution:
    offsets: np.ndarray
    probs: np.ndarray
    drift: float


def increment_distribution(spec: ModelSpec) -> IncrementDistribution:
    """Bulk jump-increment law q_r = sum_{r_i = r} k_i**2 / sum k_j**2.

    Valid from the stabilisation shell upward, where every interaction is
    active.  The pairing forces q_{-r} = q_r * lambda**(-2r), so the drift
    sum(r * q_r) is positive.
    """
    weights: dict[int, float] = {}
    total = 0.0
    for it in spec.interactions:
        weights[it.r] = weights.get(it.r, 0.0) + it.k**2
        total += it.k**2
    offsets = np.array(sorted(weights))
    probs = np.array([weights[r] for r in offsets]) / total
    return IncrementDistribution(offsets=offsets, probs=probs, drift=float((offsets * probs).sum()))


def _sample_start(start_dist: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(start_dist)
    cum = cum / cum[-1]
    return int(np.searchsorted(cum, rng.random(), side="right")) + 1


def simulate_chain(
    spec: ModelSpec,
    start_dist: Sequence[float],
    horizon: float,
    caps: ChainCaps,
    rng: np.random.Generator,
    _table: Optional[_RateTable] = None,
) -> ChainTrajectory:
    """Simulate one path up to the horizon or a cap.

    ``start_dist[n-1]`` is the probability of starting at shell n (an
    energy profile normalised to one).  Holding times use inverse-CDF
    sampling so trajectories are a pure function of the generator state.
    Cap hits are data, not errors: the path status records them.
    """
    table = _table or _RateTable(spec, caps.max_level)
    start = np.asarray(start_dist, dtype=float)
    pos = _sample_start(start, rng)
    t = 0.0
    times = [0.0]
    states = [pos]
    status = "alive"
    for _ in range(caps.max_jumps):
        if pos > caps.max_level:
            status = "exploded"
            break
        rate = table.pi[pos - 1]
        if rate <= 0.0:
            status = "absorbed"
            break
        t += -math.log(rng.random()) / rate
        if t > horizon:
            break
        cum = table.cum[pos - 1]
        pos = int(table.targets[pos - 1][np.searchsorted(cum, rng.random(), side="right")])
        times.append(t)
        states.append(pos)
    else:
        status = "exploded"
    return ChainTrajectory(times=np.array(times), states=np.array(states), status=status)


@dataclass(frozen=True, eq=False)
class SurvivalEstimate:
    times: np.ndarray
    survival: np.ndarray
    se: np.ndarray
    survival_monotone: np.ndarray
    occupancy: np.ndarray  # (T, levels) estimated P(position = n, alive)
    occupancy_se: np.ndarray
    replicates: int
    tail_time_bound: float


def survival_curve(
    spec: ModelSpec,
    start_dist: Sequence[float],
    tgrid: Sequence[float],
    replicates: int,
    caps: ChainCaps,
    seed: int = 0,
) -> SurvivalEstimate:
    """Monte Carlo survival probability and occupancy histogram.

    ``survival[t]`` estimates the probability that the path is still alive
    (finitely many jumps, below the level cap) at time t, with binomial
    standard errors.  The monotone copy is the running minimum, for
    reporting; survival events are nested so the true curve cannot rise.
    """
    t = np.asarray(tgrid, dtype=float)
    table = _RateTable(spec, caps.max_level)
    levels = caps.max_level
    alive_counts = np.zeros(len(t))
    occ_counts = np.zeros((len(t), levels))
    for rep in range(replicates):
        rng = chain_rng(seed, rep)
        traj = simulate_chain(spec, start_dist, float(t.max()), caps, rng, _table=table)
        for ti, tv in enumerate(t):
            pos = traj.position_at(tv)
            if pos is not None and pos <= levels:
                alive_counts[ti] += 1
                occ_counts[ti, pos - 1] += 1
    p = alive_counts / replicates
    se = np.sqrt(p * (1.0 - p) / replicates)
    occ = occ_counts / replicates
    occ_se = np.sqrt(occ * (1.0 - occ) / replicates)
    return SurvivalEstimate(
        times=t,
        survival=p,
        se=se,
        survival_monotone=np.minimum.accumulate(p),
        occupancy=occ,
        occupancy_se=occ_se,
        replicates=replicates,
        tail_time_bound=explosion_tail_bound(spec, caps.max_level),
    )


@dataclass(frozen=True, eq=False)
class VisitStats:
    levels: np.ndarray
    mean_visits: np.ndarray  # E[V_n | V_n > 0]
    se: np.ndarray
    p_visit: np.ndarray
    replicates: int


def visit_statistics(
    spec: ModelSpec,
    N: int,
    replicates: int,
    seed: int = 0,
    start_dist: Optional[Sequence[float]] = None,
    max_jumps: int = 100_000,
) -> VisitStats:
    """Monte Carlo visit counts of the embedded chain, absorbing beyond N.

    Estimates E[V_n | V_n > 0] where V_n counts visits at jump index >= 1;
    the chain itself only needs the embedded transition law, no holding
    times.
    """
    P = embedded_matrix(spec, N)
    cum_rows = []
    targets_rows = []
    for n in range(N):
        idx = np.nonzero(P[n])[0]
        targets_rows.append(idx + 1)
        cum_rows.append(np.cumsum(P[n, idx]))  # tail mass beyond N absorbs
    start = np.zeros(N)
    if start_dist is None:
        start[0] = 1.0
    else:
        start[: len(start_dist)] = start_dist
    counts = np.zeros((replicates, N), dtype=np.int64)
    for rep in range(replicates):
        rng = chain_rng(seed, rep)
        pos = _sample_start(start, rng)
        for _ in range(max_jumps):
            row = pos - 1
            cum = cum_rows[row]
            if len(cum) == 0:
                break
            u = rng.random()
            if u > cum[-1]:
                break  # jumped past the truncation, absorbed
            pos = int(targets_rows[row][np.searchsorted(cum, u, side="right")])
            counts[rep, pos - 1] += 1
        else:
            raise RuntimeError("embedded chain failed to absorb within the jump budget")
    visited = counts > 0
    nvis = visited.sum(axis=0)
    mean = np.full(N, np.nan)
    se = np.full(N, np.nan)
    for n in range(N):
        if nvis[n] > 0:
            vals = counts[visited[:, n], n].astype(float)
            mean[n] = vals.mean()
            se[n] = vals.std(ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else np.inf
    return VisitStats(
        levels=np.arange(1, N + 1),
        mean_visits=mean,
        se=se,
        p_visit=nvis / replicates,
        replicates=replicates,
    )


def explosion_tail_bound(spec: ModelSpec, level: int, tol: float = 1e-12) -> float:
    """Upper bound on the expected time spent above ``level``.

    Sums E[V_n | V_n > 0] / pi_n beyond the cap using the bulk visit count
    1 / drift of the increment walk; the terms decay like lambda**(-2n), so
    the series is summed to ``tol`` relative accuracy.
    """
    inc = increment_distribution(spec)
    if inc.drift <= 0.0:
        return math.inf
    visits = 1.0 / inc.drift
    total = 0.0
    n = level + 1
    while True:
        term = visits / spec.pi_n(n)
        total += term
        if term <= tol * max(total, 1e-300) or n > level + 10_000:
            break
        n += 1
    return total
