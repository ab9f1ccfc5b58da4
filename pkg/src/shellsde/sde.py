"""Truncated SDE integrators for the nonlinear and auxiliary linear systems.

The truncation keeps shells 1..N and reads every other shell as zero.  The
quadratic drift correction at shell n always carries the full active-set
rate, so energy leaving through the top border is genuinely removed; the
second moments of the truncated linear system then solve the absorbing
forward equation produced by :mod:`shellsde.moments`, which is what the
triangulation relies on.

Three schemes are provided:

``em``
    Plain Euler-Maruyama.  Weak order one, unbiased as dt -> 0, but the
    quadratic rates grow like lambda**(2n), so it requires
    dt * pi_N <~ 0.1 and aborts paths on overflow.
``split``
    Strang splitting with the quadratic correction integrated exactly
    (per-shell matrix exponential) around an Euler-Maruyama transport and
    diffusion step.  Same weak order, but stable at any dt; the preferred
    scheme when the truncation includes stiff shells.
``conservative``
    Euler-Maruyama followed by projection back to the initial energy
    sphere.  Holds the ladder energy exactly, which is the discrete
    counterpart of the conservative Galerkin border choice.

Girsanov path weights are accumulated with left-point (Ito) evaluation of
the integrand, so the exponential density is an exact discrete martingale
for every adapted scheme.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .algebra import CoefficientTable, ModelSpec
from .noise import NoiseSlab, goy_noise_bridge, slab_rng

__all__ = [
    "TruncatedState",
    "PathWeight",
    "NumericalBlowupError",
    "bilinear_drift",
    "drift_nonlinear",
    "drift_linear",
    "diffusion_apply",
    "step_em",
    "step_split",
    "step_conservative",
    "accumulate_weight",
    "EnsembleStats",
    "run_ensemble",
    "goy_complex_em_step",
]

SCHEMES = ("em", "split", "conservative")
SYSTEMS = ("nonlinear", "linear")


class NumericalBlowupError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class TruncatedState:
    """Shell amplitudes X_1..X_N at time t, with the initial energy pinned."""

    N: int
    t: float
    x: np.ndarray  # (N, d)
    energy0: float = None  # type: ignore[assignment]

    def __post_init__(self):
        arr = np.array(self.x, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.shape[0] != self.N:
            raise ValueError(f"state has {arr.shape[0]} shells, expected N={self.N}")
        object.__setattr__(self, "x", arr)
        if self.energy0 is None:
            object.__setattr__(self, "energy0", float((arr * arr).sum()))

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def energy(self) -> float:
        return float((self.x * self.x).sum())


@dataclass(frozen=True)
class PathWeight:
    """Running Girsanov statistics: log integrand z and quadratic variation qv."""

    z: float = 0.0
    qv: float = 0.0

    def density(self) -> float:
        return math.exp(self.z - 0.5 * self.qv)


def make_state(spec: ModelSpec, N: int, x0, t: float = 0.0) -> TruncatedState:
    arr = np.zeros((N, spec.d))
    given = np.asarray(x0, dtype=float)
    if given.ndim == 1 and spec.d == 1:
        given = given[:, None]
    if given.ndim == 1 and spec.d > 1:
        raise ValueError("x0 must provide d components per shell")
    if given.shape[0] > N:
        raise ValueError("x0 support exceeds truncation level")
    arr[: given.shape[0], :] = given
    return TruncatedState(N=N, t=t, x=arr)


# ----------------------------------------------------------------------
# Vectorised kernels over a batch of paths; X has shape (P, N, d)
# ----------------------------------------------------------------------


def _transport_batch(table: CoefficientTable, X: np.ndarray) -> np.ndarray:
    P, N, d = X.shape
    out = np.zeros_like(X)
    for j in range(table.n_interactions):
        r, h = int(table.r[j]), int(table.h[j])
        nlo = max(1, 1 - r, 1 - h)
        nhi = min(N, N - r, N - h)
        if nlo > nhi:
            continue
        sl = slice(nlo - 1, nhi)
        Xr = X[:, nlo - 1 + r : nhi + r]
        Xh = X[:, nlo - 1 + h : nhi + h]
        term = np.einsum("abc,pnb,pnc->pna", table.B[j], Xr, Xh)
        out[:, sl] += table.keff[j, sl][None, :, None] * term
    return out


def _correction_batch(table: CoefficientTable, X: np.ndarray) -> np.ndarray:
    if table.identity_grams:
        return -table.gamma_diag[None, :, None] * X
    return -np.einsum("nab,pnb->pna", table.gamma, X)


def _diffusion_batch(table: CoefficientTable, X: np.ndarray, dW: np.ndarray, lo: int) -> np.ndarray:
    """Noise increment sum_i sigma * k_eff * B_i(X_{n+r_i}, dW_{i, n+h_i})."""
    P, N, d = X.shape
    sigma = table.spec.sigma
    out = np.zeros_like(X)
    for j in range(table.n_interactions):
        r, h = int(table.r[j]), int(table.h[j])
        nlo = max(1, 1 - r)
        nhi = min(N, N - r)
        if nlo > nhi:
            continue
        sl = slice(nlo - 1, nhi)
        Xr = X[:, nlo - 1 + r : nhi + r]
        Wj = dW[:, table.star_row[j], nlo + h - lo : nhi + h - lo + 1]
        term = np.einsum("abc,pnb,pnc->pna", table.B[j], Xr, Wj)
        out[:, sl] += sigma * table.keff[j, sl][None, :, None] * term
    return out


def _weight_increment(
    table: CoefficientTable, X: np.ndarray, dW: np.ndarray, lo: int, dt: float
) -> tuple[np.ndarray, np.ndarray]:
    """Per-path increments of the log integrand and its quadratic variation.

    Sums over the representative channels only; their increments are
    mutually independent, which the exponential martingale requires.
    """
    P, N, d = X.shape
    spec = table.spec
    zinc = np.zeros(P)
    qvinc = np.zeros(P)
    star = spec.star_ids()
    for row, iid in enumerate(star):
        h = spec.interaction(iid).h
        mlo = max(1, 1 + h)
        if mlo > N:
            continue
        Xm = X[:, mlo - 1 : N]
        Wm = dW[:, row, mlo - lo : N - lo + 1]
        zinc += (Xm * Wm).sum(axis=(1, 2)) / spec.sigma
        qvinc += (Xm * Xm).sum(axis=(1, 2)) * dt / spec.sigma**2
    return zinc, qvinc


def _half_damp_factors(table: CoefficientTable, dt: float):
    """exp(-gamma * dt / 2) per shell, scalar when every gram is the identity."""
    if table.identity_grams:
        return np.exp(-table.gamma_diag * dt / 2.0)
    out = np.empty_like(table.gamma)
    for n in range(table.N):
        w, V = np.linalg.eigh(table.gamma[n])
        out[n] = (V * np.exp(-w * dt / 2.0)) @ V.T
    return out


def _apply_damp(table: CoefficientTable, X: np.ndarray, fac) -> np.ndarray:
    if table.identity_grams:
        return fac[None, :, None] * X
    return np.einsum("nab,pnb->pna", fac, X)


def _step_batch(
    table: CoefficientTable,
    X: np.ndarray,
    dW: np.ndarray,
    lo: int,
    dt: float,
    which: str,
    scheme: str,
    energy0: Optional[np.ndarray] = None,
    half_fac=None,
) -> np.ndarray:
    nonlinear = which == "nonlinear"
    if scheme == "split":
        if half_fac is None:
            half_fac = _half_damp_factors(table, dt)
        X = _apply_damp(table, X, half_fac)
        incr = _diffusion_batch(table, X, dW, lo)
        if nonlinear:
            incr = incr + dt * _transport_batch(table, X)
        X = X + incr
        return _apply_damp(table, X, half_fac)
    drift = _correction_batch(table, X)
    if nonlinear:
        drift = drift + _transport_batch(table, X)
    Xn = X + dt * drift + _diffusion_batch(table, X, dW, lo)
    if scheme == "conservative":
        e = (Xn * Xn).sum(axis=(1, 2))
        target = energy0 if energy0 is not None else (X * X).sum(axis=(1, 2))
        with np.errstate(divide="ignore", invalid="ignore"):
            fac = np.sqrt(target / e)
        fac = np.where(e > 0.0, fac, 0.0)
        Xn = Xn * fac[:, None, None]
    return Xn


# ----------------------------------------------------------------------
# Single-path API
# ----------------------------------------------------------------------


def bilinear_drift(spec: ModelSpec, state: TruncatedState) -> np.ndarray:
    """Bilinear transport part of the nonlinear drift, no quadratic correction."""
    table = CoefficientTable(spec, state.N)
    return _transport_batch(table, state.x[None])[0]


def drift_nonlinear(spec: ModelSpec, state: TruncatedState) -> np.ndarray:
    """Per-shell drift of the nonlinear system (transport plus correction)."""
    table = CoefficientTable(spec, state.N)
    X = state.x[None]
    return (_transport_batch(table, X) + _correction_batch(table, X))[0]


def drift_linear(spec: ModelSpec, state: TruncatedState) -> np.ndarray:
    """Per-shell drift of the auxiliary linear system (correction only)."""
    table = CoefficientTable(spec, state.N)
    return _correction_batch(table, state.x[None])[0]


def diffusion_apply(spec: ModelSpec, state: TruncatedState, slab: NoiseSlab) -> np.ndarray:
    """Noise increment for one step with the given slab."""
    table = CoefficientTable(spec, state.N)
    dW = slab.increments
    if slab.paths != 1:
        raise ValueError("single-path API expects a one-path slab")
    return _diffusion_batch(table, state.x[None], dW, slab.lo)[0]


def _advance(spec, state, slab, which, scheme) -> TruncatedState:
    if which not in SYSTEMS:
        raise ValueError(f"unknown system {which!r}")
    table = CoefficientTable(spec, state.N)
    e0 = np.array([state.energy0])
    with np.errstate(over="ignore", invalid="ignore"):
        Xn = _step_batch(table, state.x[None], slab.increments, slab.lo, slab.dt, which, scheme, e0)
    if not np.all(np.isfinite(Xn)):
        worst = int(np.nanargmax(np.abs(state.x).max(axis=1))) + 1
        raise NumericalBlowupError(
            f"non-finite state after step at t={state.t + slab.dt:.6g} "
            f"(largest pre-step amplitude at shell {worst}); reduce dt or use scheme='split'"
        )
    return TruncatedState(N=state.N, t=state.t + slab.dt, x=Xn[0], energy0=state.energy0)


def step_em(spec: ModelSpec, state: TruncatedState, slab: NoiseSlab, which: str = "nonlinear") -> TruncatedState:
    """One Euler-Maruyama step; aborts with a diagnostic on overflow."""
    return _advance(spec, state, slab, which, "em")


def step_split(spec: ModelSpec, state: TruncatedState, slab: NoiseSlab, which: str = "nonlinear") -> TruncatedState:
    """One Strang split step with exact quadratic damping."""
    return _advance(spec, state, slab, which, "split")


def step_conservative(
    spec: ModelSpec, state: TruncatedState, slab: NoiseSlab, which: str = "nonlinear"
) -> TruncatedState:
    """Euler-Maruyama step projected back to the initial energy sphere."""
    return _advance(spec, state, slab, which, "conservative")


def accumulate_weight(
    weight: PathWeight,
    spec: ModelSpec,
    state: TruncatedState,
    slab: NoiseSlab,
    direction: str,
) -> PathWeight:
    """Advance the Girsanov ledger by one step using the pre-step state.

    ``direction='QtoP'`` accumulates the density turning linear-system
    statistics into nonlinear-system ones; ``'PtoQ'`` the reverse (the log
    integrand flips sign, the quadratic variation is shared).
    """
    if direction not in ("PtoQ", "QtoP"):
        raise ValueError("direction must be 'PtoQ' or 'QtoP'")
    table = CoefficientTable(spec, state.N)
    zinc, qvinc = _weight_increment(table, state.x[None], slab.increments, slab.lo, slab.dt)
    sign = 1.0 if direction == "QtoP" else -1.0
    return PathWeight(z=weight.z + sign * float(zinc[0]), qv=weight.qv + float(qvinc[0]))


# ----------------------------------------------------------------------
# Ensemble runner
# ----------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    """Second-moment and energy statistics of an ensemble run.

    ``mean_sq[t, n]`` estimates the expected squared amplitude of shell
    n+1 at ``times[t]`` (weighted by the Girsanov density when a direction
    was requested), with ``se_sq`` the matching standard errors.  ``ess``
    is the effective sample size per record time.
    """

    times: np.ndarray
    mean_sq: np.ndarray
    se_sq: np.ndarray
    energy_mean: np.ndarray
    energy_se: np.ndarray
    ess: np.ndarray
    weight_mean: np.ndarray
    weight_se: np.ndarray
    qv_max: np.ndarray
    paths: int
    aborted: int
    weighted: bool


def _record_steps(record_times: Sequence[float], dt: float, nsteps: int) -> list[int]:
    steps = []
    for t in record_times:
        k = int(round(t / dt))
        if abs(k * dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"record time {t} is not a multiple of dt={dt}")
        if not 0 <= k <= nsteps:
            raise ValueError(f"record time {t} outside horizon")
        steps.append(k)
    return steps


def run_ensemble(
    spec: ModelSpec,
    x0,
    N: int,
    dt: float,
    T: float,
    paths: int,
    which: str = "linear",
    scheme: str = "em",
    seed: int = 0,
    record_times: Optional[Sequence[float]] = None,
    weight_direction: Optional[str] = None,
    block_size: int = 8192,
    threads: int = 1,
) -> EnsembleStats:
    """Monte Carlo ensemble of truncated-system paths.

    Paths are organised in blocks; the slab of block b at step k is a pure
    function of (seed, b, k), so results are independent of scheduling and
    reproducible for a fixed block size.  Failed paths are frozen, excluded
    from the statistics and reported in ``aborted``.
    """
    if which not in SYSTEMS:
        raise ValueError(f"unknown system {which!r}")
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    if weight_direction not in (None, "PtoQ", "QtoP"):
        raise ValueError("weight_direction must be None, 'PtoQ' or 'QtoP'")
    nsteps = int(round(T / dt))
    if abs(nsteps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("horizon must be a multiple of dt")
    if record_times is None:
        record_times = [T]
    rec_steps = _record_steps(record_times, dt, nsteps)
    rec_index = {}
    for idx, k in enumerate(rec_steps):
        rec_index.setdefault(k, []).append(idx)

    table = CoefficientTable(spec, N)
    x0arr = make_state(spec, N, x0).x
    d = spec.d
    reach = spec.h_max_abs
    lo = 1 - reach
    window = N + reach - lo + 1
    nstar = len(spec.istar)
    half_fac = _half_damp_factors(table, dt) if scheme == "split" else None
    weighted = weight_direction is not None
    sign = 1.0 if weight_direction == "QtoP" else -1.0

    nrec = len(rec_steps)
    sums = {
        "S0": np.zeros(nrec),
        "S1": np.zeros((nrec, N)),
        "T0": np.zeros(nrec),
        "T1": np.zeros((nrec, N)),
        "T2": np.zeros((nrec, N)),
        "E1": np.zeros(nrec),
        "ET1": np.zeros(nrec),
        "ET2": np.zeros(nrec),
        "QVMAX": np.zeros(nrec),
    }
    aborted = 0

    blocks = [
        (b, min(block_size, paths - b * block_size))
        for b in range((paths + block_size - 1) // block_size)
    ]

    def run_block(b: int, P: int):
        X = np.tile(x0arr[None], (P, 1, 1))
        alive = np.ones(P, dtype=bool)
        z = np.zeros(P)
        qv = np.zeros(P)
        e0 = np.full(P, float((x0arr * x0arr).sum()))
        partial = {k: np.zeros_like(v) for k, v in sums.items()}

        def record(idx_list):
            vals = (X * X).sum(axis=2)  # (P, N)
            energy = vals.sum(axis=1)
            if weighted:
                with np.errstate(over="ignore"):
                    w = np.where(alive, np.exp(z - 0.5 * qv), 0.0)
                w = np.where(np.isfinite(w), w, 0.0)
            else:
                w = alive.astype(float)
            w2 = w * w
            qv_alive = float(qv[alive].max()) if alive.any() else 0.0
            for idx in idx_list:
                partial["S0"][idx] += w.sum()
                partial["S1"][idx] += w @ vals
                partial["T0"][idx] += w2.sum()
                partial["T1"][idx] += w2 @ vals
                partial["T2"][idx] += w2 @ (vals * vals)
                partial["E1"][idx] += w @ energy
                partial["ET1"][idx] += w2 @ energy
                partial["ET2"][idx] += w2 @ (energy * energy)
                partial["QVMAX"][idx] = max(partial["QVMAX"][idx], qv_alive)

        if 0 in rec_index:
            record(rec_index[0])
        for k in range(nsteps):
            dW = slab_rng(seed, b, k).standard_normal((P, nstar, window, d)) * math.sqrt(dt)
            with np.errstate(over="ignore", invalid="ignore"):
                if weighted:
                    zinc, qvinc = _weight_increment(table, X, dW, lo, dt)
                    z = z + sign * zinc
                    qv = qv + qvinc
                X = _step_batch(table, X, dW, lo, dt, which, scheme, e0, half_fac)
            ok = np.isfinite(X).all(axis=(1, 2))
            if not ok.all():
                alive &= ok
                X[~alive] = 0.0
            if (k + 1) in rec_index:
                record(rec_index[k + 1])
        return partial, int(P - alive.sum())

    if threads > 1 and len(blocks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda arg: run_block(*arg), blocks))
    else:
        results = [run_block(b, P) for b, P in blocks]

    for partial, dead in results:
        aborted += dead
        for key in sums:
            if key == "QVMAX":
                sums[key] = np.maximum(sums[key], partial[key])
            else:
                sums[key] += partial[key]

    S0 = sums["S0"]
    if np.any(S0 <= 0.0):
        raise NumericalBlowupError(
            f"all {paths} paths aborted before some record time; reduce dt or use scheme='split'"
        )
    mean = sums["S1"] / S0[:, None]
    var_num = sums["T2"] - 2.0 * mean * sums["T1"] + mean**2 * sums["T0"][:, None]
    se = np.sqrt(np.maximum(var_num, 0.0)) / S0[:, None]
    emean = sums["E1"] / S0
    evar = sums["ET2"] - 2.0 * emean * sums["ET1"] + emean**2 * sums["T0"]
    ese = np.sqrt(np.maximum(evar, 0.0)) / S0
    ess = np.where(sums["T0"] > 0, S0**2 / sums["T0"], 0.0)
    wmean = S0 / paths
    wvar = np.maximum(sums["T0"] / paths - wmean**2, 0.0)
    wse = np.sqrt(wvar / paths)
    return EnsembleStats(
        times=np.array([k * dt for k in rec_steps]),
        mean_sq=mean,
        se_sq=se,
        energy_mean=emean,
        energy_se=ese,
        ess=ess,
        weight_mean=wmean,
        weight_se=wse,
        qv_max=sums["QVMAX"],
        paths=paths,
        aborted=aborted,
        weighted=weighted,
    )


# ----------------------------------------------------------------------
# Complex-coordinate GOY integrator (conjugacy checks)
# ----------------------------------------------------------------------


def goy_complex_em_step(u: np.ndarray, spec: ModelSpec, slab: NoiseSlab) -> np.ndarray:
    """One Euler-Maruyama step of the complex-coordinate GOY recursion.

    ``u`` holds shells 1..N as complex numbers; shells outside are read as
    zero and the geometric factor lambda**m is cut to zero for m <= 0.  The
    quadratic damping coefficient is sigma_t**2 * (lam_n**2 + lam_{n-1}**2),
    the unique choice that balances the noise quadratic variation shell by
    shell (so the ladder energy is a martingale) and matches the real-form
    integrator under the complex-to-real embedding.
    """
    meta = spec.meta
    if meta.get("preset") != "goy":
        raise ValueError("goy_complex_em_step requires a GOY model built by build_goy")
    a, bb, c = float(meta["a"]), float(meta["b"]), float(meta["c"])
    st = float(meta["sigma_tilde"])
    lam = spec.lam
    N = u.shape[0]
    dt = slab.dt

    def lam_pow(m: int) -> float:
        return lam**m if m >= 1 else 0.0

    def uc(m: int) -> complex:
        return np.conj(u[m - 1]) if 1 <= m <= N else 0.0j

    dw = {m: goy_noise_bridge(slab, m) for m in range(0, N + 1)}
    out = np.empty_like(u)
    for n in range(1, N + 1):
        ln, ln1, ln2 = lam_pow(n), lam_pow(n - 1), lam_pow(n - 2)
        det = (
            1j * a * ln * uc(n + 1) * uc(n + 2)
            + 1j * bb * ln1 * uc(n - 1) * uc(n + 1)
            + 1j * c * ln2 * uc(n - 1) * uc(n - 2)
        )
        damp = st**2 * (ln**2 + ln1**2) * u[n - 1]
        noise = 1j * st * ln * uc(n + 1) * dw[n]
        if n >= 2:
            noise -= 1j * st * ln1 * uc(n - 1) * dw[n - 1]
        out[n - 1] = u[n - 1] + dt * (det - damp) + noise
    return out
