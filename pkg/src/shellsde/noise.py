"""Aliased Brownian increment generation for shell-model simulations.

One time step consumes a slab of Gaussian increments indexed by
(independent channel, shell window, component).  Only one representative
per interaction pair carries fresh randomness; the partner channel reads
the identical values, which is exactly the aliasing that makes the noise
conservative.

Slabs are generated from a counter-style key (seed, stream, step) through
``numpy``'s SeedSequence, so ensembles are reproducible and can be split
across workers without shared state.  Increments, not path values, are the
primitive: integrators only ever consume increments.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .algebra import ModelSpec

__all__ = [
    "MAX_SHELLS",
    "slab_rng",
    "sample_slab",
    "NoiseSlab",
    "goy_noise_bridge",
    "goy_noise_bridge_pair",
    "goy_inverse_bridge",
]

# Guard against overflow of lambda**(2N) scales downstream.
MAX_SHELLS = 64


def slab_rng(seed: int, stream: int = 0, step: int = 0) -> np.random.Generator:
    """Generator keyed by (seed, stream, step); pure function of its key."""
    if seed < 0 or stream < 0 or step < 0:
        raise ValueError("seed, stream and step must be nonnegative")
    return np.random.default_rng(np.random.SeedSequence(entropy=[seed, stream, step]))


@dataclass(frozen=True, eq=False)
class NoiseSlab:
    """Gaussian increments for one time step over the active shell window.

    ``increments`` has shape (paths, n_star, window, d) with variance dt per
    component.  ``lookup`` resolves aliased channels: asking for a non
    representative id returns bit-identical values of its partner.
    """

    spec: ModelSpec
    dt: float
    lo: int
    increments: np.ndarray

    @property
    def hi(self) -> int:
        return self.lo + self.increments.shape[2] - 1

    @property
    def paths(self) -> int:
        return self.increments.shape[0]

    def _row(self, iid: str) -> int:
        star = self.spec.star_ids()
        if iid in self.spec.istar:
            return star.index(iid)
        return star.index(self.spec.pairing[iid])

    def lookup(self, iid: str, m: int) -> np.ndarray:
        """Increment of channel ``iid`` at shell index ``m`` (d-vector per path)."""
        if m < self.lo or m > self.hi:
            raise IndexError(f"shell index {m} outside slab window [{self.lo}, {self.hi}]")
        out = self.increments[:, self._row(iid), m - self.lo, :]
        return out[0] if self.paths == 1 else out


def sample_slab(
    spec: ModelSpec,
    N: int,
    dt: float,
    rng_state,
    paths: int = 1,
) -> NoiseSlab:
    """Draw one slab covering every index reachable from shells 1..N.

    ``rng_state`` may be an integer seed, a (seed, stream, step) tuple or a
    ready ``numpy`` Generator.  Identical states produce identical slabs.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if N < 1:
        raise ValueError("N must be >= 1")
    if N > MAX_SHELLS:
        raise ValueError(f"window overflow: N = {N} exceeds configured maximum {MAX_SHELLS}")
    if isinstance(rng_state, np.random.Generator):
        rng = rng_state
    elif isinstance(rng_state, (tuple, list)):
        rng = slab_rng(*rng_state)
    else:
        rng = slab_rng(int(rng_state))
    reach = spec.h_max_abs
    lo, hi = 1 - reach, N + reach
    shape = (paths, len(spec.istar), hi - lo + 1, spec.d)
    increments = rng.standard_normal(shape) * math.sqrt(dt)
    return NoiseSlab(spec=spec, dt=dt, lo=lo, increments=increments)


# ----------------------------------------------------------------------
# Complex noise bridge for the GOY construction
# ----------------------------------------------------------------------


def _goy_params(slab: NoiseSlab) -> tuple[float, float, float, float]:
    meta = slab.spec.meta
    if meta.get("preset") != "goy":
        raise ValueError("noise bridge requires a GOY model built by build_goy")
    a, c, lam = float(meta["a"]), float(meta["c"]), slab.spec.lam
    return a, c / lam, lam, math.hypot(a, c / lam)


def goy_noise_bridge(slab: NoiseSlab, n: int) -> complex:
    """Complex increment dw_n driving the complex-coordinate GOY equation.

    Combines the real channels at shell indices n+2 and n-1 so that the
    complex simulation and the real general-model simulation share their
    randomness.  Real and imaginary parts each have variance dt.
    """
    a, p, _, s = _goy_params(slab)
    w1 = slab.lookup("1", n + 2)
    w2 = slab.lookup("2", n - 1)
    re = (a * w1[..., 0] - p * w2[..., 0]) / s
    im = -(a * w1[..., 1] - p * w2[..., 1]) / s
    return re + 1j * im


def goy_noise_bridge_pair(slab: NoiseSlab, n: int) -> tuple[complex, complex]:
    """dw_n together with the orthogonal complement channel dw~_n."""
    a, p, _, s = _goy_params(slab)
    w1 = slab.lookup("1", n + 2)
    w2 = slab.lookup("2", n - 1)
    dw = (a * w1[..., 0] - p * w2[..., 0]) / s - 1j * (a * w1[..., 1] - p * w2[..., 1]) / s
    dwt = (p * w1[..., 0] + a * w2[..., 0]) / s - 1j * (p * w1[..., 1] + a * w2[..., 1]) / s
    return dw, dwt


def goy_inverse_bridge(spec: ModelSpec, n: int, dw: complex, dw_tilde: complex) -> dict[tuple[str, int], np.ndarray]:
    """Rebuild the real channel increments at shells n+2 and n-1 from (dw, dw~).

    Inverse of :func:`goy_noise_bridge_pair`; the combining matrix is a
    rotation, so the round trip is exact on the spanned subspace.
    """
    meta = spec.meta
    if meta.get("preset") != "goy":
        raise ValueError("noise bridge requires a GOY model built by build_goy")
    a, p = float(meta["a"]), float(meta["c"]) / spec.lam
    s = math.hypot(a, p)
    w1 = np.array(
        [
            (a * dw.real + p * dw_tilde.real) / s,
            -(a * dw.imag + p * dw_tilde.imag) / s,
        ]
    )
    w2 = np.array(
        [
            (-p * dw.real + a * dw_tilde.real) / s,
            (p * dw.imag - a * dw_tilde.imag) / s,
        ]
    )
    return {("1", n + 2): w1, ("2", n - 1): w2}
