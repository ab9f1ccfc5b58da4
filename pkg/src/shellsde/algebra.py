"""Interaction algebra for stochastic inviscid shell models.

A shell model couples a ladder of d-dimensional amplitudes X_1, X_2, ...
through a finite set of local interactions.  Each interaction carries a
shell offset ``r`` (who transports), a noise offset ``h`` (which noise
channel drives it), a geometric coefficient ``k`` (the full coefficient at
shell n is lambda**n * k), and a bilinear map on R^d.  Energy exchange is
conservative because interactions come in pairs under an involution
``pairing``: paired coefficients cancel when the ladder is summed shell by
shell, and paired noise channels alias to the same Brownian motion.

This module defines the model container, validates the pairing algebra,
provides the GOY, Sabra and Novikov constructions, and implements the
quadratic (Ito) correction that the simulation engine and the moment flow
both consume.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "REL_TOL",
    "MalformedModelError",
    "IdentityGramError",
    "BilinearMap",
    "Interaction",
    "ModelSpec",
    "CheckResult",
    "ValidationReport",
    "validate_model",
    "build_goy",
    "build_sabra",
    "build_novikov",
    "ito_correction",
    "embed_complex",
    "lift_real",
    "CoefficientTable",
]

# Relative tolerance for coefficient identities.  All checked relations are
# products and powers of user inputs, so near machine precision is expected.
REL_TOL = 1e-12


class MalformedModelError(ValueError):
    """Structural defect (bad shapes, unknown ids, non-finite entries).

    Distinct from a semantic validation failure, which is reported through
    :class:`ValidationReport` instead of raised.
    """


class IdentityGramError(ValueError):
    """A consumer required every interaction gram matrix to be the identity."""


@dataclass(frozen=True, eq=False)
class BilinearMap:
    """Dense rank-3 array ``entries[a, b, c]`` representing B(u, v)_a = sum B[a,b,c] u_b v_c."""

    entries: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.entries, dtype=float)
        if arr.ndim != 3 or len(set(arr.shape)) != 1:
            raise MalformedModelError(f"bilinear map must be a (d,d,d) cube, got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise MalformedModelError("bilinear map dimension must be >= 1")
        if not np.all(np.isfinite(arr)):
            raise MalformedModelError("bilinear map entries must be finite")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "entries", arr)

    @property
    def d(self) -> int:
        return self.entries.shape[0]

    def apply(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        return np.einsum("abc,b,c->a", self.entries, np.asarray(u, float), np.asarray(v, float))

    def gram(self) -> np.ndarray:
        """B B^T with B read as a linear map from R^(d*d) to R^d."""
        return np.einsum("agd,bgd->ab", self.entries, self.entries)

    def swap_first_two(self) -> np.ndarray:
        """Entries with the output and first input slots exchanged."""
        return self.entries.transpose(1, 0, 2)


@dataclass(frozen=True, eq=False)
class Interaction:
    """One interaction term: offsets, geometric coefficient and bilinear map."""

    iid: str
    r: int
    h: int
    k: float
    B: BilinearMap

    def __post_init__(self):
        if not isinstance(self.iid, str) or not self.iid:
            raise MalformedModelError("interaction id must be a non-empty string")
        if int(self.r) != self.r or int(self.h) != self.h:
            raise MalformedModelError("offsets r, h must be integers")
        object.__setattr__(self, "r", int(self.r))
        object.__setattr__(self, "h", int(self.h))
        if not math.isfinite(self.k):
            raise MalformedModelError(f"coefficient k of interaction {self.iid!r} must be finite")


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full algebraic description of a shell model.

    ``pairing`` is the cancellation involution on interaction ids and
    ``istar`` one transversal of it; noise channels alias along the pairing
    (the channel of interaction i and of pairing[i] are the same Brownian
    motion).  Instances are immutable after construction and safe to share
    across parallel workers.
    """

    d: int
    lam: float
    sigma: float
    interactions: tuple[Interaction, ...]
    pairing: Mapping[str, str]
    istar: frozenset[str]
    meta: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "interactions", tuple(self.interactions))
        object.__setattr__(self, "pairing", dict(self.pairing))
        object.__setattr__(self, "istar", frozenset(self.istar))
        object.__setattr__(self, "meta", dict(self.meta))
        ids = [it.iid for it in self.interactions]
        if len(set(ids)) != len(ids):
            raise MalformedModelError("duplicate interaction ids")
        for it in self.interactions:
            if it.B.d != self.d:
                raise MalformedModelError(
                    f"interaction {it.iid!r} has bilinear dimension {it.B.d}, model has d={self.d}"
                )
        known = set(ids)
        for a, b in self.pairing.items():
            if a not in known or b not in known:
                raise MalformedModelError(f"pairing references unknown id {a!r} or {b!r}")
        if not self.istar <= known:
            raise MalformedModelError("istar references unknown ids")
        object.__setattr__(self, "_by_id", {it.iid: it for it in self.interactions})

    # -- basic lookups -------------------------------------------------

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(it.iid for it in self.interactions)

    def interaction(self, iid: str) -> Interaction:
        return self._by_id[iid]

    def partner(self, iid: str) -> str:
        return self.pairing[iid]

    @property
    def size(self) -> int:
        return len(self.interactions)

    @property
    def h_bar(self) -> int:
        return max(it.h for it in self.interactions)

    @property
    def h_max_abs(self) -> int:
        return max(abs(it.h) for it in self.interactions)

    @property
    def r_max_abs(self) -> int:
        return max(abs(it.r) for it in self.interactions)

    @property
    def n0(self) -> int:
        """Shell index from which every interaction is active."""
        lo = min(min(it.r for it in self.interactions), min(it.h for it in self.interactions), 0)
        return 1 - lo

    # -- effective coefficients ----------------------------------------

    def is_active(self, iid: str, n: int) -> bool:
        it = self._by_id[iid]
        return n >= 1 and n + it.r >= 1 and n + it.h >= 1

    def active_ids(self, n: int) -> tuple[str, ...]:
        return tuple(iid for iid in self.ids if self.is_active(iid, n))

    def k_eff(self, iid: str, n: int) -> float:
        """Coefficient of interaction ``iid`` at shell ``n`` (zero when inactive)."""
        if not self.is_active(iid, n):
            return 0.0
        return self._by_id[iid].k * self.lam**n

    def pi_n(self, n: int) -> float:
        """Total quadratic rate sigma**2 * sum_i k_eff(i, n)**2 at shell ``n``."""
        return self.sigma**2 * sum(self.k_eff(iid, n) ** 2 for iid in self.ids)

    def grams(self) -> dict[str, np.ndarray]:
        return {it.iid: it.B.gram() for it in self.interactions}

    def has_identity_grams(self, tol: float = REL_TOL) -> bool:
        eye = np.eye(self.d)
        return all(np.max(np.abs(g - eye)) <= tol * max(1.0, np.max(np.abs(g))) for g in self.grams().values())

    def star_ids(self) -> tuple[str, ...]:
        return tuple(sorted(self.istar))


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def accepted(self) -> bool:
        return all(c.passed for c in self.checks)

    def failed(self) -> tuple[CheckResult, ...]:
        return tuple(c for c in self.checks if not c.passed)

    def as_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
        }


def _rel_close(a: float, b: float, tol: float = REL_TOL) -> bool:
    scale = max(abs(a), abs(b), 1.0)
    return abs(a - b) <= tol * scale


def validate_model(spec: ModelSpec) -> ValidationReport:
    """Check the interaction algebra of ``spec`` and report each condition.

    Structural malformation raises :class:`MalformedModelError` at
    construction time; this function only judges the semantic conditions:
    finite even interaction set, no self interactions, geometric
    coefficients with lambda > 1 and sigma > 0, the involution pairing
    with its transversal, the four cancellation relations, and a
    nonnegative maximal noise offset.
    """
    checks: list[CheckResult] = []

    n_inter = spec.size
    checks.append(CheckResult("finite_interaction_set", 0 < n_inter, f"|I| = {n_inter}"))
    checks.append(CheckResult("even_interaction_count", n_inter % 2 == 0, f"|I| = {n_inter}"))

    bad_r = [it.iid for it in spec.interactions if it.r == 0]
    checks.append(
        CheckResult(
            "no_self_interaction",
            not bad_r,
            "all r nonzero" if not bad_r else f"r = 0 for ids {bad_r}",
        )
    )

    checks.append(
        CheckResult(
            "exponential_coefficients",
            spec.lam > 1.0 and math.isfinite(spec.lam),
            f"lambda = {spec.lam}",
        )
    )
    checks.append(CheckResult("noise_amplitude", spec.sigma > 0.0, f"sigma = {spec.sigma}"))

    ids = set(spec.ids)
    tau = spec.pairing
    involution = set(tau.keys()) == ids and all(tau.get(tau.get(i, ""), None) == i for i in ids)
    checks.append(CheckResult("pairing_involution", involution, "tau defined on I with tau(tau(i)) = i"))
    fixed = [i for i in ids if tau.get(i) == i]
    checks.append(
        CheckResult(
            "pairing_no_fixed_point",
            involution and not fixed,
            "no fixed points" if not fixed else f"fixed points {fixed}",
        )
    )
    if involution:
        image = {tau[i] for i in spec.istar}
        partition = (spec.istar | image == ids) and not (spec.istar & image)
        checks.append(
            CheckResult(
                "istar_partition",
                partition,
                f"I* = {sorted(spec.istar)}",
            )
        )
    else:
        checks.append(CheckResult("istar_partition", False, "pairing is not an involution"))

    # The four pairing relations.  Offending ids are listed on failure.
    bad_k, bad_r2, bad_h, bad_b = [], [], [], []
    if involution:
        for it in spec.interactions:
            other = spec.interaction(tau[it.iid])
            if not _rel_close(other.k, -it.k * spec.lam ** (-it.r)):
                bad_k.append(it.iid)
            if other.r != -it.r:
                bad_r2.append(it.iid)
            if other.h != it.h - it.r:
                bad_h.append(it.iid)
            diff = np.max(np.abs(other.B.entries - it.B.swap_first_two()))
            scale = max(1.0, float(np.max(np.abs(it.B.entries))))
            if diff > REL_TOL * scale:
                bad_b.append(it.iid)
    ok = involution
    checks.append(
        CheckResult(
            "k_cancellation",
            ok and not bad_k,
            "k[tau(i)] = -k[i] * lambda**(-r[i])" if not bad_k else f"violated for ids {bad_k}",
        )
    )
    checks.append(
        CheckResult(
            "r_reversal",
            ok and not bad_r2,
            "r[tau(i)] = -r[i]" if not bad_r2 else f"violated for ids {bad_r2}",
        )
    )
    checks.append(
        CheckResult(
            "h_shift",
            ok and not bad_h,
            "h[tau(i)] = h[i] - r[i]" if not bad_h else f"violated for ids {bad_h}",
        )
    )
    checks.append(
        CheckResult(
            "bilinear_alias",
            ok and not bad_b,
            "<u, B[tau(i)](v, w)> = <v, B[i](u, w)>" if not bad_b else f"violated for ids {bad_b}",
        )
    )

    hbar = spec.h_bar
    checks.append(CheckResult("noise_reach", hbar >= 0, f"max h = {hbar}"))

    return ValidationReport(tuple(checks))


# ----------------------------------------------------------------------
# Preset constructions
# ----------------------------------------------------------------------

_SQRT2 = math.sqrt(2.0)


def _goy_bilinear() -> BilinearMap:
    # Real two-dimensional image of (v, z) -> i v* z*; totally symmetric.
    arr = np.zeros((2, 2, 2))
    for a in range(2):
        for b in range(2):
            for c in range(2):
                s = (a + 1) + (b + 1) + (c + 1)
                if s == 4:
                    arr[a, b, c] = 1.0 / _SQRT2
                elif s == 6:
                    arr[a, b, c] = -1.0 / _SQRT2
    return BilinearMap(arr)


def _sabra_bilinears() -> tuple[BilinearMap, BilinearMap, BilinearMap]:
    """Real images of (v,z) -> i v* z, (v,z) -> -i v z, (v,z) -> i v z*."""

    def make(neg: tuple[int, int, int]) -> BilinearMap:
        arr = np.zeros((2, 2, 2))
        for a in range(2):
            for b in range(2):
                for c in range(2):
                    if ((a + 1) + (b + 1) + (c + 1)) % 2:
                        continue
                    arr[a, b, c] = -1.0 / _SQRT2 if (a, b, c) == neg else 1.0 / _SQRT2
        return BilinearMap(arr)

    return make((0, 0, 1)), make((1, 0, 0)), make((0, 1, 0))


_GOY_TABLE = (
    # (id, r, h, k-prefactor builder)
    ("1", 1, 2),
    ("2", -1, -2),
    ("3", -1, 1),
    ("4", 1, -1),
)

_GOY_PAIRING = {"1": "3", "3": "1", "2": "4", "4": "2"}
_GOY_ISTAR = frozenset({"1", "2"})


def build_goy(a: float, b: float, c: float, lam: float, sigma_tilde: float) -> ModelSpec:
    """Two-dimensional real form of the stochastic GOY model.

    Requires a + b + c = 0, lambda > 1, sigma_tilde > 0 and (a, c) != (0, 0);
    the noise normalisation divides by sqrt(a**2 + c**2 / lambda**2).
    """
    if abs(a + b + c) > 1e-12 * max(1.0, abs(a), abs(b), abs(c)):
        raise ValueError(f"GOY requires a + b + c = 0, got {a + b + c!r}")
    if lam <= 1.0:
        raise ValueError("lambda must exceed 1")
    if sigma_tilde <= 0.0:
        raise ValueError("sigma_tilde must be positive")
    norm = math.hypot(a, c / lam)
    if norm == 0.0:
        raise ValueError("degenerate noise normalisation: need (a, c) != (0, 0)")
    B = _goy_bilinear()
    ks = {
        "1": _SQRT2 * a,
        "2": _SQRT2 * c / lam**2,
        "3": -_SQRT2 * a / lam,
        "4": -_SQRT2 * c / lam,
    }
    inters = tuple(Interaction(iid, r, h, ks[iid], B) for iid, r, h in _GOY_TABLE)
    return ModelSpec(
        d=2,
        lam=lam,
        sigma=sigma_tilde / norm,
        interactions=inters,
        pairing=dict(_GOY_PAIRING),
        istar=_GOY_ISTAR,
        meta={"preset": "goy", "a": a, "b": b, "c": c, "sigma_tilde": sigma_tilde},
    )


def build_sabra(
    a: float,
    b: float,
    c: float,
    lam: float,
    sigma1_tilde: float,
    sigma2_tilde: float,
) -> ModelSpec:
    """Two-dimensional real form of the stochastic Sabra model.

    The two channel amplitudes must satisfy sigma1/sigma2 = lambda * a / c;
    the common noise scale is sigma = sigma1/a = sigma2/(c/lambda).
    """
    if abs(a + b + c) > 1e-12 * max(1.0, abs(a), abs(b), abs(c)):
        raise ValueError(f"Sabra requires a + b + c = 0, got {a + b + c!r}")
    if lam <= 1.0:
        raise ValueError("lambda must exceed 1")
    if a == 0.0 or c == 0.0:
        raise ValueError("Sabra construction needs a != 0 and c != 0")
    if sigma1_tilde <= 0.0 or sigma2_tilde <= 0.0:
        raise ValueError("noise amplitudes must be positive")
    required = lam * a / c
    ratio = sigma1_tilde / sigma2_tilde
    if abs(ratio - required) > 1e-9 * max(1.0, abs(required)):
        raise ValueError(
            f"sigma1/sigma2 must equal lambda*a/c = {required!r}, got {ratio!r}"
        )
    sigma = sigma1_tilde / a
    if sigma <= 0.0:
        raise ValueError("resulting sigma must be positive (need a > 0)")
    B13, B2, B4 = _sabra_bilinears()
    bmap = {"1": B13, "3": B13, "2": B2, "4": B4}
    ks = {
        "1": _SQRT2 * a,
        "2": _SQRT2 * c / lam**2,
        "3": -_SQRT2 * a / lam,
        "4": -_SQRT2 * c / lam,
    }
    inters = tuple(Interaction(iid, r, h, ks[iid], bmap[iid]) for iid, r, h in _GOY_TABLE)
    return ModelSpec(
        d=2,
        lam=lam,
        sigma=sigma,
        interactions=inters,
        pairing=dict(_GOY_PAIRING),
        istar=_GOY_ISTAR,
        meta={
            "preset": "sabra",
            "a": a,
            "b": b,
            "c": c,
            "sigma1_tilde": sigma1_tilde,
            "sigma2_tilde": sigma2_tilde,
        },
    )


def build_novikov(lam: float, sigma: float) -> ModelSpec:
    """Scalar two-interaction ladder model (the simplest conservative pairing)."""
    if lam <= 1.0:
        raise ValueError("lambda must exceed 1")
    if sigma <= 0.0:
        raise ValueError("sigma must be positive")
    B = BilinearMap(np.ones((1, 1, 1)))
    inters = (
        Interaction("1", -1, -1, 1.0 / lam, B),
        Interaction("2", 1, 0, -1.0, B),
    )
    return ModelSpec(
        d=1,
        lam=lam,
        sigma=sigma,
        interactions=inters,
        pairing={"1": "2", "2": "1"},
        istar=frozenset({"1"}),
        meta={"preset": "novikov"},
    )


# ----------------------------------------------------------------------
# Quadratic correction and complex embedding
# ----------------------------------------------------------------------


def ito_correction(spec: ModelSpec, n: int) -> np.ndarray:
    """Drift matrix -(sigma**2 / 2) * sum_i k_eff(i, n)**2 * gram(B_i) at shell ``n``.

    Symmetric negative semidefinite; applied as matrix @ X_n.
    """
    if n < 1:
        raise ValueError("shell index must be >= 1")
    out = np.zeros((spec.d, spec.d))
    for it in spec.interactions:
        k = spec.k_eff(it.iid, n)
        if k != 0.0:
            out -= 0.5 * spec.sigma**2 * k * k * it.B.gram()
    return out


def embed_complex(u: Sequence[complex]) -> np.ndarray:
    """Map a complex sequence to (len, 2) real pairs (re, im); norm preserving."""
    arr = np.asarray(u, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1)


def lift_real(x: np.ndarray) -> np.ndarray:
    """Inverse of :func:`embed_complex`."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("expected trailing dimension 2")
    return arr[..., 0] + 1j * arr[..., 1]


# ----------------------------------------------------------------------
# Precomputed coefficient table for engines
# ----------------------------------------------------------------------


class CoefficientTable:
    """Vectorised effective coefficients of ``spec`` on a truncation 1..N.

    Arrays are indexed by interaction position j and zero-based shell
    index.  ``keff[j, n-1]`` is zero outside the active set of shell n.
    ``gamma[n-1]`` is the positive quadratic rate matrix, so the drift
    correction is ``-gamma[n-1] @ X_n``.
    """

    def __init__(self, spec: ModelSpec, N: int):
        if N < 1:
            raise ValueError("truncation level must be >= 1")
        self.spec = spec
        self.N = N
        self.d = spec.d
        inter = spec.interactions
        self.r = np.array([it.r for it in inter], dtype=int)
        self.h = np.array([it.h for it in inter], dtype=int)
        self.B = np.stack([it.B.entries for it in inter])
        star = spec.star_ids()
        row = {iid: j for j, iid in enumerate(star)}
        self.star_ids = star
        self.star_row = np.array(
            [row[it.iid] if it.iid in spec.istar else row[spec.pairing[it.iid]] for it in inter],
            dtype=int,
        )
        ns = np.arange(1, N + 1)
        keff = np.zeros((len(inter), N))
        for j, it in enumerate(inter):
            active = (ns + it.r >= 1) & (ns + it.h >= 1)
            keff[j, active] = it.k * spec.lam ** ns[active].astype(float)
        if not np.all(np.isfinite(keff)):
            raise OverflowError("effective coefficients overflow at this truncation level")
        self.keff = keff
        grams = np.stack([it.B.gram() for it in inter])
        self.gamma = 0.5 * spec.sigma**2 * np.einsum("jn,jab->nab", keff**2, grams)
        self.pi = spec.sigma**2 * (keff**2).sum(axis=0)
        eye = np.eye(spec.d)
        self.identity_grams = all(np.max(np.abs(g - eye)) <= 1e-12 for g in grams)
        # scalar damping rates when every gram is the identity
        self.gamma_diag = 0.5 * spec.sigma**2 * (keff**2).sum(axis=0)

    @property
    def n_interactions(self) -> int:
        return len(self.r)
