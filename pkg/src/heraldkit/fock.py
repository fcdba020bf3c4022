"""Fock-space numerics for phase-insensitive (diagonal) operators.

Conventions: quadratures are dimensionless with vacuum Wigner peak 2/pi, so
the identity operator has a flat Wigner density of 1/pi and
``Tr[A B] = pi * integral(W_A * W_B)``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import poisson

#: ceiling for cutoffs chosen by the adaptive rules
HARD_CAP = 400
#: ceiling for explicitly requested cutoffs (oracle checks use 500)
EXPLICIT_CAP = 1000
DEFAULT_TAIL_EPSILON = 1e-12

IDENTITY_WIGNER = 1.0 / math.pi


class PrecisionWarning(UserWarning):
    """A truncated series may not have converged to the requested accuracy."""


@dataclass(frozen=True)
class FockCutoff:
    """Highest retained Fock level and the tail bound used to choose it."""

    k_max: int
    tail_epsilon: float = DEFAULT_TAIL_EPSILON

    def __post_init__(self):
        if int(self.k_max) != self.k_max or self.k_max < 1:
            raise ValueError(f"k_max must be an integer >= 1, got {self.k_max}")
        if self.k_max > EXPLICIT_CAP:
            raise ValueError(f"k_max={self.k_max} exceeds the cap of {EXPLICIT_CAP}")
        if not 0.0 < self.tail_epsilon < 1.0:
            raise ValueError(f"tail_epsilon must lie in (0, 1), got {self.tail_epsilon}")
        object.__setattr__(self, "k_max", int(self.k_max))

    @property
    def dim(self) -> int:
        return self.k_max + 1

    @classmethod
    def for_squeezing(cls, lam: float, tail_epsilon: float = DEFAULT_TAIL_EPSILON) -> "FockCutoff":
        """Smallest k_max with ``lam**(2*k_max) < tail_epsilon``, capped at HARD_CAP."""
        if not 0.0 <= lam < 1.0:
            raise ValueError(f"lambda must lie in [0, 1), got {lam}")
        if lam == 0.0:
            return cls(1, tail_epsilon)
        k = math.floor(math.log(tail_epsilon) / (2.0 * math.log(lam))) + 1
        # guard against log rounding at the boundary
        while lam ** (2 * k) >= tail_epsilon:
            k += 1
        return cls(min(max(k, 1), HARD_CAP), tail_epsilon)

    @classmethod
    def for_poisson(cls, mu_max: float, tail_epsilon: float = DEFAULT_TAIL_EPSILON) -> "FockCutoff":
        """Smallest k_max whose Poisson(mu_max) tail mass beyond k_max is below tail_epsilon."""
        if mu_max < 0:
            raise ValueError(f"mean photon number must be >= 0, got {mu_max}")
        k = 1
        while k < HARD_CAP and poisson.sf(k, mu_max) >= tail_epsilon:
            k += 1
        return cls(k, tail_epsilon)


@dataclass(frozen=True, eq=False)
class DiagonalFockOperator:
    """Operator diagonal in the Fock basis.

    With ``complement=False`` the operator is ``sum_k coeffs[k] |k><k|``.
    With ``complement=True`` it is ``1 - sum_k coeffs[k] |k><k|``, which keeps
    non-trace-class elements such as a click detector's "on" outcome exact.
    """

    coeffs: np.ndarray
    complement: bool = False

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 1 or c.size < 1:
            raise ValueError("coeffs must be a non-empty 1-D vector")
        if not np.all(np.isfinite(c)):
            raise ValueError("coeffs must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def k_max(self) -> int:
        return self.coeffs.size - 1

    def diagonal(self) -> np.ndarray:
        """Matrix elements <k|A|k> for k = 0..k_max."""
        if self.complement:
            return 1.0 - self.coeffs
        return self.coeffs.copy()

    def truncated_trace(self) -> float:
        return float(self.diagonal().sum())

    def expectation(self, populations) -> float:
        """Tr[rho A] for a diagonal state given by its Fock populations."""
        p = np.asarray(populations, dtype=float)
        d = self.diagonal()
        n = min(p.size, d.size)
        return float(p[:n] @ d[:n])

    @classmethod
    def fock(cls, n: int, k_max: int) -> "DiagonalFockOperator":
        c = np.zeros(k_max + 1)
        c[n] = 1.0
        return cls(c)

    def check_density(self, atol: float = 1e-12) -> None:
        if self.complement:
            raise ValueError("a density operator cannot be complement-flagged")
        if np.any(self.coeffs < 0):
            raise ValueError("density populations must be non-negative")
        s = self.coeffs.sum()
        if abs(s - 1.0) > atol:
            raise ValueError(f"density populations sum to {s!r}, not 1")


def poisson_weights(mu: float, cutoff: FockCutoff | int) -> np.ndarray:
    """Photon-number distribution of a coherent state with mean ``mu``, truncated at the cutoff."""
    if mu < 0 or not math.isfinite(mu):
        raise ValueError(f"mean photon number must be finite and >= 0, got {mu}")
    k_max = cutoff.k_max if isinstance(cutoff, FockCutoff) else int(cutoff)
    return poisson.pmf(np.arange(k_max + 1), mu)


def poisson_matrix(mus, cutoff: FockCutoff | int) -> np.ndarray:
    """Rows of :func:`poisson_weights`, one per mean photon number."""
    mus = np.asarray(mus, dtype=float)
    if np.any(mus < 0):
        raise ValueError("mean photon numbers must be >= 0")
    k_max = cutoff.k_max if isinstance(cutoff, FockCutoff) else int(cutoff)
    return poisson.pmf(np.arange(k_max + 1)[None, :], mus[:, None])


def laguerre_table(k_max: int, u) -> np.ndarray:
    """L_0(u)..L_{k_max}(u) by the three-term recurrence; shape ``(k_max+1,) + shape(u)``."""
    u = np.asarray(u, dtype=float)
    out = np.empty((k_max + 1,) + u.shape)
    out[0] = 1.0
    if k_max >= 1:
        out[1] = 1.0 - u
    for k in range(1, k_max):
        out[k + 1] = ((2 * k + 1 - u) * out[k] - k * out[k - 1]) / (k + 1)
    return out


def laguerre_eval(k: int, u):
    """Laguerre polynomial L_k(u)."""
    if k < 0 or k > EXPLICIT_CAP:
        raise ValueError(f"degree must be in [0, {EXPLICIT_CAP}], got {k}")
    val = laguerre_table(k, u)[k]
    return float(val) if val.ndim == 0 else val


def wigner_fock_table(k_max: int, r) -> np.ndarray:
    """Radial Wigner functions W_0(r)..W_{k_max}(r) of the Fock states."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radial coordinate must be >= 0")
    r2 = r * r
    lag = laguerre_table(k_max, 4.0 * r2)
    sign = np.where(np.arange(k_max + 1) % 2 == 0, 1.0, -1.0)
    sign = sign.reshape((-1,) + (1,) * r.ndim)
    return (2.0 / math.pi) * sign * np.exp(-2.0 * r2) * lag


def wigner_fock_radial(k: int, r):
    """W_k(r) = (2/pi) (-1)^k exp(-2 r^2) L_k(4 r^2)."""
    val = wigner_fock_table(k, r)[k]
    return float(val) if val.ndim == 0 else val


def _tail_converged(coeffs: np.ndarray, rtol: float = 1e-10) -> bool:
    return abs(coeffs[-1]) <= rtol * max(np.abs(coeffs).max(), 1.0)


def wigner_diagonal(op: DiagonalFockOperator, r):
    """Radial Wigner function of a diagonal operator.

    Complement-flagged operators evaluate to ``1/pi - sum_k c_k W_k(r)``; the
    subtracted series must decay geometrically. A :class:`PrecisionWarning`
    is issued when the truncated tail is not negligible.
    """
    if op.complement and not _tail_converged(op.coeffs):
        warnings.warn(
            f"subtracted series has not decayed at k_max={op.k_max} "
            f"(last coefficient {op.coeffs[-1]:.3g}); Wigner values are cutoff-dependent",
            PrecisionWarning,
            stacklevel=2,
        )
    table = wigner_fock_table(op.k_max, r)
    series = np.tensordot(op.coeffs, table, axes=(0, 0))
    val = IDENTITY_WIGNER - series if op.complement else series
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class WignerSample:
    r: float
    value: float


def wigner_profile(op: DiagonalFockOperator, r_values) -> list[WignerSample]:
    r_values = np.asarray(r_values, dtype=float)
    values = np.atleast_1d(wigner_diagonal(op, r_values))
    return [WignerSample(float(r), float(v)) for r, v in zip(r_values, values)]
