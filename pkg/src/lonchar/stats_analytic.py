"""Closed-form photocount laws and conditional heterodyne Gaussians."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .lon_core import LonError, permanent

__all__ = [
    "SqueezeParam",
    "ConditionalGaussian",
    "MOMENT_ORDER_CAP",
    "log_multiplicity",
    "thermal_count_distribution",
    "record_probability",
    "single_photon_record_probability",
    "mode_lengths_sq",
    "no_count_probability",
    "per_mode_count_distribution",
    "conditional_covariance",
    "no_count_set_probability",
    "weak_squeezing_inverse",
    "gaussian_moment",
]

MOMENT_ORDER_CAP = 6


@dataclass(frozen=True)
class SqueezeParam:
    """Squeezing strength of the identical two-mode squeezed-vacuum sources.

    ``chi_sq`` is the squared (real) squeezing amplitude; each source half is
    thermal with mean photon number ``chi_sq / (1 - chi_sq)``.
    """

    chi_sq: float

    def __post_init__(self):
        if not (0.0 <= self.chi_sq < 1.0) or not math.isfinite(self.chi_sq):
            raise ValueError(f"chi_sq must lie in [0, 1), got {self.chi_sq}")

    @property
    def mean_photon(self) -> float:
        return self.chi_sq / (1.0 - self.chi_sq)

    @classmethod
    def from_mean_photon(cls, nbar: float) -> "SqueezeParam":
        return cls(nbar / (1.0 + nbar))

    @classmethod
    def from_rule(cls, modes: int, rule: str) -> "SqueezeParam":
        """``"inv-sqrt"`` gives ``1/sqrt(M)``; ``"rbs"`` gives ``1/(sqrt(M) + 1)``."""
        root = math.sqrt(modes)
        if rule == "inv-sqrt":
            return cls(1.0 / root)
        if rule == "rbs":
            return cls(1.0 / (root + 1.0))
        raise ValueError(f"unknown squeezing rule {rule!r}")


def _sq(sq) -> SqueezeParam:
    return sq if isinstance(sq, SqueezeParam) else SqueezeParam(float(sq))


def log_multiplicity(n: int, modes: int) -> float:
    """``log G(n, M)``, the log-dimension of the ``n``-photon sector."""
    return float(gammaln(n + modes) - gammaln(n + 1) - gammaln(modes))


def thermal_count_distribution(sq, modes: int, n_max: int) -> np.ndarray:
    """Probability of ``N = 0..n_max`` total photons in an ``M``-mode thermal state."""
    sq = _sq(sq)
    if n_max < 0:
        raise ValueError("n_max must be >= 0")
    out = np.zeros(n_max + 1)
    if sq.chi_sq == 0.0:
        out[0] = 1.0
        return out
    n = np.arange(n_max + 1)
    logp = (
        gammaln(n + modes) - gammaln(n + 1) - gammaln(modes)
        + modes * math.log1p(-sq.chi_sq)
        + n * math.log(sq.chi_sq)
    )
    return np.exp(logp)


def record_probability(sq, counts) -> float:
    """Probability of one specific count vector, ``(1-chi^2)^M chi^(2|n|)``."""
    sq = _sq(sq)
    counts = np.asarray(counts)
    total = int(counts.sum())
    if sq.chi_sq == 0.0:
        return 1.0 if total == 0 else 0.0
    return math.exp(counts.size * math.log1p(-sq.chi_sq) + total * math.log(sq.chi_sq))


def single_photon_record_probability(sq, modes: int, n: int) -> float:
    """Probability that exactly ``n`` modes register one photon and the rest none."""
    sq = _sq(sq)
    if n > modes or n < 0:
        return 0.0
    if sq.chi_sq == 0.0:
        return 1.0 if n == 0 else 0.0
    logc = gammaln(modes + 1) - gammaln(n + 1) - gammaln(modes - n + 1)
    return math.exp(logc + modes * math.log1p(-sq.chi_sq) + n * math.log(sq.chi_sq))


def mode_lengths_sq(L) -> np.ndarray:
    """Squared column lengths ``(L^H L)_ii``."""
    return np.sum(np.abs(np.asarray(L)) ** 2, axis=0)


def per_mode_count_distribution(sq, L, i: int, n) -> float | np.ndarray:
    """Thermal photocount law of output mode ``i`` (mean ``nbar * ell_i^2``)."""
    sq = _sq(sq)
    ell_sq = float(mode_lengths_sq(L)[i])
    denom = 1.0 - sq.chi_sq * (1.0 - ell_sq)
    ratio = sq.chi_sq * ell_sq / denom
    p0 = (1.0 - sq.chi_sq) / denom
    return p0 * np.power(ratio, n)


def no_count_probability(sq, L, i: int) -> float:
    return float(per_mode_count_distribution(sq, L, i, 0))


@dataclass(frozen=True)
class ConditionalGaussian:
    """Heterodyne Q-function of Alice's modes given Bob's no-count set.

    ``covariance[j, k] = <alpha_j conj(alpha_k)>``.
    """

    precision: np.ndarray
    covariance: np.ndarray
    condition_set: tuple[int, ...] = field(default=())

    @property
    def dim(self) -> int:
        return self.precision.shape[0]


def _condition_columns(L, condition_set: Sequence[int]) -> tuple[np.ndarray, tuple[int, ...]]:
    L = np.asarray(L, dtype=complex)
    idx = tuple(int(s) for s in condition_set)
    if not idx:
        raise LonError("condition set must be nonempty")
    if len(set(idx)) != len(idx):
        raise LonError(f"duplicate indices in condition set {idx}")
    m = L.shape[0]
    for s in idx:
        if not 0 <= s < m:
            raise LonError(f"mode index {s} out of range for {m} modes")
    return L[:, list(idx)], idx


def conditional_covariance(sq, L, condition_set: Sequence[int]) -> ConditionalGaussian:
    """Exact precision ``(1-chi^2) I + chi^2 X X^H`` and its inverse (Woodbury).

    ``X`` holds the columns of ``L`` for the conditioned output modes.
    """
    sq = _sq(sq)
    x, idx = _condition_columns(L, condition_set)
    m = x.shape[0]
    c = sq.chi_sq
    precision = (1.0 - c) * np.eye(m) + c * (x @ x.conj().T)
    kappa = c / (1.0 - c)
    small = np.eye(len(idx)) + kappa * (x.conj().T @ x)
    inner = np.linalg.solve(small, x.conj().T)
    covariance = (np.eye(m) - kappa * (x @ inner)) / (1.0 - c)
    precision = 0.5 * (precision + precision.conj().T)
    covariance = 0.5 * (covariance + covariance.conj().T)
    return ConditionalGaussian(precision, covariance, idx)


def no_count_set_probability(sq, L, condition_set: Sequence[int]) -> float:
    """Probability that every mode in ``condition_set`` registers no photons."""
    sq = _sq(sq)
    x, idx = _condition_columns(L, condition_set)
    kappa = sq.chi_sq / (1.0 - sq.chi_sq)
    # det S = (1-c)^M det(I_r + kappa X^H X)
    _, logdet = np.linalg.slogdet(np.eye(len(idx)) + kappa * (x.conj().T @ x))
    return math.exp(-logdet)


def weak_squeezing_inverse(sq, L, condition_set: Sequence[int], order: int = 2) -> np.ndarray:
    """Truncated power series for the conditional covariance.

    Kept as a cross-check of :func:`conditional_covariance`; error is
    ``O(chi^(2*order + 2))``.
    """
    sq = _sq(sq)
    x, _ = _condition_columns(L, condition_set)
    m = x.shape[0]
    c = sq.chi_sq
    p = x @ x.conj().T
    kappa = c / (1.0 - c)
    term = np.eye(m, dtype=complex)
    out = term.copy()
    for _ in range(order):
        term = -kappa * (term @ p)
        out = out + term
    return out / (1.0 - c)


def gaussian_moment(A, upper: Sequence[int], lower: Sequence[int]) -> complex:
    """``<alpha_j1 ... alpha_jn conj(alpha_k1) ... conj(alpha_kn)>`` for a
    zero-mean circular Gaussian with ``A[j, k] = <alpha_j conj(alpha_k)>``.

    The sum over pairings is the permanent of ``A[upper][:, lower]``.
    """
    if len(upper) != len(lower):
        raise LonError("upper and lower index lists must have equal length")
    n = len(upper)
    if n > MOMENT_ORDER_CAP:
        raise LonError(f"moment order {n} exceeds cap {MOMENT_ORDER_CAP}")
    A = np.asarray(A, dtype=complex)
    return permanent(A[np.ix_(list(upper), list(lower))])
