"""Transfer-matrix reconstruction from conditional heterodyne moments.

Alice's heterodyne outcomes are accumulated separately for every output
mode ``i`` of Bob's network, keeping only runs where that mode saw no
photons. Conditioned on such a run, Alice's amplitudes are circular
Gaussian with precision ``(1 - chi^2) I + chi^2 L_i L_i^H`` where ``L_i`` is
column ``i`` of ``L``, so second moments determine each column up to phase.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np
from scipy.optimize import least_squares

from .lon_core import LonError, matrix_from_json, matrix_to_json
from .stats_analytic import SqueezeParam, conditional_covariance

__all__ = [
    "N_BLOCKS",
    "MIN_CONDITIONED",
    "DIAG_FLOOR",
    "GAP_RATIO",
    "InsufficientDataError",
    "MomentAccumulator",
    "ConditionalMoments",
    "PairMoments",
    "AccumulatorSet",
    "ReconstructionResult",
    "ModeLosses",
    "CCMagnitudes",
    "PhaseEstimate",
    "exact_moments",
    "exact_pair_moments",
    "reconstruct_first_order",
    "reconstruct_exact",
    "estimate_mode_losses",
    "cc_magnitude_estimate",
    "cc_phase_difference_estimate",
]

N_BLOCKS = 20
MIN_CONDITIONED = 100
DIAG_FLOOR = 0.05
GAP_RATIO = 3.0


class InsufficientDataError(LonError):
    pass


def _sq(sq) -> SqueezeParam:
    return sq if isinstance(sq, SqueezeParam) else SqueezeParam(float(sq))


@dataclass(frozen=True)
class MomentAccumulator:
    """Read-only view of the sums kept for one target mode."""

    target_mode: int
    conditioned_runs: int
    sum_cross: np.ndarray  # sum of alpha_j conj(alpha_i)
    sum_abs: np.ndarray  # sum of |alpha_j|^2


@dataclass
class ConditionalMoments:
    """Per-target-mode conditional moments of Alice's amplitudes.

    ``covariances[i, j, k] = <alpha_j conj(alpha_k)>_i``. ``counts`` is
    ``None`` for exact (analytic) inputs.
    """

    mean_abs: np.ndarray  # (M, M): [i, j] = <|alpha_j|^2>_i
    mean_cross: np.ndarray  # (M, M): [i, j] = <alpha_j conj(alpha_i)>_i
    covariances: np.ndarray | None = None
    counts: np.ndarray | None = None

    @property
    def modes(self) -> int:
        return self.mean_abs.shape[0]


@dataclass
class PairMoments:
    """Intensity moments of Alice's amplitudes given no counts on a pair of Bob's modes."""

    pair: tuple[int, int]
    count: float
    mean_abs: np.ndarray  # <|alpha_j|^2>
    mean_abs2: np.ndarray  # <|alpha_j|^2 |alpha_k|^2>

    @property
    def intensity_covariance(self) -> np.ndarray:
        return self.mean_abs2 - np.outer(self.mean_abs, self.mean_abs)


def exact_moments(sq, L) -> ConditionalMoments:
    """Analytic conditional moments for every single-mode no-count condition."""
    sq = _sq(sq)
    L = np.asarray(L, dtype=complex)
    m = L.shape[0]
    cov = np.stack([conditional_covariance(sq, L, [i]).covariance for i in range(m)])
    idx = np.arange(m)
    mean_abs = np.real(cov[:, idx, idx])
    mean_cross = cov[idx, :, idx]
    return ConditionalMoments(mean_abs, mean_cross, cov, None)


def exact_pair_moments(sq, L, r: int, i: int) -> PairMoments:
    """Analytic intensity moments given no counts on both modes ``r`` and ``i``."""
    c = conditional_covariance(_sq(sq), L, [r, i]).covariance
    d = np.real(np.diagonal(c))
    return PairMoments((r, i), math.inf, d.copy(), np.outer(d, d) + np.abs(c) ** 2)


class AccumulatorSet:
    """Streaming sums for all target modes, split into jackknife blocks.

    Run ``k`` of the stream goes to block ``k % N_BLOCKS``. Merging two
    sets adds their sums, so the order in which shards are processed
    does not matter beyond floating-point summation order.

    Parameters
    ----------
    modes : int
    full : bool
        Keep the full ``M x M`` outer-product sums needed by the exact
        estimator (memory ``O(M^3)``).
    pairs : bool
        Keep fourth-moment sums for every pair of no-count modes (memory
        ``O(M^4)``), used by the CC phase estimator.
    """

    def __init__(self, modes: int, full: bool = True, pairs: bool = False, blocks: int = N_BLOCKS):
        self.modes = m = int(modes)
        self.full = full
        self.pairs = pairs
        self.blocks = b = blocks
        self.runs = np.zeros(b, dtype=np.int64)
        self.counts = np.zeros((b, m), dtype=np.int64)
        self.sum_cross = np.zeros((b, m, m), dtype=complex)
        self.sum_abs = np.zeros((b, m, m))
        self.sum_outer = np.zeros((b, m, m, m), dtype=complex) if full else None
        if pairs:
            self.pair_counts = np.zeros((b, m, m), dtype=np.int64)
            self.pair_abs = np.zeros((b, m, m, m))
            self.pair_abs2 = np.zeros((b, m, m, m, m))
        self.skipped_rbs = 0
        self._next_index = 0

    # --- accumulation -------------------------------------------------

    def accumulate(self, run, index: int | None = None) -> "AccumulatorSet":
        if run.kind != "characterization":
            self.skipped_rbs += 1
            if index is None:
                self._next_index += 1
            return self
        start = self._next_index if index is None else index
        self.accumulate_batch(run.alice_amplitudes[None, :], run.bob_counts[None, :], start)
        return self

    def accumulate_batch(self, alpha, bob, start: int | None = None) -> "AccumulatorSet":
        """Absorb ``T`` characterization runs with stream indices ``start .. start+T-1``."""
        alpha = np.asarray(alpha, dtype=complex)
        bob = np.asarray(bob)
        t, m = alpha.shape
        if m != self.modes or bob.shape != (t, m):
            raise LonError("batch shape does not match accumulator modes")
        start = self._next_index if start is None else int(start)
        self._next_index = max(self._next_index, start + t)
        if t == 0:
            return self
        onehot = np.zeros((self.blocks, t))
        onehot[(start + np.arange(t)) % self.blocks, np.arange(t)] = 1.0
        z = (bob == 0).astype(float)
        a2 = np.abs(alpha) ** 2
        self.runs += onehot.sum(axis=1).astype(np.int64)
        self.counts += np.rint(onehot @ z).astype(np.int64)
        # [i, j]: sum_t z_ti alpha_tj conj(alpha_ti)
        cross = (z * alpha.conj())[:, :, None] * alpha[:, None, :]
        self.sum_cross += (onehot @ cross.reshape(t, -1)).reshape(-1, m, m)
        self.sum_abs += (onehot @ (z[:, :, None] * a2[:, None, :]).reshape(t, -1)).reshape(-1, m, m)
        if self.full:
            outer = alpha[:, :, None] * alpha.conj()[:, None, :]
            prod = z[:, :, None, None] * outer[:, None, :, :]
            self.sum_outer += (onehot @ prod.reshape(t, -1)).reshape(-1, m, m, m)
        if self.pairs:
            zz = z[:, :, None] * z[:, None, :]
            self.pair_counts += np.rint(onehot @ zz.reshape(t, -1)).astype(np.int64).reshape(-1, m, m)
            p1 = zz[:, :, :, None] * a2[:, None, None, :]
            self.pair_abs += (onehot @ p1.reshape(t, -1)).reshape(-1, m, m, m)
            aa = a2[:, :, None] * a2[:, None, :]
            p2 = zz[:, :, :, None, None] * aa[:, None, None, :, :]
            self.pair_abs2 += (onehot @ p2.reshape(t, -1)).reshape(-1, m, m, m, m)
        return self

    def accumulate_stream(self, records: Iterable) -> "AccumulatorSet":
        for k, rec in enumerate(records, start=self._next_index):
            self.accumulate(rec, k)
        return self

    def merge(self, other: "AccumulatorSet") -> "AccumulatorSet":
        if (other.modes, other.full, other.pairs, other.blocks) != (self.modes, self.full, self.pairs, self.blocks):
            raise LonError("cannot merge accumulators with different layouts")
        out = AccumulatorSet(self.modes, self.full, self.pairs, self.blocks)
        for name in self._array_names():
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.skipped_rbs = self.skipped_rbs + other.skipped_rbs
        out._next_index = max(self._next_index, other._next_index)
        return out

    def _array_names(self) -> list[str]:
        names = ["runs", "counts", "sum_cross", "sum_abs"]
        if self.full:
            names.append("sum_outer")
        if self.pairs:
            names += ["pair_counts", "pair_abs", "pair_abs2"]
        return names

    # --- views -------------------------------------------------------

    @property
    def total_runs(self) -> int:
        return int(self.runs.sum())

    @property
    def conditioned_counts(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    def accumulator(self, i: int) -> MomentAccumulator:
        return MomentAccumulator(
            i, int(self.counts[:, i].sum()), self.sum_cross[:, i].sum(axis=0), self.sum_abs[:, i].sum(axis=0)
        )

    def _block_weights(self, leave_out: int | None) -> np.ndarray:
        w = np.ones(self.blocks)
        if leave_out is not None:
            w[leave_out] = 0.0
        return w

    def moments(self, leave_out: int | None = None) -> ConditionalMoments:
        """Conditional means, optionally with one jackknife block removed."""
        w = self._block_weights(leave_out)
        counts = np.tensordot(w, self.counts, axes=1)
        safe = np.where(counts > 0, counts, 1.0)
        mean_abs = np.tensordot(w, self.sum_abs, axes=1) / safe[:, None]
        mean_cross = np.tensordot(w, self.sum_cross, axes=1) / safe[:, None]
        cov = None
        if self.full:
            cov = np.tensordot(w, self.sum_outer, axes=1) / safe[:, None, None]
        return ConditionalMoments(mean_abs, mean_cross, cov, np.rint(counts).astype(np.int64))

    def pair_moments(self, r: int, i: int, leave_out: int | None = None) -> PairMoments:
        if not self.pairs:
            raise LonError("pair sums were not tracked; build the set with pairs=True")
        w = self._block_weights(leave_out)
        n = float(np.tensordot(w, self.pair_counts[:, r, i], axes=1))
        if n == 0:
            raise InsufficientDataError(f"no runs with zero counts on both modes {r} and {i}")
        mean_abs = np.tensordot(w, self.pair_abs[:, r, i], axes=1) / n
        mean_abs2 = np.tensordot(w, self.pair_abs2[:, r, i], axes=1) / n
        return PairMoments((r, i), n, mean_abs, mean_abs2)


def _as_moments(src) -> ConditionalMoments:
    if isinstance(src, ConditionalMoments):
        return src
    if isinstance(src, AccumulatorSet):
        return src.moments()
    raise TypeError(f"expected AccumulatorSet or ConditionalMoments, got {type(src).__name__}")


def _check_counts(mom: ConditionalMoments, min_conditioned: int) -> None:
    if mom.counts is None:
        return
    low = [i for i, c in enumerate(mom.counts) if c < min_conditioned]
    if low:
        i = low[0]
        raise InsufficientDataError(
            f"mode {i} has {int(mom.counts[i])} conditioned runs, need at least {min_conditioned}"
        )


@dataclass
class ReconstructionResult:
    estimate: np.ndarray
    sigma: np.ndarray
    conditioned_counts: np.ndarray | None
    method: str
    chi_sq: float
    flags: list = field(default_factory=list)
    jackknife_sigma: np.ndarray | None = None

    def to_json(self, **extra) -> dict:
        out = matrix_to_json(
            self.estimate,
            sigma=[[float(x) for x in row] for row in self.sigma],
            flags=list(self.flags),
            method=self.method,
            chi_sq=self.chi_sq,
            conditioned_counts=None if self.conditioned_counts is None else [int(c) for c in self.conditioned_counts],
        )
        if self.jackknife_sigma is not None:
            out["jackknife_sigma"] = [[float(x) for x in row] for row in self.jackknife_sigma]
        out.update(extra)
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ReconstructionResult":
        jk = obj.get("jackknife_sigma")
        counts = obj.get("conditioned_counts")
        return cls(
            matrix_from_json(obj, validate=False),
            np.asarray(obj["sigma"], dtype=float),
            None if counts is None else np.asarray(counts, dtype=np.int64),
            obj["method"],
            float(obj["chi_sq"]),
            list(obj.get("flags", [])),
            None if jk is None else np.asarray(jk, dtype=float),
        )


def _first_order_matrix(mom: ConditionalMoments, chi_sq: float, flags: list | None = None):
    m = mom.modes
    est = np.zeros((m, m), dtype=complex)
    diag = np.zeros(m)
    for i in range(m):
        rad = 1.0 - (mom.mean_abs[i, i] - 1.0) / chi_sq
        if rad < 0.0:
            rad = 0.0
            if flags is not None:
                flags.append(f"radicand-clamped:{i}")
        lii = math.sqrt(rad)
        diag[i] = lii
        if lii > 0.0:
            est[:, i] = -mom.mean_cross[i] / (chi_sq * lii)
        est[i, i] = lii
        if lii < DIAG_FLOOR and flags is not None:
            flags.append(f"ill-conditioned-column:{i}")
    return est, diag


def _exact_matrix(mom: ConditionalMoments, chi_sq: float, flags: list | None = None):
    if mom.covariances is None:
        raise LonError("exact reconstruction needs full covariance sums (full=True)")
    m = mom.modes
    est = np.zeros((m, m), dtype=complex)
    eye = np.eye(m)
    for i in range(m):
        cov = mom.covariances[i]
        cov = 0.5 * (cov + cov.conj().T)
        prec = np.linalg.inv(cov)
        b = (prec - (1.0 - chi_sq) * eye) / chi_sq
        b = 0.5 * (b + b.conj().T)
        w, v = np.linalg.eigh(b)
        lam = w[-1]
        col = math.sqrt(max(lam, 0.0)) * v[:, -1]
        if flags is not None:
            noise = 1e-12  # roundoff floor for exact inputs
            if mom.counts is not None and mom.counts[i] > 0:
                noise = 1.0 / (chi_sq * math.sqrt(mom.counts[i]))
            rest = float(np.max(np.abs(w[:-1]))) if m > 1 else 0.0
            if lam < GAP_RATIO * max(rest, noise):
                flags.append(f"degenerate-direction:{i}")
        d = col[i]
        if abs(d) > 0.0:
            col = col * (np.conj(d) / abs(d))
            col[i] = abs(d)
        elif flags is not None:
            flags.append(f"phase-unfixed:{i}")
        est[:, i] = col
    return est


def _jackknife(acc: AccumulatorSet, fn) -> np.ndarray:
    ests = np.stack([fn(acc.moments(leave_out=b)) for b in range(acc.blocks)])
    mean = ests.mean(axis=0)
    b = acc.blocks
    return np.sqrt((b - 1) / b * np.sum(np.abs(ests - mean) ** 2, axis=0))


def _formula_sigma(mom: ConditionalMoments, chi_sq: float, diag: np.ndarray | None = None) -> np.ndarray:
    m = mom.modes
    if mom.counts is None:
        return np.zeros((m, m))
    per_col = 1.0 / (chi_sq * np.sqrt(np.maximum(mom.counts, 1)))
    sigma = np.tile(per_col, (m, 1))
    if diag is not None:
        inflate = np.where(diag < DIAG_FLOOR, 1.0 / np.maximum(diag, 1e-12), 1.0)
        sigma = sigma * inflate[None, :]
    return sigma


def reconstruct_first_order(src, sq, min_conditioned: int = MIN_CONDITIONED, jackknife: bool = True) -> ReconstructionResult:
    """Leading-order estimator: diagonal from ``<|alpha_i|^2>_i``, off-diagonal
    from ``<alpha_j conj(alpha_i)>_i``. Carries an ``O(chi^2)`` bias."""
    sq = _sq(sq)
    c = sq.chi_sq
    if c == 0.0:
        raise LonError("characterization needs chi_sq > 0")
    mom = _as_moments(src)
    _check_counts(mom, min_conditioned)
    flags: list = []
    est, diag = _first_order_matrix(mom, c, flags)
    jk = None
    if jackknife and isinstance(src, AccumulatorSet):
        jk = _jackknife(src, lambda mm: _first_order_matrix(mm, c)[0])
    return ReconstructionResult(est, _formula_sigma(mom, c, diag), mom.counts, "first-order", c, flags, jk)


def reconstruct_exact(src, sq, min_conditioned: int = MIN_CONDITIONED, jackknife: bool = True) -> ReconstructionResult:
    """Invert each conditional covariance and take the rank-one part of
    ``(S_i - (1 - chi^2) I) / chi^2`` as ``L_i L_i^H``."""
    sq = _sq(sq)
    c = sq.chi_sq
    if c == 0.0:
        raise LonError("characterization needs chi_sq > 0")
    mom = _as_moments(src)
    _check_counts(mom, min_conditioned)
    flags: list = []
    est = _exact_matrix(mom, c, flags)
    jk = None
    if jackknife and isinstance(src, AccumulatorSet):
        jk = _jackknife(src, lambda mm: _exact_matrix(mm, c))
    return ReconstructionResult(est, _formula_sigma(mom, c), mom.counts, "exact-inversion", c, flags, jk)


@dataclass
class ModeLosses:
    ell_sq: np.ndarray
    sigma: np.ndarray
    loss: float
    runs: int


def estimate_mode_losses(counts, sq) -> ModeLosses:
    """``ell_i^2`` from Bob's mean counts over all runs, ``mean(n_i) / nbar``.

    Per-mode counts are thermal with mean ``nbar ell_i^2``, so the standard
    error uses the thermal variance ``mu (1 + mu)``.
    """
    sq = _sq(sq)
    counts = np.asarray(counts, dtype=float)
    if counts.ndim != 2 or counts.shape[0] == 0:
        raise LonError("count stream must be a nonempty (T, M) array")
    nbar = sq.mean_photon
    if nbar == 0.0:
        raise LonError("mode losses are unobservable at chi_sq = 0")
    t = counts.shape[0]
    mu = counts.mean(axis=0)
    ell_sq = mu / nbar
    sigma = np.sqrt(mu * (1.0 + mu) / t) / nbar
    return ModeLosses(ell_sq, sigma, float(1.0 - ell_sq.mean()), t)


@dataclass
class CCMagnitudes:
    magnitudes: np.ndarray  # [j, i] = |L_ji|
    sigma: np.ndarray | None
    method: str
    flags: list = field(default_factory=list)


def _cc_magnitudes(mom: ConditionalMoments, chi_sq: float, exact: bool) -> np.ndarray:
    m = mom.modes
    out = np.zeros((m, m))
    for i in range(m):
        mj = mom.mean_abs[i]
        if not exact:
            out[:, i] = np.sqrt(np.clip((1.0 + chi_sq - mj) / chi_sq, 0.0, None))
            continue
        cj = np.clip(1.0 - (1.0 - chi_sq) * mj, 0.0, None)
        s = min(float(cj.sum()), 1.0 - 1e-12)
        ell_sq = s * (1.0 - chi_sq) / (chi_sq * (1.0 - s))
        d = 1.0 - chi_sq + chi_sq * ell_sq
        out[:, i] = np.sqrt(cj * d / chi_sq)
    return out


def cc_magnitude_estimate(src, sq, exact: bool = False, min_conditioned: int = MIN_CONDITIONED) -> CCMagnitudes:
    """``|L_ji|`` from the phase-insensitive moments ``<|alpha_j|^2>_i``.

    The first-order form is ``(1 + chi^2 - <|alpha_j|^2>_i) / chi^2``. With
    ``exact`` the same moments are inverted through the exact rank-one
    covariance, which removes the ``O(chi^2)`` bias.
    """
    sq = _sq(sq)
    c = sq.chi_sq
    if c == 0.0:
        raise LonError("characterization needs chi_sq > 0")
    mom = _as_moments(src)
    _check_counts(mom, min_conditioned)
    mags = _cc_magnitudes(mom, c, exact)
    flags = [f"ill-conditioned-column:{i}" for i in range(mom.modes) if mags[i, i] < DIAG_FLOOR]
    sigma = None
    if isinstance(src, AccumulatorSet):
        sigma = _jackknife(src, lambda mm: _cc_magnitudes(mm, c, exact))
    return CCMagnitudes(mags, sigma, "exact" if exact else "first-order", flags)


@dataclass
class PhaseEstimate:
    """Phase information on column ``i`` relative to reference column ``r``.

    ``cos[j, k]`` estimates ``cos(theta_ji - theta_ki)``; column ``r`` of it
    is ``cos(theta_ji)`` because ``L_ri`` is real by convention. ``phases``
    is filled by the refined fit and is defined up to an overall sign.
    """

    pair: tuple[int, int]
    cos: np.ndarray
    unresolved: list
    phases: np.ndarray | None = None
    cost: float | None = None

    @property
    def cos_ref(self) -> np.ndarray:
        return self.cos[:, self.pair[0]]


def _pair_model(chi_sq: float, col_r: np.ndarray, col_i: np.ndarray) -> np.ndarray:
    """Exact ``|C_jk|^2`` for the two-column no-count set."""
    x = np.stack([col_r, col_i], axis=1)
    kappa = chi_sq / (1.0 - chi_sq)
    small = np.eye(2) + kappa * (x.conj().T @ x)
    c = (np.eye(x.shape[0]) - kappa * (x @ np.linalg.solve(small, x.conj().T))) / (1.0 - chi_sq)
    return np.abs(c) ** 2


def cc_phase_difference_estimate(
    pair_moments: PairMoments,
    sq,
    column_r,
    magnitudes_i,
    refine: bool = False,
    noise_floor: float = 1e-3,
    n_starts: int = 16,
) -> PhaseEstimate:
    """Relative phases of column ``i`` from intensity covariances.

    Uses ``cov(|alpha_j|^2, |alpha_k|^2) ~ chi^4 |L_jr L_kr^* + L_ji L_ki^*|^2``
    given no counts on modes ``r`` and ``i``, with column ``r`` real and
    nonnegative and ``L_ri`` real. With ``refine`` the phases are fitted to
    the exact covariance model by nonlinear least squares, which removes
    the ``O(chi^2)`` bias of the leading-order formula.
    """
    sq = _sq(sq)
    c = sq.chi_sq
    r, i = pair_moments.pair
    col_r = np.abs(np.asarray(column_r, dtype=complex))
    mag = np.abs(np.asarray(magnitudes_i, dtype=float))
    m = col_r.size
    cov = pair_moments.intensity_covariance
    a = np.outer(col_r, col_r)
    b = np.outer(mag, mag)
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = (cov / c**2 - a**2 - b**2) / (2.0 * a * b)
    cos = np.ones((m, m))
    unresolved = []
    for j, k in itertools.permutations(range(m), 2):
        if a[j, k] * b[j, k] < noise_floor or not np.isfinite(raw[j, k]):
            cos[j, k] = np.nan
            unresolved.append((j, k))
        else:
            cos[j, k] = float(np.clip(raw[j, k], -1.0, 1.0))
    if not refine:
        return PhaseEstimate((r, i), cos, unresolved)

    free = [j for j in range(m) if j != r]
    iu = [(j, k) for j in range(m) for k in range(j + 1, m)]
    target = np.array([cov[j, k] for j, k in iu]) / c**2

    def residual(theta):
        ph = np.zeros(m)
        ph[free] = theta
        model = _pair_model(c, col_r.astype(complex), mag * np.exp(1j * ph))
        return np.array([model[j, k] for j, k in iu]) / c**2 - target

    # theta = 0 is a stationary point of the even model, so starts stay off the real axis
    base = np.array([math.acos(x) if np.isfinite(x) else math.pi / 2 for x in cos[free, r]])
    starts = [base * np.array((1.0,) + signs) for signs in itertools.product((1.0, -1.0), repeat=max(len(free) - 1, 0))]
    starts = [np.clip(x, -math.pi + 0.1, math.pi - 0.1) for x in starts]
    starts = [np.where(np.abs(x) < 0.1, 0.1, x) for x in starts]
    rng = np.random.default_rng(0)
    starts += list(rng.uniform(-math.pi, math.pi, (n_starts, len(free))))
    best = None
    for x0 in starts:
        sol = least_squares(residual, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15)
        if best is None or sol.cost < best.cost:
            best = sol
    if best.x.size and best.x[0] < 0:
        best.x = -best.x  # fix the conjugation ambiguity
    ph = np.zeros(m)
    ph[free] = best.x
    ph = np.angle(np.exp(1j * ph))
    fitted = np.cos(ph[:, None] - ph[None, :])
    return PhaseEstimate((r, i), fitted, unresolved, ph, float(best.cost))
