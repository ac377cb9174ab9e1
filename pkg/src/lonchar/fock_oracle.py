"""Exact small-scale Fock-space computations.

Everything here is brute force over photon-number states: multi-photon
amplitudes are permanents of row/column-repeated submatrices, and lossy
networks are handled by embedding them in a unitary on ``2M`` modes whose
extra modes start in vacuum and collect the lost photons.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .lon_core import LonError, check_subunitary, permanent, unitary_dilation
from .stats_analytic import SqueezeParam, log_multiplicity, record_probability

__all__ = [
    "MAX_MODES",
    "MAX_PHOTONS",
    "UnsupportedScaleError",
    "sector_states",
    "FockBasis",
    "FockDistribution",
    "transition_amplitude",
    "unitary_amplitude",
    "lossy_conditional_distribution",
    "no_loss_sector_distribution",
    "joint_distribution",
    "marginal_output_distribution",
    "conditional_A_state_moments",
    "sector_overlap",
]

MAX_MODES = 8
MAX_PHOTONS = 8

_LOG_FACT = np.array([math.lgamma(k + 1) for k in range(171)])


class UnsupportedScaleError(LonError):
    """Raised when a request exceeds the oracle's mode or photon caps."""


def _check_caps(modes: int, photons: int, max_photons: int = MAX_PHOTONS) -> None:
    if modes > MAX_MODES:
        raise UnsupportedScaleError(f"{modes} modes exceeds oracle cap {MAX_MODES}")
    if photons > max_photons:
        raise UnsupportedScaleError(f"{photons} photons exceeds oracle cap {max_photons}")


@lru_cache(maxsize=None)
def sector_states(modes: int, n: int) -> tuple[tuple[int, ...], ...]:
    """All count vectors of ``modes`` entries summing to ``n``, lexicographic descending."""
    if modes == 0:
        return ((),) if n == 0 else ()
    if modes == 1:
        return ((n,),)
    out = []
    for first in range(n, -1, -1):
        for rest in sector_states(modes - 1, n - first):
            out.append((first,) + rest)
    return tuple(out)


@dataclass(frozen=True)
class FockBasis:
    """Count vectors on ``modes`` modes with total photon number ``<= max_total``."""

    modes: int
    max_total: int
    states: tuple[tuple[int, ...], ...] = field(init=False, repr=False)
    index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        states = tuple(s for n in range(self.max_total + 1) for s in sector_states(self.modes, n))
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "index", {s: k for k, s in enumerate(states)})

    def __len__(self) -> int:
        return len(self.states)

    def lookup(self, k: int) -> tuple[int, ...]:
        return self.states[k]

    def position(self, state: Sequence[int]) -> int:
        return self.index[tuple(int(x) for x in state)]


@dataclass
class FockDistribution:
    """Probability table over enumerated count vectors.

    ``residual_mass`` is the probability carried by states that were not
    enumerated (truncation), so ``probs.sum() + residual_mass == 1``.
    """

    states: tuple[tuple[int, ...], ...]
    probs: np.ndarray
    residual_mass: float = 0.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        self._index = {s: k for k, s in enumerate(self.states)}

    def prob(self, state: Sequence[int]) -> float:
        k = self._index.get(tuple(int(x) for x in state))
        return 0.0 if k is None else float(self.probs[k])

    def as_dict(self) -> dict:
        return {s: float(p) for s, p in zip(self.states, self.probs)}

    def marginal(self, positions: Sequence[int]) -> "FockDistribution":
        """Marginal on the given coordinates of each state."""
        acc: dict = {}
        for s, p in zip(self.states, self.probs):
            key = tuple(s[k] for k in positions)
            acc[key] = acc.get(key, 0.0) + p
        keys = tuple(sorted(acc, key=lambda s: (sum(s), tuple(-x for x in s))))
        return FockDistribution(keys, np.array([acc[k] for k in keys]), self.residual_mass)

    def to_json(self) -> dict:
        return {
            "basis": [list(s) for s in self.states],
            "probs": [float(p) for p in self.probs],
            "residual": float(self.residual_mass),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "FockDistribution":
        return cls(tuple(tuple(s) for s in obj["basis"]), np.array(obj["probs"]), float(obj["residual"]))


def _repeat_index(counts: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(counts)), np.asarray(counts, dtype=int))


def _log_norm(counts: Iterable[int]) -> float:
    return float(sum(_LOG_FACT[c] for c in counts))


def transition_amplitude(mat, n_in: Sequence[int], n_out: Sequence[int]) -> complex:
    """Amplitude for input counts ``n_in`` (rows) to go to output counts ``n_out``
    (columns) under a linear map of creation operators; ``mat`` may be rectangular."""
    if sum(n_in) != sum(n_out):
        return 0j
    mat = np.asarray(mat, dtype=complex)
    sub = mat[np.ix_(_repeat_index(n_in), _repeat_index(n_out))]
    norm = math.exp(-0.5 * (_log_norm(n_in) + _log_norm(n_out)))
    return permanent(sub) * norm


def unitary_amplitude(U, n_in: Sequence[int], n_out: Sequence[int]) -> complex:
    """``<n_out| U |n_in>`` for the network with transfer matrix ``U``."""
    n_in = tuple(int(x) for x in n_in)
    n_out = tuple(int(x) for x in n_out)
    _check_caps(len(n_in), sum(n_in))
    return transition_amplitude(U, n_in, n_out)


def _output_probabilities(rows: np.ndarray, out_states, aux_states, log_in: float) -> np.ndarray:
    """Sum over auxiliary records of squared dilation amplitudes, per output state."""
    m = rows.shape[1] // 2
    probs = np.zeros(len(out_states))
    for k, n_b in enumerate(out_states):
        cols_b = _repeat_index(n_b)
        lb = _log_norm(n_b)
        aux = aux_states[sum(n_b)]
        acc = 0.0
        for n_aux in aux:
            cols = np.concatenate([cols_b, m + _repeat_index(n_aux)])
            amp = permanent(rows[:, cols])
            acc += (amp.real * amp.real + amp.imag * amp.imag) * math.exp(
                -(log_in + lb + _log_norm(n_aux))
            )
        probs[k] = acc
    return probs


def lossy_conditional_distribution(L, n_in: Sequence[int]) -> FockDistribution:
    """Output count distribution of the lossy network for a Fock input.

    The input enters the first ``M`` modes of the unitary dilation with the
    auxiliary modes in vacuum; squared amplitudes are summed over every
    auxiliary record that conserves the photon number.
    """
    L = check_subunitary(L)
    n_in = tuple(int(x) for x in n_in)
    m = L.shape[0]
    if len(n_in) != m:
        raise LonError(f"input has {len(n_in)} modes, network has {m}")
    n = sum(n_in)
    _check_caps(m, n)
    top = unitary_dilation(L).matrix[:m]
    rows = top[_repeat_index(n_in)]
    basis = FockBasis(m, n)
    aux_states = {k: sector_states(m, n - k) for k in range(n + 1)}
    probs = _output_probabilities(rows, basis.states, aux_states, _log_norm(n_in))
    return FockDistribution(basis.states, probs, max(0.0, 1.0 - float(probs.sum())))


def no_loss_sector_distribution(L, n_in: Sequence[int]) -> FockDistribution:
    """``|<n_out| K_0 |n_in>|^2`` on the photon-conserving sector.

    ``K_0`` is the no-photons-lost Kraus operator; its amplitudes are
    permanents of submatrices of ``L`` alone, so this path never touches the
    dilation.
    """
    L = check_subunitary(L)
    n_in = tuple(int(x) for x in n_in)
    n = sum(n_in)
    _check_caps(L.shape[0], n)
    states = sector_states(L.shape[0], n)
    probs = np.array([abs(transition_amplitude(L, n_in, s)) ** 2 for s in states])
    return FockDistribution(states, probs, max(0.0, 1.0 - float(probs.sum())))


def _joint_tables(sq: SqueezeParam, L, n_max: int):
    m = L.shape[0]
    _check_caps(m, n_max)
    for n_a in FockBasis(m, n_max).states:
        p_a = record_probability(sq, n_a)
        if p_a == 0.0:
            continue
        yield n_a, p_a, lossy_conditional_distribution(L, n_a)


def joint_distribution(sq, L, n_max: int) -> FockDistribution:
    """Truncated joint table of Alice's counts and Bob's counts.

    States are the concatenation ``n_A + n_B``; records with
    ``|n_A| > n_max`` are left in ``residual_mass``.
    """
    sq = sq if isinstance(sq, SqueezeParam) else SqueezeParam(float(sq))
    L = check_subunitary(L)
    states, probs = [], []
    for n_a, p_a, cond in _joint_tables(sq, L, n_max):
        for n_b, p in zip(cond.states, cond.probs):
            if p > 0.0:
                states.append(n_a + n_b)
                probs.append(p_a * p)
    probs = np.array(probs)
    return FockDistribution(tuple(states), probs, max(0.0, 1.0 - float(probs.sum())))


def marginal_output_distribution(sq, L, n_max: int) -> FockDistribution:
    """Bob's unconditional count distribution, summed over Alice records up to ``n_max``.

    Only Bob records with ``|n_B| <= n_max`` are enumerated; contributions
    from larger Alice records are missing and show up in ``residual_mass``.
    """
    sq = sq if isinstance(sq, SqueezeParam) else SqueezeParam(float(sq))
    L = check_subunitary(L)
    basis = FockBasis(L.shape[0], n_max)
    probs = np.zeros(len(basis))
    for _, p_a, cond in _joint_tables(sq, L, n_max):
        for n_b, p in zip(cond.states, cond.probs):
            probs[basis.index[n_b]] += p_a * p
    return FockDistribution(basis.states, probs, max(0.0, 1.0 - float(probs.sum())))


def _rising(n: int, k: int) -> float:
    out = 1.0
    for j in range(1, k + 1):
        out *= n + j
    return out


def conditional_A_state_moments(
    sq, L, condition: Sequence[int], orders: Sequence[Sequence[int]], n_max: int = MAX_PHOTONS
) -> dict:
    """Rising-factorial photocount moments of Alice's modes given Bob's no-count set.

    For each order vector ``k`` returns
    ``< prod_j (n_j + 1)(n_j + 2)...(n_j + k_j) >`` over Alice's counts,
    conditioned on every mode in ``condition`` of Bob's output registering
    zero photons. Computed from the truncated joint table; the key
    ``"truncation"`` holds the omitted Alice-record probability.
    """
    sq = sq if isinstance(sq, SqueezeParam) else SqueezeParam(float(sq))
    L = check_subunitary(L)
    cond_modes = [int(s) for s in condition]
    orders = [tuple(int(x) for x in k) for k in orders]
    weight = 0.0
    sums = np.zeros(len(orders))
    covered = 0.0
    for n_a, p_a, cond in _joint_tables(sq, L, n_max):
        covered += p_a
        mask = np.array([all(s[c] == 0 for c in cond_modes) for s in cond.states])
        w = p_a * float(cond.probs[mask].sum())
        weight += w
        for q, k in enumerate(orders):
            sums[q] += w * math.prod(_rising(n, kk) for n, kk in zip(n_a, k))
    out = {k: sums[q] / weight for q, k in enumerate(orders)}
    out["truncation"] = max(0.0, 1.0 - covered)
    return out


def sector_overlap(U, L, n: int) -> complex:
    """Brute-force ``Tr[rho_N U^dag K_0]`` with ``rho_N`` uniform on the ``n``-photon sector."""
    U = np.asarray(U, dtype=complex)
    L = check_subunitary(L)
    m = U.shape[0]
    _check_caps(m, n)
    states = sector_states(m, n)
    total = 0j
    for n_in, n_out in itertools.product(states, states):
        total += np.conj(transition_amplitude(U, n_in, n_out)) * transition_amplitude(L, n_in, n_out)
    return total / math.exp(log_multiplicity(n, m))
