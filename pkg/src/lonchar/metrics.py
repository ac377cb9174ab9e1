"""Fidelity and distance measures between an ideal and a lossy network."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .fock_oracle import FockDistribution
from .lon_core import LonError
from .stats_analytic import SqueezeParam, log_multiplicity, thermal_count_distribution

__all__ = [
    "InvalidDistributionError",
    "NetworkComparison",
    "ChainReport",
    "log_fidelity_bound",
    "fidelity_bound",
    "uniform_loss_fidelity",
    "tvd_bound",
    "entanglement_fidelity",
    "complete_homogeneous",
    "sector_value",
    "sector_fidelity",
    "truncated_sector_bound",
    "compare_networks",
    "distribution_distance",
    "inequality_chain_check",
    "sweep",
    "write_sweep_csv",
    "SWEEP_COLUMNS",
]

SWEEP_COLUMNS = ("M", "chi_sq", "t_sq", "fidelity", "tvd_bound", "ent_fidelity")


class InvalidDistributionError(LonError):
    pass


def _sq(sq) -> SqueezeParam:
    return sq if isinstance(sq, SqueezeParam) else SqueezeParam(float(sq))


def _pair(U, L) -> tuple[np.ndarray, np.ndarray]:
    U = np.asarray(U, dtype=complex)
    L = np.asarray(L, dtype=complex)
    if U.shape != L.shape or U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise LonError(f"mismatched network shapes {U.shape} and {L.shape}")
    return U, L


def log_fidelity_bound(sq, U, L) -> float:
    """``M log(1 - chi^2) - log|det(I - chi^2 L U^H)|``."""
    sq = _sq(sq)
    U, L = _pair(U, L)
    m = U.shape[0]
    c = sq.chi_sq
    sign, logdet = np.linalg.slogdet(np.eye(m) - c * (L @ U.conj().T))
    if sign == 0:
        raise LonError("singular I - chi^2 L U^H")
    return m * math.log1p(-c) - logdet


def fidelity_bound(sq, U, L) -> float:
    """Lower bound ``(1 - chi^2)^M / |det(I - chi^2 L U^H)|`` on the fidelity
    of Bob's output states for the ideal and the lossy network."""
    return min(1.0, math.exp(log_fidelity_bound(sq, U, L)))


def uniform_loss_fidelity(sq, modes: int, t_sq: float) -> float:
    """Closed form of :func:`fidelity_bound` for ``L = t U``."""
    c = _sq(sq).chi_sq
    t = math.sqrt(t_sq)
    return math.exp(modes * (math.log1p(-c) - math.log1p(-c * t)))


def _tvd_from_fidelity(f: float) -> float:
    return math.sqrt(max(0.0, 1.0 - f * f))


def tvd_bound(sq, U, L) -> float:
    return _tvd_from_fidelity(fidelity_bound(sq, U, L))


def entanglement_fidelity(sq, U, L) -> float:
    return fidelity_bound(sq, U, L) ** 2


def complete_homogeneous(a, n_max: int) -> np.ndarray:
    """``h_0 .. h_n_max`` of the eigenvalues of ``a`` via Newton's identities.

    ``N h_N = sum_{k=1..N} p_k h_{N-k}`` with power sums ``p_k = Tr a^k``.
    """
    a = np.asarray(a, dtype=complex)
    h = np.zeros(n_max + 1, dtype=complex)
    h[0] = 1.0
    p = np.zeros(n_max + 1, dtype=complex)
    power = np.eye(a.shape[0], dtype=complex)
    for k in range(1, n_max + 1):
        power = power @ a
        p[k] = np.trace(power)
        h[k] = np.dot(p[1 : k + 1], h[k - 1 :: -1]) / k
    return h


def _sector_parts(U, L, n: int) -> tuple[complex, float | None, int]:
    U, L = _pair(U, L)
    h = complex(complete_homogeneous(L @ U.conj().T, n)[n])
    m = U.shape[0]
    try:
        return h, float(math.comb(n + m - 1, n)), m
    except OverflowError:
        return h, None, m


def sector_value(U, L, n: int) -> complex:
    """Signed ``h_N(L U^H) / G(N, M)``, equal to ``Tr[rho_N U^H K_0]``."""
    h, g, m = _sector_parts(U, L, n)
    if g is None:
        return complex(np.exp(np.log(h) - log_multiplicity(n, m)))
    return h / g


def sector_fidelity(U, L, n: int) -> float:
    """Fidelity bound restricted to the ``N``-photon sector."""
    h, g, m = _sector_parts(U, L, n)
    if g is None:
        return float(np.exp(np.log(abs(h)) - log_multiplicity(n, m))) if h != 0 else 0.0
    return abs(h) / g


def truncated_sector_bound(sq, U, L, n_max: int, normalize: bool = True) -> float:
    """``sum_{N<=n_max} P_Q(N) |h_N| / G(N, M)``, optionally divided by ``P_Q(N <= n_max)``.

    Each sector term lower-bounds the classical fidelity of that sector,
    so this is the bound matching a table truncated at ``n_max`` photons.
    """
    U, L = _pair(U, L)
    pq = thermal_count_distribution(_sq(sq), U.shape[0], n_max)
    h = np.abs(complete_homogeneous(L @ U.conj().T, n_max))
    g = np.exp([log_multiplicity(n, U.shape[0]) for n in range(n_max + 1)])
    total = float(np.sum(pq * h / g))
    return total / float(pq.sum()) if normalize else total


@dataclass
class NetworkComparison:
    fidelity: float
    tvd_bound: float
    entanglement_fidelity: float
    chi_sq: float
    sector_fidelities: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = asdict(self)
        out["sector_fidelities"] = {str(k): v for k, v in self.sector_fidelities.items()}
        return out


def compare_networks(sq, U, L, sectors: Sequence[int] = (0, 1, 2, 3)) -> NetworkComparison:
    sq = _sq(sq)
    f = fidelity_bound(sq, U, L)
    return NetworkComparison(
        f,
        _tvd_from_fidelity(f),
        f * f,
        sq.chi_sq,
        {int(n): sector_fidelity(U, L, n) for n in sectors},
    )


def _as_table(p) -> tuple[dict, float]:
    if isinstance(p, FockDistribution):
        table, res = p.as_dict(), float(p.residual_mass)
    elif isinstance(p, dict):
        table, res = dict(p), 0.0
    else:
        arr = np.asarray(p, dtype=float)
        table, res = dict(enumerate(arr.tolist())), 0.0
    for v in list(table.values()) + [res]:
        if v < 0.0 or not math.isfinite(v):
            raise InvalidDistributionError(f"invalid probability {v}")
    total = sum(table.values()) + res
    if abs(total - 1.0) > 1e-6:
        raise InvalidDistributionError(f"probabilities sum to {total}, expected 1")
    return table, res


def distribution_distance(P, Q) -> tuple[float, float]:
    """Total variation distance and classical (Bhattacharyya) fidelity.

    Accepts :class:`FockDistribution`, ``{outcome: prob}`` dicts or arrays.
    Residual (unenumerated) mass adds ``|p_res - q_res| / 2`` to the
    distance and nothing to the fidelity, so both numbers are conservative.
    """
    p, pres = _as_table(P)
    q, qres = _as_table(Q)
    keys = set(p) | set(q)
    d = 0.5 * sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys) + 0.5 * abs(pres - qres)
    f = sum(math.sqrt(p[k] * q[k]) for k in keys if k in p and k in q)
    return min(d, 1.0), min(f, 1.0)


@dataclass
class ChainReport:
    tvd: float
    classical_fidelity: float
    quantum_fidelity: float
    slacks: dict
    tol: float = 1e-9

    @property
    def ok(self) -> bool:
        return all(v >= -self.tol for v in self.slacks.values())

    @property
    def violations(self) -> list[str]:
        return [k for k, v in self.slacks.items() if v < -self.tol]


def inequality_chain_check(P, Q, f_quantum: float, tol: float = 1e-9) -> ChainReport:
    """Check ``1 - F_C <= D_C <= sqrt(1 - F_C^2)``, ``F_C >= F_q`` and
    ``D_C <= sqrt(1 - F_q^2)``; every slack is nonnegative when they hold."""
    d, f = distribution_distance(P, Q)
    slacks = {
        "one_minus_fc_le_dc": d - (1.0 - f),
        "dc_le_sqrt_fc": _tvd_from_fidelity(f) - d,
        "fc_ge_fq": f - f_quantum,
        "dc_le_sqrt_fq": _tvd_from_fidelity(f_quantum) - d,
    }
    return ChainReport(d, f, f_quantum, slacks, tol)


def sweep(modes: Sequence[int], t_sq: Sequence[float], chi_sq: float | str = "inv-sqrt", U=None, L=None) -> list[dict]:
    """Fidelity-bound grid over mode counts and uniform transmissivities.

    ``chi_sq`` is a number or a rule name for :meth:`SqueezeParam.from_rule`.
    Uses the closed form for uniform loss; if explicit ``U`` and ``L`` are
    given the full determinant is used instead (``t_sq`` is then ignored).
    """
    rows = []
    for m in modes:
        sq = SqueezeParam.from_rule(m, chi_sq) if isinstance(chi_sq, str) else SqueezeParam(float(chi_sq))
        if U is not None and L is not None:
            grid = [(float("nan"), fidelity_bound(sq, U, L))]
        else:
            grid = [(float(t), uniform_loss_fidelity(sq, m, t)) for t in t_sq]
        for t, f in grid:
            rows.append(
                {"M": int(m), "chi_sq": sq.chi_sq, "t_sq": t, "fidelity": f,
                 "tvd_bound": _tvd_from_fidelity(f), "ent_fidelity": f * f}
            )
    return rows


def write_sweep_csv(rows: Sequence[dict], fh) -> None:
    w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
