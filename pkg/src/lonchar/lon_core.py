"""Complex-matrix foundation for linear-optical networks.

Transfer matrices act on row vectors of coherent amplitudes, ``beta -> beta @ L``,
so row ``j`` of a matrix describes where a photon entering input port ``j`` goes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import numba as _nb
except ModuleNotFoundError:  # pragma: no cover
    _nb = None

__all__ = [
    "LonError",
    "InvalidDimensionError",
    "NotSubunitaryError",
    "ShapeError",
    "PolarParts",
    "DilationMatrix",
    "haar_random_unitary",
    "permanent",
    "hermitian_sqrt",
    "check_subunitary",
    "polar_decompose",
    "unitary_dilation",
    "loss_measure",
    "normalize_phases",
    "subunitary_from_singular_values",
    "matrix_to_json",
    "matrix_from_json",
    "save_matrix",
    "load_matrix",
]

SUBUNITARY_TOL = 1e-9
PHASE_TOL = 1e-9


class LonError(ValueError):
    """Base class for invalid network inputs."""


class InvalidDimensionError(LonError):
    pass


class NotSubunitaryError(LonError):
    pass


class ShapeError(LonError):
    pass


def haar_random_unitary(dim: int, seed: int | np.random.Generator | None = None) -> np.ndarray:
    """Draw a Haar-distributed ``dim x dim`` unitary.

    A complex Ginibre matrix is QR-factorized and the columns of ``Q`` are
    rephased so that ``R`` has a positive diagonal, which makes the result
    exactly Haar distributed.
    """
    if dim < 1:
        raise InvalidDimensionError(f"dimension must be >= 1, got {dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def _ryser_gray_py(a: np.ndarray) -> complex:
    n = a.shape[0]
    row_sums = np.zeros(n, dtype=complex)
    total = 0j
    prev_gray = 0
    for k in range(1, 1 << n):
        gray = k ^ (k >> 1)
        changed = gray ^ prev_gray
        col = changed.bit_length() - 1
        if gray & changed:
            row_sums += a[:, col]
        else:
            row_sums -= a[:, col]
        prev_gray = gray
        sign = -1.0 if (bin(gray).count("1") & 1) else 1.0
        total += sign * np.prod(row_sums)
    return complex((-1) ** n * total)


if _nb is not None:

    @_nb.njit(cache=True)
    def _ryser_gray_nb(a):  # pragma: no cover - compiled
        n = a.shape[0]
        row_sums = np.zeros(n, dtype=np.complex128)
        total = 0j
        prev_gray = 0
        popcount = 0
        for k in range(1, 1 << n):
            gray = k ^ (k >> 1)
            changed = gray ^ prev_gray
            col = 0
            while (changed >> col) != 1:
                col += 1
            if gray & changed:
                popcount += 1
                for i in range(n):
                    row_sums[i] += a[i, col]
            else:
                popcount -= 1
                for i in range(n):
                    row_sums[i] -= a[i, col]
            prev_gray = gray
            prod = 1.0 + 0j
            for i in range(n):
                prod *= row_sums[i]
            if popcount & 1:
                total -= prod
            else:
                total += prod
        if n & 1:
            return -total
        return total

    _ryser_gray = _ryser_gray_nb
else:  # pragma: no cover
    _ryser_gray = _ryser_gray_py


def permanent(a) -> complex:
    """Permanent of a square matrix by Ryser's formula with Gray-code ordering.

    Runs in ``O(2**n * n)``. The empty matrix has permanent 1.
    """
    a = np.asarray(a, dtype=complex)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"permanent needs a square matrix, got shape {a.shape}")
    n = a.shape[0]
    if n == 0:
        return 1.0 + 0j
    if n == 1:
        return complex(a[0, 0])
    if n == 2:
        return complex(a[0, 0] * a[1, 1] + a[0, 1] * a[1, 0])
    return complex(_ryser_gray(np.ascontiguousarray(a)))


def hermitian_sqrt(h: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian PSD matrix; eigenvalues are clamped at 0."""
    w, v = np.linalg.eigh(h)
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ v.conj().T


def _as_square(L) -> np.ndarray:
    L = np.asarray(L, dtype=complex)
    if L.ndim != 2 or L.shape[0] != L.shape[1]:
        raise ShapeError(f"expected a square matrix, got shape {L.shape}")
    if L.shape[0] < 1:
        raise InvalidDimensionError("matrix dimension must be >= 1")
    return L


def check_subunitary(L, tol: float = SUBUNITARY_TOL) -> np.ndarray:
    """Validate that all singular values of ``L`` are at most ``1 + tol``."""
    L = _as_square(L)
    if not np.all(np.isfinite(L)):
        raise NotSubunitaryError("matrix has non-finite entries")
    smax = np.linalg.norm(L, 2)
    if smax > 1.0 + tol:
        raise NotSubunitaryError(f"largest singular value {smax:.12g} exceeds 1")
    return L


@dataclass(frozen=True)
class PolarParts:
    """Polar/singular-value pieces of a transfer matrix.

    ``L = loss_in @ lossless = lossless @ loss_out`` and
    ``L = loss_basis @ diag(singular_values) @ loss_basis^H @ lossless``.
    """

    lossless: np.ndarray
    loss_in: np.ndarray
    loss_out: np.ndarray
    singular_values: np.ndarray
    loss_basis: np.ndarray

    def reassemble(self) -> np.ndarray:
        w = self.loss_basis
        return (w * self.singular_values) @ w.conj().T @ self.lossless


def polar_decompose(L) -> PolarParts:
    L = check_subunitary(L)
    w, s, vh = np.linalg.svd(L)
    s = np.clip(s, 0.0, 1.0)
    lossless = w @ vh
    loss_in = (w * s) @ w.conj().T
    loss_out = (vh.conj().T * s) @ vh
    return PolarParts(lossless, loss_in, loss_out, s, w)


@dataclass(frozen=True)
class DilationMatrix:
    """Unitary ``[[L, R], [S, L_aux]]`` on the system plus ``M`` auxiliary modes."""

    matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def modes(self) -> int:
        return self.matrix.shape[0] // 2

    @property
    def L(self) -> np.ndarray:
        m = self.modes
        return self.matrix[:m, :m]

    @property
    def R(self) -> np.ndarray:
        m = self.modes
        return self.matrix[:m, m:]

    @property
    def S(self) -> np.ndarray:
        m = self.modes
        return self.matrix[m:, :m]

    @property
    def L_aux(self) -> np.ndarray:
        m = self.modes
        return self.matrix[m:, m:]


def unitary_dilation(L) -> DilationMatrix:
    """Embed ``L`` into a ``2M x 2M`` unitary.

    Uses ``R = sqrt(I - L L^H)``, ``S = sqrt(I - L^H L)`` and ``L_aux = -L^H``.
    Unitarity follows from ``L f(L^H L) = f(L L^H) L``; both square roots are
    built from one SVD of ``L`` so that identity holds to rounding.
    """
    L = check_subunitary(L)
    m = L.shape[0]
    w, s, vh = np.linalg.svd(L)
    c2 = 1.0 - np.clip(s, 0.0, 1.0) ** 2
    # rounding-level loss would otherwise leak ~1e-8 amplitudes into the auxiliary modes
    c = np.sqrt(np.where(c2 < 1e-14, 0.0, c2))
    r = (w * c) @ w.conj().T
    sblk = (vh.conj().T * c) @ vh
    u = np.empty((2 * m, 2 * m), dtype=complex)
    u[:m, :m] = L
    u[:m, m:] = r
    u[m:, :m] = sblk
    u[m:, m:] = -L.conj().T
    return DilationMatrix(u)


def loss_measure(L) -> float:
    """Average loss per mode, ``1 - Tr(L^H L) / M``."""
    L = check_subunitary(L)
    m = L.shape[0]
    e = 1.0 - float(np.sum(np.abs(L) ** 2)) / m
    return min(max(e, 0.0), 1.0)


def normalize_phases(L, tol: float = PHASE_TOL) -> tuple[np.ndarray, list[int]]:
    """Rephase each column so its diagonal entry is real and nonnegative.

    Columns whose diagonal magnitude is below ``tol`` are left untouched and
    their indices returned as flags.
    """
    L = np.array(_as_square(L), copy=True)
    flagged = []
    for i in range(L.shape[0]):
        d = L[i, i]
        if abs(d) < tol:
            flagged.append(i)
            continue
        L[:, i] *= np.conj(d) / abs(d)
        L[i, i] = abs(d)
    return L, flagged


def subunitary_from_singular_values(singular_values, seed=None) -> np.ndarray:
    """Random ``U1 @ diag(t) @ U2`` with Haar ``U1``, ``U2``."""
    t = np.asarray(singular_values, dtype=float)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u1 = haar_random_unitary(t.size, rng)
    u2 = haar_random_unitary(t.size, rng)
    return (u1 * t) @ u2


def matrix_to_json(L, **extra) -> dict:
    L = _as_square(L)
    out = {
        "dim": int(L.shape[0]),
        "entries": [[[float(z.real), float(z.imag)] for z in row] for row in L],
    }
    out.update(extra)
    return out


def matrix_from_json(obj: dict, validate: bool = True) -> np.ndarray:
    try:
        dim = int(obj["dim"])
        arr = np.asarray(obj["entries"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise LonError(f"malformed matrix JSON: {exc}") from exc
    if arr.shape != (dim, dim, 2):
        raise ShapeError(f"entries shape {arr.shape} does not match dim {dim}")
    L = arr[..., 0] + 1j * arr[..., 1]
    if validate:
        check_subunitary(L)
    return L


def save_matrix(path, L, **extra) -> None:
    Path(path).write_text(json.dumps(matrix_to_json(L, **extra), indent=1) + "\n")


def load_matrix(path, validate: bool = True) -> np.ndarray:
    return matrix_from_json(json.loads(Path(path).read_text()), validate=validate)
