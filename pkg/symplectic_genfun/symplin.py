"""Realified complex-symplectic linear algebra.

Points of C^n are stored as 2n reals, real and imaginary parts interleaved per
complex coordinate. Multiplication by i is the block-diagonal matrix ``J`` with
blocks ``[[0, -1], [1, 0]]`` and the inner product is the real dot product, so
that the symplectic pairing is ``<i v, w>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from symplectic_genfun.errors import CayleySingular, EigenSolverError, VerificationError

logger = logging.getLogger(__name__)

# ------------------------------------------------------------------------------
# Constants
# ------------------------------------------------------------------------------
SYMPLECTIC_TOL = 1e-10
CAYLEY_REJECT = 1e6
EIGEN_RELATIVE_TOL = 1e-8


# ------------------------------------------------------------------------------
# Coordinate helpers
# ------------------------------------------------------------------------------
@lru_cache(maxsize=64)
def _complex_structure(n: int) -> np.ndarray:
    block = np.array([[0.0, -1.0], [1.0, 0.0]])
    matrix = np.kron(np.eye(n), block)
    matrix.setflags(write=False)
    return matrix


def complex_structure(n: int) -> np.ndarray:
    """Return the 2n x 2n matrix of multiplication by i on C^n."""
    if n < 1:
        raise ValueError(f"Complex dimension must be positive, got {n}")
    return _complex_structure(n)


def mul_i(x: ArrayLike) -> np.ndarray:
    """Multiply realified vectors by i along the last axis."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] % 2:
        raise ValueError(f"Realified vectors need an even last axis, got {arr.shape}")
    pairs = arr.reshape(arr.shape[:-1] + (-1, 2))
    out = np.empty_like(pairs)
    out[..., 0] = -pairs[..., 1]
    out[..., 1] = pairs[..., 0]
    return out.reshape(arr.shape)


def from_complex(z: ArrayLike) -> np.ndarray:
    """Realify complex vectors along the last axis."""
    arr = np.asarray(z, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).reshape(
        arr.shape[:-1] + (2 * arr.shape[-1],)
    )


def to_complex(x: ArrayLike) -> np.ndarray:
    """Inverse of :func:`from_complex`."""
    arr = np.asarray(x, dtype=float)
    if arr.shape[-1] % 2:
        raise ValueError(f"Realified vectors need an even last axis, got {arr.shape}")
    pairs = arr.reshape(arr.shape[:-1] + (-1, 2))
    return pairs[..., 0] + 1j * pairs[..., 1]


def realify(m: ArrayLike) -> np.ndarray:
    """Real 2n x 2n matrix of a complex-linear map of C^n."""
    cm = np.atleast_2d(np.asarray(m, dtype=complex))
    n = cm.shape[0]
    out = np.empty((2 * n, 2 * cm.shape[1]))
    out[0::2, 0::2] = cm.real
    out[0::2, 1::2] = -cm.imag
    out[1::2, 0::2] = cm.imag
    out[1::2, 1::2] = cm.real
    return out


def complexify(matrix: ArrayLike) -> np.ndarray:
    """Complex matrix of a real matrix commuting with ``J``."""
    arr = np.asarray(matrix, dtype=float)
    return arr[0::2, 0::2] + 1j * arr[1::2, 0::2]


def realify_hermitian(c: ArrayLike) -> np.ndarray:
    """Real symmetric S with ``x^T S x = z^* C z`` for Hermitian C."""
    cm = np.atleast_2d(np.asarray(c, dtype=complex))
    if not np.allclose(cm, cm.conj().T, atol=1e-12):
        raise ValueError("Matrix is not Hermitian")
    return realify(cm)


def complex_scalar(lam: complex, n: int) -> np.ndarray:
    """Real matrix of multiplication by the complex scalar ``lam`` on C^n."""
    return realify(lam * np.eye(n))


# ------------------------------------------------------------------------------
# Domain types
# ------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class RealifiedVector:
    """A point of C^n stored as 2n interleaved reals."""

    coords: np.ndarray

    def __post_init__(self) -> None:
        coords = np.array(self.coords, dtype=float).ravel()
        if coords.size == 0 or coords.size % 2:
            raise ValueError(
                f"A realified vector needs a positive even length, got {coords.size}"
            )
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)

    @property
    def n(self) -> int:
        return self.coords.size // 2

    @classmethod
    def from_complex(cls, z: ArrayLike) -> "RealifiedVector":
        return cls(from_complex(np.ravel(np.asarray(z, dtype=complex))))

    def to_complex(self) -> np.ndarray:
        return to_complex(self.coords)

    def multiply_by_i(self) -> "RealifiedVector":
        return RealifiedVector(mul_i(self.coords))

    def inner(self, other: "RealifiedVector") -> float:
        self._check_same(other)
        return float(self.coords @ other.coords)

    def norm(self) -> float:
        return float(np.linalg.norm(self.coords))

    def scale(self, lam: complex) -> "RealifiedVector":
        """Multiply by a complex scalar."""
        return RealifiedVector.from_complex(lam * self.to_complex())

    def allclose(self, other: "RealifiedVector", atol: float = 1e-12) -> bool:
        self._check_same(other)
        return bool(np.allclose(self.coords, other.coords, rtol=0.0, atol=atol))

    def __add__(self, other: "RealifiedVector") -> "RealifiedVector":
        self._check_same(other)
        return RealifiedVector(self.coords + other.coords)

    def __sub__(self, other: "RealifiedVector") -> "RealifiedVector":
        self._check_same(other)
        return RealifiedVector(self.coords - other.coords)

    def _check_same(self, other: "RealifiedVector") -> None:
        if other.n != self.n:
            raise ValueError(
                f"Dimension mismatch: C^{self.n} against C^{other.n}"
            )


@dataclass(frozen=True, eq=False)
class QuadForm:
    """Quadratic form ``x -> x^T M x`` with a zero-threshold for eigenvalues.

    The matrix is symmetrized on construction. When ``tol`` is omitted it is
    set to ``1e-8 * (1 + r)`` with ``r`` the infinity norm of the matrix, an
    upper bound for its spectral radius.
    """

    matrix: np.ndarray
    tol: Optional[float] = None

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"A quadratic form needs a square matrix, got {m.shape}")
        m = 0.5 * (m + m.T)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.tol is None:
            radius = float(np.max(np.sum(np.abs(m), axis=1))) if m.size else 0.0
            object.__setattr__(self, "tol", EIGEN_RELATIVE_TOL * (1.0 + radius))
        elif self.tol < 0:
            raise ValueError(f"Tolerance must be nonnegative, got {self.tol}")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def value(self, x: ArrayLike) -> float:
        vec = np.ravel(np.asarray(x, dtype=float))
        return float(vec @ self.matrix @ vec)

    def congruent(self, a: ArrayLike, tol: Optional[float] = None) -> "QuadForm":
        """The form ``A^T M A``."""
        am = np.asarray(a, dtype=float)
        return QuadForm(am.T @ self.matrix @ am, tol=tol)

    def restrict(self, basis: ArrayLike) -> "QuadForm":
        """Restriction to the span of the columns of ``basis``."""
        return self.congruent(basis, tol=self.tol)

    def eigenvalues(self) -> np.ndarray:
        try:
            eig = linalg.eigvalsh(self.matrix)
        except (linalg.LinAlgError, ValueError) as exc:
            raise EigenSolverError(
                f"Symmetric eigensolver failed on a {self.dim}x{self.dim} form"
            ) from exc
        if not np.all(np.isfinite(eig)):
            raise EigenSolverError("Symmetric eigensolver returned non-finite values")
        return eig


@dataclass(frozen=True, eq=False)
class SymplecticMatrix:
    """A real 2d x 2d matrix preserving the standard symplectic form."""

    matrix: np.ndarray
    tol: float = SYMPLECTIC_TOL

    def __post_init__(self) -> None:
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] % 2:
            raise ValueError(f"Expected an even square matrix, got {m.shape}")
        residual = symplectic_residual(m)
        scale = max(1.0, float(np.linalg.norm(m, 2)) ** 2)
        if residual > self.tol * scale:
            raise ValueError(f"Matrix is not symplectic (residual {residual:.3e})")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def d(self) -> int:
        return self.matrix.shape[0] // 2

    @classmethod
    def identity(cls, d: int) -> "SymplecticMatrix":
        return cls(np.eye(2 * d))

    @classmethod
    def from_complex(cls, m: ArrayLike) -> "SymplecticMatrix":
        """Symplectic matrix of a complex unitary map."""
        return cls(realify(m))

    @classmethod
    def exponential(cls, s: ArrayLike) -> "SymplecticMatrix":
        """``exp(J S)`` for a real symmetric S, the time-one linear flow."""
        sm = np.asarray(s, dtype=float)
        return cls(linalg.expm(complex_structure(sm.shape[0] // 2) @ sm))

    def inverse(self) -> "SymplecticMatrix":
        return SymplecticMatrix(symplectic_inverse(self.matrix), tol=self.tol)

    def __matmul__(self, other: "SymplecticMatrix") -> "SymplecticMatrix":
        return SymplecticMatrix(self.matrix @ other.matrix, tol=self.tol)


def symplectic_residual(m: ArrayLike) -> float:
    """Max-abs entry of ``M^T J M - J``."""
    arr = np.asarray(m, dtype=float)
    j = complex_structure(arr.shape[0] // 2)
    return float(np.max(np.abs(arr.T @ j @ arr - j)))


def symplectic_inverse(m: ArrayLike) -> np.ndarray:
    """Inverse of a symplectic matrix, ``-J M^T J``."""
    arr = np.asarray(m, dtype=float)
    j = complex_structure(arr.shape[0] // 2)
    return -j @ arr.T @ j


# ------------------------------------------------------------------------------
# Operations
# ------------------------------------------------------------------------------
def tau(
    z: RealifiedVector, big_z: RealifiedVector
) -> Tuple[RealifiedVector, RealifiedVector]:
    """The linear map ``(z, Z) -> ((z + Z) / 2, i (z - Z))``.

    It sends the graph of a map to a Lagrangian submanifold of the cotangent
    bundle, and the diagonal to the zero section.
    """
    if z.n != big_z.n:
        raise ValueError(f"Dimension mismatch: C^{z.n} against C^{big_z.n}")
    mid = 0.5 * (z.coords + big_z.coords)
    diff = mul_i(z.coords - big_z.coords)
    return RealifiedVector(mid), RealifiedVector(diff)


def quad_index(q: QuadForm) -> Tuple[int, int]:
    """Index and nullity of a quadratic form.

    Args:
        q: The form.

    Returns:
        ``(index, nullity)``: the number of eigenvalues below ``-q.tol`` and the
        number within ``[-q.tol, q.tol]``.

    Raises:
        EigenSolverError: If the eigensolver fails.
    """
    eig = q.eigenvalues()
    assert q.tol is not None
    index = int(np.count_nonzero(eig < -q.tol))
    nullity = int(np.count_nonzero(np.abs(eig) <= q.tol))
    return index, nullity


def cayley_matrix(m: ArrayLike, reject: float = CAYLEY_REJECT) -> np.ndarray:
    """The symmetric matrix ``K = J (I - M) (I + M)^-1`` of a symplectic M.

    Raises:
        CayleySingular: When ``I + M`` is singular or ``||(I + M)^-1||`` exceeds
            ``reject``.
    """
    arr = np.asarray(m, dtype=float)
    eye = np.eye(arr.shape[0])
    try:
        inv = np.linalg.inv(eye + arr)
    except np.linalg.LinAlgError as exc:
        raise CayleySingular("-1 is an eigenvalue of the map") from exc
    inv_norm = float(np.linalg.norm(inv, 2))
    if not np.isfinite(inv_norm) or inv_norm > reject:
        raise CayleySingular(
            f"||(I + M)^-1|| = {inv_norm:.3e} exceeds the rejection bound {reject:.1e}"
        )
    return complex_structure(arr.shape[0] // 2) @ (eye - arr) @ inv


def cayley_genfn(m: Union[SymplecticMatrix, ArrayLike]) -> QuadForm:
    """Elementary generating function of a linear symplectic map.

    Returns the form ``f(w) = <K w, w>`` whose gradient ``2 K w`` equals
    ``i (z - M z)`` at ``w = (z + M z) / 2``.

    Raises:
        CayleySingular: When -1 is (numerically) an eigenvalue of M.
        VerificationError: When K fails to be symmetric, i.e. M is not symplectic.
    """
    matrix = m.matrix if isinstance(m, SymplecticMatrix) else np.asarray(m, float)
    k = cayley_matrix(matrix)
    asym = float(np.linalg.norm(k - k.T))
    if asym > 1e-10 * (1.0 + float(np.linalg.norm(k))):
        raise VerificationError(f"Cayley matrix is not symmetric (residual {asym:.3e})")
    return QuadForm(k)
