"""Test the realified linear algebra."""

import numpy as np
import pytest

from symplectic_genfun.errors import CayleySingular, VerificationError
from symplectic_genfun.symplin import (
    QuadForm,
    RealifiedVector,
    SymplecticMatrix,
    cayley_genfn,
    cayley_matrix,
    complex_scalar,
    complex_structure,
    complexify,
    from_complex,
    mul_i,
    quad_index,
    realify,
    symplectic_inverse,
    symplectic_residual,
    tau,
    to_complex,
)


def test_mul_i_matches_complex_structure() -> None:
    x = np.arange(6, dtype=float)
    assert np.allclose(mul_i(x), complex_structure(3) @ x)
    assert np.allclose(to_complex(mul_i(x)), 1j * to_complex(x))


def test_realify_is_multiplicative() -> None:
    rng = np.random.default_rng(1)
    a = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    b = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    assert np.allclose(realify(a @ b), realify(a) @ realify(b))
    assert np.allclose(complexify(realify(a)), a)


def test_realified_vector_rejects_odd_length() -> None:
    with pytest.raises(ValueError, match="even length"):
        RealifiedVector(np.ones(3))


def test_realified_vector_scale() -> None:
    v = RealifiedVector.from_complex([1.0, 1j])
    scaled = v.scale(2j)
    assert np.allclose(scaled.to_complex(), [2j, -2.0])
    assert scaled.norm() == pytest.approx(2.0 * v.norm())


def test_tau_sends_diagonal_to_zero_section() -> None:
    z = RealifiedVector(np.array([0.3, -1.0, 2.0, 0.5]))
    mid, diff = tau(z, z)
    assert mid.allclose(z)
    assert np.all(diff.coords == 0.0)


def test_tau_dimension_mismatch() -> None:
    with pytest.raises(ValueError, match="Dimension mismatch"):
        tau(RealifiedVector(np.ones(2)), RealifiedVector(np.ones(4)))


def test_quad_index_counts_strictly_negative() -> None:
    q = QuadForm(np.diag([-1.0, 0.0, 2.0, -3.0]))
    assert quad_index(q) == (2, 1)


def test_quad_form_symmetrizes_and_restricts() -> None:
    q = QuadForm(np.array([[1.0, 2.0], [0.0, -1.0]]))
    assert np.allclose(q.matrix, [[1.0, 1.0], [1.0, -1.0]])
    restricted = q.restrict(np.array([[1.0], [0.0]]))
    assert restricted.dim == 1
    assert quad_index(restricted) == (0, 0)


def test_quad_form_rejects_non_square() -> None:
    with pytest.raises(ValueError, match="square"):
        QuadForm(np.ones((2, 3)))


def test_cayley_genfn_of_rotation() -> None:
    for t in (-0.3, 0.1, 0.45):
        q = cayley_genfn(complex_scalar(np.exp(-2j * np.pi * t), 2))
        assert np.allclose(q.matrix, -np.tan(np.pi * t) * np.eye(4))


def test_cayley_genfn_gradient_law() -> None:
    m = SymplecticMatrix.exponential(np.array([[0.3, 0.1], [0.1, 0.2]]))
    q = cayley_genfn(m)
    z = np.array([0.7, -0.4])
    w = 0.5 * (z + m.matrix @ z)
    assert np.allclose(2.0 * q.matrix @ w, mul_i(z - m.matrix @ z))


def test_cayley_matrix_rejects_minus_one() -> None:
    with pytest.raises(CayleySingular):
        cayley_matrix(-np.eye(2))


def test_cayley_genfn_rejects_non_symplectic() -> None:
    with pytest.raises(VerificationError, match="not symmetric"):
        cayley_genfn(2.0 * np.eye(2))


def test_symplectic_matrix_validation() -> None:
    with pytest.raises(ValueError, match="not symplectic"):
        SymplecticMatrix(np.diag([2.0, 1.0]))
    m = SymplecticMatrix.exponential(np.diag([1.0, -0.5, 0.2, 0.3]))
    product = m @ m.inverse()
    assert np.allclose(product.matrix, np.eye(4))


def test_symplectic_inverse_and_residual() -> None:
    shear = np.array([[1.0, 0.5], [0.0, 1.0]])
    assert symplectic_residual(shear) < 1e-14
    assert np.allclose(symplectic_inverse(shear) @ shear, np.eye(2))


def test_from_complex_interleaves() -> None:
    assert np.allclose(from_complex([1 + 2j, 3 - 1j]), [1.0, 2.0, 3.0, -1.0])
