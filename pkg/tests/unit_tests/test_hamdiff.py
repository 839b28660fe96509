"""Test discrete Hamiltonian systems and fixtures."""

import numpy as np
import pytest

from symplectic_genfun.errors import VerificationError
from symplectic_genfun.genfun import orbit, step_jacobian
from symplectic_genfun.hamdiff import (
    HamiltonianField,
    HamiltonianTable,
    KnownFixedPoint,
    apply_tuple,
    conjugate_tuple,
    hyperbolic_fixture,
    identity_fixture,
    lift_validate,
    load_fixture,
    orthonormal_complement,
    projective_linearization,
    rotation_step,
    rotation_tuple,
    tuple_from_flow,
    verify_fixture,
)
from symplectic_genfun.symplin import (
    complex_scalar,
    from_complex,
    realify,
    symplectic_residual,
    to_complex,
)
from tests.unit_tests.fixtures.systems import pseudo_rotation


def test_rotation_tuple_composes_to_rotation() -> None:
    z = np.array([0.3, -0.1, 0.7, 0.2])
    end = apply_tuple(rotation_tuple(0.3, 5, 2), z)
    assert np.allclose(end, complex_scalar(np.exp(-2j * np.pi * 0.3), 2) @ z)


def test_rotation_arguments() -> None:
    with pytest.raises(ValueError, match="needs"):
        rotation_step(0.5, 1)
    with pytest.raises(ValueError, match="odd size"):
        rotation_tuple(0.2, 6, 1)
    with pytest.raises(ValueError, match="odd size"):
        rotation_tuple(0.2, 3, 1)


def test_pseudo_rotation_fixture() -> None:
    fixture = pseudo_rotation()
    assert fixture.d == 1
    assert fixture.n1 == 4
    assert [p.action for p in fixture.known_fixed_points] == [0.25, 0.75]
    assert max(verify_fixture(fixture)) < 1e-12


def test_verify_fixture_rejects_wrong_action() -> None:
    fixture = pseudo_rotation()
    wrong = KnownFixedPoint(z=fixture.known_fixed_points[0].z, action=0.5, label="bad")
    broken = type(fixture)(
        name=fixture.name, steps=fixture.steps, d=fixture.d, known_fixed_points=(wrong,)
    )
    with pytest.raises(VerificationError, match="bad"):
        verify_fixture(broken)


def test_projective_linearization_of_pseudo_rotation() -> None:
    fixture = pseudo_rotation()
    axis = fixture.known_fixed_points[0]
    lin = projective_linearization(fixture.steps, axis.z, axis.action)
    # exp(2 i pi (0.75 - 0.25)) on the complement
    assert np.allclose(lin, -np.eye(2))


def test_orthonormal_complement() -> None:
    zc = np.array([1.0, 1j, 0.5]) / np.sqrt(2.25)
    basis = orthonormal_complement(zc)
    assert basis.shape == (6, 4)
    assert np.allclose(basis.T @ basis, np.eye(4))
    z = from_complex(zc)
    assert np.allclose(basis.T @ z, 0.0)
    assert np.allclose(basis.T @ (realify(1j * np.eye(3)) @ z), 0.0)


def test_flow_tuple_preserves_norm() -> None:
    table = HamiltonianTable(-np.pi * np.eye(2))
    steps = tuple_from_flow(table.field(name="round"), 15)
    assert steps.n == 15
    z = np.array([0.4, 0.1, -0.3, 0.8])
    end = apply_tuple(steps, z)
    assert np.linalg.norm(end) == pytest.approx(np.linalg.norm(z), abs=1e-9)
    # The flow is a rotation, so the complex line is preserved.
    ratio = to_complex(end) / to_complex(z)
    assert np.allclose(ratio, ratio[0])


def test_lift_validate_ratio_table() -> None:
    cx = np.array([[0.0, 1.0], [1.0, 0.0]])
    cy = np.array([[0.0, 1j], [-1j, 0.0]])
    table = HamiltonianTable(np.diag([0.2, -0.1]), ratio_terms=((0.3, cx, cy),))
    cert = lift_validate(table.field(), np.random.default_rng(0))
    assert cert.passed


def test_hamiltonian_table_from_dict() -> None:
    table = HamiltonianTable.from_dict(
        {"quadratic": {"real": [[1.0, 0.0], [0.0, 2.0]]}, "ratio": []}
    )
    assert table.dim == 2
    assert not table.is_zero
    with pytest.raises(ValueError, match="Malformed"):
        HamiltonianTable.from_dict({"ratio": []})


def test_conjugate_tuple() -> None:
    fixture = pseudo_rotation()
    u = np.array([[1.0, 1.0], [-1.0, 1.0]]) / np.sqrt(2.0)
    conj = conjugate_tuple(fixture.steps, u)
    z = np.array([0.2, 0.5, -0.4, 0.1])
    um = realify(u)
    assert np.allclose(apply_tuple(conj, z), um @ apply_tuple(fixture.steps, um.T @ z))
    with pytest.raises(ValueError, match="unitary"):
        conjugate_tuple(fixture.steps, 2.0 * u)


def test_load_fixture() -> None:
    fixture = load_fixture({"name": "pseudo_rotation", "a": [0.1, 0.4, 0.7]})
    assert fixture.d == 2
    assert identity_fixture(2).steps.n == 4
    assert load_fixture({"name": "identity", "d": 3}).d == 3
    with pytest.raises(ValueError, match="Unknown fixture"):
        load_fixture({"name": "torus"})


@pytest.mark.timeout(120)
def test_hyperbolic_fixture_poles() -> None:
    fixture = hyperbolic_fixture()
    assert [p.label for p in fixture.known_fixed_points] == ["pole0", "pole1"]
    for point in fixture.known_fixed_points:
        lin = projective_linearization(fixture.steps, point.z, point.action)
        moduli = np.abs(np.linalg.eigvals(lin))
        assert np.min(np.abs(moduli - 1.0)) > 0.05
    assert max(verify_fixture(fixture)) < 1e-9


def _ratio_table(scale: float = 1.0) -> HamiltonianTable:
    cx = np.array([[0.0, 1.0], [1.0, 0.0]])
    cy = np.array([[0.0, 1j], [-1j, 0.0]])
    return HamiltonianTable(
        scale * np.diag([0.2, -0.1]), ratio_terms=((scale * 0.3, cx, cy),)
    )


@pytest.mark.timeout(120)
def test_flow_tuple_converges_at_second_order() -> None:
    field = _ratio_table(2.0).field(name="ratio")
    z = np.array([0.3, -0.2, 0.5, 0.4])
    ends = [apply_tuple(tuple_from_flow(field, n), z) for n in (10, 20, 40)]
    ratio = np.linalg.norm(ends[0] - ends[1]) / np.linalg.norm(ends[1] - ends[2])
    assert 3.5 < ratio < 4.5


def test_flow_steps_are_symplectic() -> None:
    steps = tuple_from_flow(_ratio_table().field(), 6)
    _, mids, _ = orbit(steps, np.array([0.3, -0.2, 0.5, 0.4]))
    for step, w in zip(steps, mids):
        assert symplectic_residual(step_jacobian(step, w)) < 1e-10


def test_conical_flow_tuple_commutes_with_complex_scaling() -> None:
    steps = tuple_from_flow(_ratio_table().field(), 6)
    z = np.array([0.3, -0.2, 0.5, 0.4])
    lam = 1.5 * np.exp(0.7j)
    scaled = apply_tuple(steps, from_complex(lam * to_complex(z)))
    assert np.allclose(scaled, from_complex(lam * to_complex(apply_tuple(steps, z))))


def test_lift_validate_rejects_real_square() -> None:
    # Re z^2 is not a function of |z| on the complex line
    field = HamiltonianField(
        dim=1,
        evaluate=lambda t, x: float(x[0] ** 2 - x[1] ** 2),
        gradient=lambda t, x: np.array([2.0 * x[0], -2.0 * x[1]]),
        hessian=lambda t, x: np.diag([2.0, -2.0]),
        name="re_square",
    )
    cert = lift_validate(field, np.random.default_rng(1))
    assert cert.euler_residual < 1e-9
    assert not cert.two_homogeneous
    assert not cert.s1_invariant
    assert not cert.passed


@pytest.mark.timeout(120)
def test_hyperbolic_fixture_with_pole_rotation() -> None:
    fixture = hyperbolic_fixture(epsilon=0.02)
    assert max(verify_fixture(fixture)) < 1e-9
    pole0, pole1 = fixture.known_fixed_points
    assert pole0.action == pytest.approx(0.02 / np.pi, rel=1e-3)
    assert min(pole1.action, 1.0 - pole1.action) < 1e-9
    assert fixture.params["epsilon"] == 0.02
