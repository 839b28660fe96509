"""Test the projective variational principle."""

import numpy as np
import pytest

from symplectic_genfun.cpaction import (
    ConicalFamily,
    CriticalRecord,
    SolverSettings,
    action_spectrum,
    critical_points,
    csv_header,
    delta_monotonicity,
    dirichlet_iterate,
    iterate_family,
    iterated_size,
    kernel_correspondence,
    projective_distance,
    quotient_index,
    recap_shift,
    record_at,
    solve_fixed_direction,
)
from symplectic_genfun.errors import NoCriticalPoints
from symplectic_genfun.genfun import StepTuple, broken_hessian
from symplectic_genfun.hamdiff import (
    hyperbolic_fixture,
    identity_fixture,
    pseudo_rotation_fixture,
)
from symplectic_genfun.symplin import from_complex, mul_i
from tests.unit_tests.fixtures.systems import pseudo_rotation, quartic_step


def _family() -> ConicalFamily:
    return ConicalFamily(pseudo_rotation().steps)


def _record(t: float) -> CriticalRecord:
    z = from_complex(np.array([1.0, 0.0]))
    return CriticalRecord(t=t, z=z, v=np.zeros((9, 4)), index=0, nullity=0, residual=0.0)


def test_solver_settings_defaults() -> None:
    settings = SolverSettings.default()
    assert settings.tol == 1e-11
    assert settings.random_seeds == 16
    assert SolverSettings(random_seeds=3).random_seeds == 3


def test_family_validation() -> None:
    steps = pseudo_rotation().steps
    with pytest.raises(ValueError, match="even size"):
        ConicalFamily(steps.with_identity())
    with pytest.raises(ValueError, match="n2"):
        ConicalFamily(steps, n2=6)
    with pytest.raises(ValueError, match="epsilon"):
        ConicalFamily(steps, epsilon=0.5)
    with pytest.raises(ValueError, match="conical"):
        ConicalFamily(StepTuple((quartic_step(2),) * 2, 2))


def test_family_sizes() -> None:
    family = _family()
    assert (family.dim, family.d, family.n1, family.size) == (2, 1, 4, 9)
    assert family.auxiliary_dimension == 18
    assert family.window() == pytest.approx((-0.05, 1.05))
    assert family.tuple_at(0.3).n == 9


def test_t_derivative_matches_finite_differences() -> None:
    family = _family()
    v = np.random.default_rng(0).normal(size=(9, 4))
    t, h = 0.37, 1e-6
    fd = (family.value(t + h, v) - family.value(t - h, v)) / (2 * h)
    assert family.t_derivative(t, v) == pytest.approx(fd, rel=1e-5)


def test_solve_fixed_direction_from_axis() -> None:
    family = _family()
    t, z, residual = solve_fixed_direction(family.sigma, from_complex([0.0, 1.0]))
    assert t == pytest.approx(0.75)
    assert residual < 1e-10
    assert projective_distance(z, from_complex([0.0, 1.0])) < 1e-10


@pytest.mark.timeout(60)
def test_critical_points_of_pseudo_rotation() -> None:
    family = _family()
    records = critical_points(family, seeds=4, rng=np.random.default_rng(1))
    assert [r.action_mod1 for r in records] == pytest.approx([0.25, 0.75], abs=1e-9)
    for record in records:
        assert not record.is_degenerate
        assert record.support == (record.index, record.index)
        assert quotient_index(family, record) == (record.index, record.nullity)
        assert kernel_correspondence(family, record) == (0, 0)
        assert len(record.csv_row()) == len(csv_header(family.dim))
    assert records[1].index != records[0].index


def test_critical_points_merges_s1_orbits() -> None:
    family = _family()
    seed = from_complex([1.0, 0.0])
    rotated = from_complex([1j, 0.0])
    records = critical_points(family, seeds=[seed, rotated, 2.0 * seed])
    assert len(records) == 1


def test_critical_points_without_convergence() -> None:
    family = _family()
    settings = SolverSettings(max_iter=0)
    with pytest.raises(NoCriticalPoints):
        critical_points(family, seeds=[from_complex([1.0, 1.0])], settings=settings)


@pytest.mark.timeout(60)
def test_recap_shift_gap() -> None:
    family = _family()
    for record in critical_points(family, seeds=0):
        i0, i1 = recap_shift(family, record)
        assert i1 - i0 == 2 * family.dim


def test_record_kernel_contains_complex_line() -> None:
    family = _family()
    record = critical_points(family, seeds=0)[0]
    q = broken_hessian(family.tuple_at(record.t), record.v)
    assert np.allclose(q.matrix @ record.v.ravel(), 0.0, atol=1e-9)
    assert np.allclose(q.matrix @ mul_i(record.v).ravel(), 0.0, atol=1e-9)


def test_action_spectrum_groups_on_the_circle() -> None:
    records = [_record(1e-10), _record(0.9999999999), _record(0.5)]
    assert action_spectrum(records) == [(0.0, 2), (0.5, 1)]


def test_action_spectrum_from_family() -> None:
    spectrum = action_spectrum(_family(), seeds=0)
    assert [count for _, count in spectrum] == [1, 1]
    assert [value for value, _ in spectrum] == pytest.approx([0.25, 0.75], abs=1e-9)


@pytest.mark.timeout(60)
def test_delta_monotonicity() -> None:
    report = delta_monotonicity(_family(), samples=20, rng=np.random.default_rng(2))
    assert report.max_derivative <= 0.0
    assert report.margin > 0.0
    assert report.samples == 20


def test_iterate_family_cap() -> None:
    family = _family()
    assert iterate_family(family, 1) is family
    third = iterate_family(family, 3)
    assert third.n1 == 12
    assert iterated_size(family, 3) == 2 * 2 * (12 + 5)
    with pytest.raises(ValueError, match="cap"):
        iterate_family(family, 200)
    with pytest.raises(ValueError, match="positive"):
        iterate_family(family, 0)


def test_dirichlet_iterate() -> None:
    assert dirichlet_iterate([0.25, 0.75], 0.01, 8) == 4
    assert dirichlet_iterate([0.25, 0.75], 0.01, 3) is None
    assert dirichlet_iterate([0.0], 0.0, 1) == 1


def test_projective_distance_ignores_phase() -> None:
    z = from_complex([0.6, 0.8j])
    assert projective_distance(z, from_complex([0.6j, -0.8])) < 1e-7
    assert projective_distance(from_complex([1.0, 0.0]), from_complex([0.0, 1.0])) == 1.0


ROTATION_NUMBERS_CP2 = [0.1, 0.37, 0.71]


@pytest.mark.timeout(300)
def test_cp2_pseudo_rotation_has_three_fixed_directions() -> None:
    family = ConicalFamily(pseudo_rotation_fixture(ROTATION_NUMBERS_CP2).steps)
    records = critical_points(family, seeds=4, rng=np.random.default_rng(3))
    assert len(records) >= family.d + 1
    assert [r.action_mod1 for r in records] == pytest.approx(ROTATION_NUMBERS_CP2, abs=1e-9)
    for record in records:
        assert not record.is_degenerate
        i0, i1 = recap_shift(family, record)
        assert i1 - i0 == 2 * family.dim == 6


@pytest.mark.timeout(300)
def test_iterate_spectrum_multiplies_actions() -> None:
    family = ConicalFamily(pseudo_rotation_fixture(ROTATION_NUMBERS_CP2).steps)
    for m in range(2, 6):
        spectrum = action_spectrum(iterate_family(family, m), seeds=0)
        expected = sorted(np.mod(m * np.array(ROTATION_NUMBERS_CP2), 1.0))
        assert [value for value, _ in spectrum] == pytest.approx(expected, abs=1e-8)
        assert [count for _, count in spectrum] == [1, 1, 1]


@pytest.mark.parametrize("d", [1, 2])
def test_kernel_correspondence_on_the_identity(d: int) -> None:
    family = ConicalFamily(identity_fixture(d).steps)
    record = record_at(family, 0.0, from_complex(np.eye(d + 1)[0]))
    assert record.nullity == 2 * d
    assert kernel_correspondence(family, record) == (2 * d, 2 * d)


def test_kernel_correspondence_on_a_resonant_rotation() -> None:
    family = ConicalFamily(pseudo_rotation_fixture([0.25, 0.25, 0.6]).steps)
    record = record_at(family, 0.25, from_complex([1.0, 0.0, 0.0]))
    assert kernel_correspondence(family, record) == (2, 2)


@pytest.mark.timeout(120)
def test_kernel_correspondence_at_a_hyperbolic_pole() -> None:
    fixture = hyperbolic_fixture()
    family = ConicalFamily(fixture.steps)
    for point in fixture.known_fixed_points:
        record = record_at(family, point.action, point.z)
        assert kernel_correspondence(family, record) == (0, 0)
