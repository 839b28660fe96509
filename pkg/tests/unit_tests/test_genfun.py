"""Test the broken-trajectory calculus."""

from typing import Callable

import numpy as np
import pytest

from symplectic_genfun.errors import CBlockSingular
from symplectic_genfun.genfun import (
    ElementaryGen,
    NewtonSettings,
    StepTuple,
    average,
    broken_gradient,
    broken_hessian,
    broken_hessian_index,
    broken_value,
    common_factor_check,
    coordinates_from_v,
    coordinates_from_z,
    coupling_form,
    cyclic_band_order,
    decompose_check,
    fixed_space_dimension,
    linearized_monodromy,
    nullity_transport,
    reduce_quad0,
    stabilize,
    step_jacobian,
    step_map,
    trajectory,
    unaverage,
)
from symplectic_genfun.hamdiff import rotation_step, rotation_tuple
from symplectic_genfun.symplin import QuadForm, mul_i, quad_index
from tests.unit_tests.fixtures.systems import (
    quartic_step,
    random_quadratic_step,
    random_quadratic_tuple,
)


def _fd_gradient(
    fn: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6
) -> np.ndarray:
    flat = x.ravel()
    out = np.empty_like(flat)
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = h
        out[i] = (fn((flat + e).reshape(x.shape)) - fn((flat - e).reshape(x.shape))) / (2 * h)
    return out.reshape(x.shape)


def test_newton_settings_defaults() -> None:
    settings = NewtonSettings.default()
    assert settings.tol == 1e-12
    assert settings.max_iter == 50
    assert NewtonSettings(tol=1e-9).tol == 1e-9


@pytest.mark.parametrize("quadratic", [True, False])
def test_step_map_gradient_law(quadratic: bool) -> None:
    rng = np.random.default_rng(3)
    step = random_quadratic_step(rng, 2) if quadratic else quartic_step(2)
    for _ in range(5):
        z = rng.normal(size=4)
        image, w = step_map(step, z)
        assert np.allclose(w, 0.5 * (z + image))
        assert np.allclose(step.gradient(w), mul_i(z - image), atol=1e-10)


def test_step_map_identity_and_shape() -> None:
    z = np.array([1.0, 2.0])
    image, w = step_map(ElementaryGen.zero(1), z)
    assert np.all(image == z) and np.all(w == z)
    with pytest.raises(ValueError, match="Expected a point"):
        step_map(ElementaryGen.zero(2), z)


def test_step_jacobian_matches_finite_differences() -> None:
    step = quartic_step(1, c=0.1)
    z = np.array([0.6, -0.3])
    _, w = step_map(step, z)
    h = 1e-5
    fd = np.column_stack(
        [
            (step_map(step, z + h * e)[0] - step_map(step, z - h * e)[0]) / (2 * h)
            for e in np.eye(2)
        ]
    )
    assert np.allclose(step_jacobian(step, w), fd, atol=1e-6)


def test_scaled_step() -> None:
    step = quartic_step(1)
    half = step.scaled(0.5)
    w = np.array([0.4, 0.2])
    assert half.value(w) == pytest.approx(0.5 * step.value(w))
    assert ElementaryGen.zero(2).is_zero
    assert not step.is_zero


def test_rotation_step_is_conical() -> None:
    assert rotation_tuple(0.2, 5, 2).is_conical
    assert not quartic_step(1).is_conical


def test_step_tuple_validation() -> None:
    with pytest.raises(ValueError, match="at least one step"):
        StepTuple((), 1)
    with pytest.raises(ValueError, match="acts on C"):
        StepTuple((ElementaryGen.zero(2),), 1)
    with pytest.raises(ValueError, match="Cannot concatenate"):
        StepTuple.identity(1, 2) + StepTuple.identity(2, 2)


def test_step_tuple_combinators() -> None:
    base = StepTuple.identity(1, 2)
    assert base.repeat(3).n == 6
    assert base.with_identity().is_odd
    assert (base + base).n == 4


def test_averaging_round_trip_odd() -> None:
    rng = np.random.default_rng(0)
    v = rng.normal(size=(5, 2))
    assert np.allclose(unaverage(average(v)), v)
    with pytest.raises(ValueError, match="even size"):
        unaverage(np.zeros((4, 2)))


def test_broken_gradient_matches_finite_differences() -> None:
    rng = np.random.default_rng(5)
    steps = StepTuple(
        (random_quadratic_step(rng, 1), quartic_step(1), random_quadratic_step(rng, 1)), 1
    )
    v = rng.normal(size=(3, 2)) * 0.5
    fd = _fd_gradient(lambda x: broken_value(steps, x), v)
    assert np.allclose(broken_gradient(steps, v), fd, atol=1e-7)


def test_broken_gradient_is_the_jump() -> None:
    rng = np.random.default_rng(6)
    steps = random_quadratic_tuple(rng, 4, 2)
    v = rng.normal(size=(4, 4))
    coords = coordinates_from_v(steps, v)
    images = 2.0 * coords.w - coords.z
    expected = mul_i(coords.z - np.roll(images, 1, axis=0))
    assert np.allclose(broken_gradient(steps, v), expected)


def test_coordinates_from_z_inverts_coordinates_from_v() -> None:
    rng = np.random.default_rng(7)
    steps = random_quadratic_tuple(rng, 5, 1)
    v = rng.normal(size=(5, 2))
    coords = coordinates_from_v(steps, v)
    back = coordinates_from_z(steps, coords.z)
    assert np.allclose(back.v, v)


@pytest.mark.parametrize("n", [5, 6])
def test_banded_index_matches_dense(n: int) -> None:
    rng = np.random.default_rng(n)
    steps = random_quadratic_tuple(rng, n, 2, scale=0.6)
    v = np.zeros((n, 4))
    assert broken_hessian_index(steps, v) == quad_index(broken_hessian(steps, v))


def test_cyclic_band_order_keeps_neighbours_close() -> None:
    for n in (5, 8, 11):
        order = cyclic_band_order(n)
        assert sorted(order) == list(range(n))
        position = np.empty(n, dtype=int)
        position[order] = np.arange(n)
        gaps = [abs(position[k] - position[(k + 1) % n]) for k in range(n)]
        assert max(gaps) <= 2


def test_coupling_form_index_and_nullity() -> None:
    assert quad_index(coupling_form(5, 1)) == (4, 2)
    assert quad_index(coupling_form(7, 2)) == (12, 4)
    assert quad_index(coupling_form(4, 1))[1] == 4


def test_full_turn_makes_every_trajectory_critical() -> None:
    steps = rotation_tuple(1.0, 7, 2)
    z = np.array([0.3, -0.2, 0.5, 0.1])
    coords, end = trajectory(steps, z)
    assert np.allclose(end, z)
    assert np.allclose(broken_gradient(steps, coords.v), 0.0, atol=1e-12)
    assert nullity_transport(steps, z) == (4, 4)


def test_trajectory_needs_odd_tuple() -> None:
    with pytest.raises(ValueError, match="odd tuple"):
        trajectory(StepTuple.identity(1, 4), np.ones(2))


def test_linearized_monodromy_of_rotation() -> None:
    steps = rotation_tuple(0.3, 5, 1)
    m = linearized_monodromy(steps, np.zeros(2))
    angle = -2 * np.pi * 0.3
    expected = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    assert np.allclose(m, expected)
    assert fixed_space_dimension(m) == 0
    assert fixed_space_dimension(np.eye(4)) == 4


def test_decompose_check_agrees() -> None:
    rng = np.random.default_rng(11)
    sigma = random_quadratic_tuple(rng, 2, 1)
    delta = rotation_tuple(0.3, 5, 1)
    v = rng.normal(size=(7, 2))
    lhs, rhs = decompose_check(sigma, delta, v)
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-10)


def test_reduce_quad0_removes_base_dependence() -> None:
    rng = np.random.default_rng(2)
    b = rng.normal(size=(2, 3))
    c = np.diag([1.0, -2.0, 0.5])
    shift = np.linalg.solve(c, b.T)
    # Q(q, xi) = (xi + c^-1 b^T q)^T c (xi + c^-1 b^T q)
    lift = np.hstack([shift, np.eye(3)])
    q = QuadForm(lift.T @ c @ lift)
    a_map, block = reduce_quad0(q, 2)
    assert np.allclose(block, c)
    x = rng.normal(size=5)
    assert q.value(a_map(x)) == pytest.approx(float(x[2:] @ c @ x[2:]))


def test_reduce_quad0_on_a_full_turn() -> None:
    # F_delta of a loop generates the identity; its first slot is the base
    q = broken_hessian(rotation_tuple(1.0, 5, 1), np.zeros((5, 2)))
    a_map, block = reduce_quad0(q, 2)
    assert block.shape == (8, 8)
    assert quad_index(QuadForm(block)) == (6, 0)
    x = np.random.default_rng(13).normal(size=10)
    assert q.value(a_map(x)) == pytest.approx(float(x[2:] @ block @ x[2:]))


def test_reduce_quad0_singular_block() -> None:
    with pytest.raises(CBlockSingular):
        reduce_quad0(QuadForm(np.diag([1.0, 0.0])), 1)


def test_stabilize_parity_checks() -> None:
    with pytest.raises(ValueError, match="even size"):
        stabilize(StepTuple.identity(1, 3), rotation_tuple(1.0, 5, 1))
    with pytest.raises(ValueError, match="odd size"):
        stabilize(StepTuple.identity(1, 2), StepTuple.identity(1, 4))


def test_stabilize_by_a_full_turn() -> None:
    sigma = StepTuple.identity(1, 2)
    delta = rotation_tuple(1.0, 5, 1)
    point = np.random.default_rng(12).normal(size=(7, 2))
    q, report = stabilize(sigma, delta, [point])
    assert q.dim == 8
    assert (report.index_q, report.index_delta, report.index_delta_id) == (6, 6, 6)
    assert report.point_checks == ((8, 8),)
    assert report.composition_residual < 1e-12
    assert report.consistent


def test_certify_small_steps() -> None:
    steps = rotation_tuple(0.3, 5, 1)
    cert = steps.certify(np.random.default_rng(0))
    assert cert.passed
    assert cert.failures == 0
    assert cert.samples == 4 * NewtonSettings.default().certificate_samples


def test_gradient_and_conical_errors() -> None:
    rng = np.random.default_rng(8)
    assert quartic_step(1).gradient_error(rng) < 1e-5
    assert rotation_step(0.2, 2).conical_error(rng) < 1e-10
    assert quartic_step(1).conical_error(rng) > 1e-3


def test_common_factor_check() -> None:
    sigma = StepTuple((rotation_step(0.1, 1), rotation_step(-0.1, 1)), 1)
    z = np.array([0.4, -0.7])

    def inputs(steps: StepTuple, start: np.ndarray = z) -> np.ndarray:
        zs = [start]
        for step in list(steps)[:-1]:
            zs.append(step_map(step, zs[-1])[0])
        return np.array(zs)

    forward = rotation_tuple(1.0, 5, 1)
    backward = rotation_tuple(-1.0, 5, 1)
    first = inputs((sigma + forward).with_identity())
    second = inputs((sigma + backward).with_identity())
    assert common_factor_check(sigma, forward, backward, first, second)
    corrupted = second.copy()
    corrupted[0] += np.array([1e-3, 0.0])
    assert not common_factor_check(sigma, forward, backward, first, corrupted)
    elsewhere = inputs((sigma + backward).with_identity(), np.array([0.1, 0.9]))
    assert not common_factor_check(sigma, forward, backward, first, elsewhere)
    with pytest.raises(ValueError, match="sizes differ"):
        common_factor_check(sigma, forward, rotation_tuple(1.0, 7, 1), first, second)


def test_critical_points_are_fixed_points() -> None:
    c = 0.05
    t = float(np.arctan(2 * c)) / np.pi
    steps = StepTuple((quartic_step(1, c=c),) + rotation_tuple(t, 5, 1).steps[:4], 1)
    # the quartic step turns the circle |w| = 1 by exactly 2 pi t
    on_circle = np.array([np.sqrt(1.0 + 4 * c**2), 0.0])
    for z in (np.zeros(2), on_circle):
        coords, end = trajectory(steps, z)
        assert np.allclose(end, z, atol=1e-10)
        assert np.allclose(broken_gradient(steps, coords.v), 0.0, atol=1e-10)
    off = np.array([1.3, 0.0])
    coords, end = trajectory(steps, off)
    gradient = broken_gradient(steps, coords.v)
    assert np.linalg.norm(end - off) > 1e-3
    assert np.allclose(gradient[0], mul_i(off - end), atol=1e-10)
    assert np.allclose(gradient[1:], 0.0, atol=1e-10)
