"""Test pseudo-gradient flow lines near an isolated fixed direction."""

from typing import Tuple

import numpy as np
import pytest

from symplectic_genfun.cpaction import ConicalFamily
from symplectic_genfun.crossing import (
    CROSSING_COLUMNS,
    CrossingResult,
    CrossingRow,
    CrossingSpace,
    FlowSettings,
    TrajectoryNeighborhood,
    _crossing_energy,
    _seed_inside,
    _seed_on_shell,
    choose_pm,
    crossing_experiment,
    distance_floor_check,
    euclidean_crossing_experiment,
    flow_line,
    isolation_estimate,
    neighborhood,
    neighborhood_membership,
    pseudo_gradient,
)
from symplectic_genfun.errors import ProjectionFailure, VerificationError
from symplectic_genfun.genfun import StepTuple
from symplectic_genfun.hamdiff import hyperbolic_fixture, rotation_tuple
from symplectic_genfun.symplin import from_complex, to_complex
from tests.unit_tests.fixtures.systems import pseudo_rotation

AXIS = from_complex([1.0, 0.0])


def _setup(r: float = 0.2) -> Tuple[CrossingSpace, TrajectoryNeighborhood]:
    family = ConicalFamily(pseudo_rotation().steps)
    return CrossingSpace(family), neighborhood(family, AXIS, 0.25, r)


def _near(nbhd: TrajectoryNeighborhood, size: float, seed: int) -> np.ndarray:
    noise = np.random.default_rng(seed).normal(size=nbhd.centers.shape)
    return nbhd.normalized_centers + size * noise / np.linalg.norm(noise)


def test_flow_settings_defaults() -> None:
    settings = FlowSettings.default()
    assert settings.max_steps == 4000
    assert settings.phase_grid == 64
    assert FlowSettings(max_steps=10).max_steps == 10


def test_choose_pm() -> None:
    assert choose_pm(9) == 4
    assert choose_pm(8) == 3
    assert choose_pm(2) == 2
    assert choose_pm(1) == 2
    assert choose_pm(17, np.random.default_rng(0), samples=50) == 5
    with pytest.raises(ValueError, match="positive"):
        choose_pm(0)


def test_space_gradient_matches_finite_differences() -> None:
    space, _ = _setup()
    assert space.shape == (9, 4)
    assert space.p == 4
    w = np.random.default_rng(4).normal(size=space.shape) * 0.3
    h = 1e-6
    fd = np.zeros(w.size)
    for i in range(w.size):
        e = np.zeros(w.size)
        e[i] = h
        fd[i] = (space.value(0.4, w.ravel() + e) - space.value(0.4, w.ravel() - e)) / (2 * h)
    assert np.allclose(space.gradient(0.4, w).ravel(), fd, atol=1e-6)


def test_project_lands_on_level_manifold() -> None:
    space, nbhd = _setup()
    t, w = space.project(0.25, _near(nbhd, 0.01, 0))
    assert abs(space.value(t, w)) < 1e-10
    assert space.sigma_norm(w) == pytest.approx(1.0)
    assert abs(t - 0.25) < 0.05


def test_pseudo_gradient_is_tangent_and_decreasing() -> None:
    space, nbhd = _setup()
    t, w = space.project(0.25, _near(nbhd, 0.05, 1))
    xt, xw, gnorm = pseudo_gradient(space, t, w)
    assert xt <= 0.0
    assert xt == pytest.approx(-(gnorm**2))
    scale = 1.0 + abs(xt) + float(np.linalg.norm(xw))
    assert abs(float(np.sum(xw * space.sigma_normal(w)))) < 1e-9 * scale
    d_value = space.t_derivative(t, w) * xt + float(np.sum(space.gradient(t, w) * xw))
    assert abs(d_value) < 1e-9 * scale


def test_pseudo_gradient_rejects_points_off_manifold() -> None:
    space, nbhd = _setup()
    with pytest.raises(ValueError, match="off the level manifold"):
        pseudo_gradient(space, 0.6, 3.0 * _near(nbhd, 0.3, 2))


def test_rho_vanishes_on_the_center_orbit() -> None:
    _, nbhd = _setup()
    centers = nbhd.centers
    assert nbhd.rho(centers) < 1e-8
    assert nbhd.rho(2.0 * centers) < 1e-8
    rotated = np.array([from_complex(np.exp(0.3j) * to_complex(row)) for row in centers])
    assert nbhd.rho(rotated) < 1e-6
    assert nbhd.ball_distance(rotated) > 0.1


def test_membership() -> None:
    _, nbhd = _setup()
    inside = neighborhood_membership(nbhd, nbhd.normalized_centers)
    assert inside == {"B": True, "U": True, "V": True}
    far = neighborhood_membership(nbhd, np.roll(nbhd.normalized_centers, 1, axis=1))
    assert not far["V"]
    assert not far["U"]


def test_neighborhood_validation() -> None:
    family = ConicalFamily(pseudo_rotation().steps)
    with pytest.raises(VerificationError, match="not fixed"):
        neighborhood(family, AXIS, 0.5, 0.2)
    with pytest.raises(ValueError, match="positive"):
        neighborhood(family, AXIS, 0.25, 0.0)


def test_isolation_estimate() -> None:
    fixture = pseudo_rotation()
    assert isolation_estimate(fixture, AXIS) == pytest.approx(0.5)


def test_crossing_energy_is_signed_by_direction() -> None:
    dists = [1.0, 0.8, 0.4, 0.2]
    falling = [0.0, -1.0, -2.0, -3.0]
    rising = [0.0, 1.0, 2.0, 3.0]
    assert _crossing_energy(falling, dists, 1.0) == pytest.approx(1.75)
    assert _crossing_energy(rising, dists, 1.0) == pytest.approx(-1.75)
    assert _crossing_energy(rising, dists, 1.0, direction=-1) == pytest.approx(1.75)


def test_crossing_energy_of_a_line_read_backwards() -> None:
    values = [0.0, -1.0, -2.0, -3.0]
    dists = [0.1, 0.2, 0.5, 1.2]
    assert _crossing_energy(values[::-1], dists[::-1], 1.0, -1) == pytest.approx(0.5 / 0.7)


def test_crossing_energy_needs_shell_then_entry() -> None:
    values = [0.0, -1.0, -2.0, -3.0]
    assert _crossing_energy(values, [0.1, 0.2, 0.5, 1.2], 1.0) is None
    assert _crossing_energy(values, [0.8, 0.4, 0.3, 0.2], 1.0) is None
    assert _crossing_energy(values, [1.5, 0.9, 0.8, 0.7], 1.0) is None


def test_flow_line_direction_and_monotonicity() -> None:
    space, nbhd = _setup()
    start = _near(nbhd, 0.05, 3)
    with pytest.raises(ValueError, match="Direction"):
        flow_line(space, 0.25, start, direction=0)
    line = flow_line(space, 0.25, start, settings=FlowSettings(max_steps=20))
    assert line.steps <= 20
    assert line.actions[-1] <= line.actions[0] + 1e-12


def test_euclidean_experiment_needs_even_tuple() -> None:
    with pytest.raises(ValueError, match="even size"):
        euclidean_crossing_experiment(StepTuple.identity(1, 3), np.zeros(2), 0.1, [1])


@pytest.mark.timeout(300)
def test_euclidean_crossing_energies_are_positive() -> None:
    steps = StepTuple(rotation_tuple(0.3, 5, 1).steps[:4], 1)
    result = euclidean_crossing_experiment(
        steps,
        np.zeros(2),
        0.1,
        [1, 2],
        seeds_per_m=2,
        settings=FlowSettings(max_steps=500),
        rng=np.random.default_rng(11),
    )
    assert result.seeding == "interior"
    assert len(result.rows) == 8
    assert result.violations == ()
    assert result.c_min[1] is not None


@pytest.mark.timeout(300)
def test_distance_floor() -> None:
    space, nbhd = _setup()
    floor = distance_floor_check(nbhd, space, samples=8, rng=np.random.default_rng(5))
    assert floor.proven == pytest.approx(0.025)
    assert floor.minimum >= floor.proven
    assert floor.pairs == 64


def test_shell_seeds_lie_on_the_boundary() -> None:
    space, nbhd = _setup()
    rng = np.random.default_rng(7)
    for _ in range(3):
        w = _seed_on_shell(nbhd, 0.2, rng)
        assert nbhd.rho(w) == pytest.approx(0.2, abs=1e-8)
        _, projected = space.project(0.25, w)
        assert nbhd.rho(projected) == pytest.approx(0.2, abs=1e-8)
    with pytest.raises(ProjectionFailure, match="below"):
        _seed_on_shell(nbhd, 5.0, rng)


def test_interior_seeds_lie_in_the_half_neighborhood() -> None:
    _, nbhd = _setup()
    rng = np.random.default_rng(8)
    for _ in range(3):
        assert nbhd.rho(_seed_inside(nbhd, 0.2, rng)) < 0.1


def test_crossing_experiment_rejects_unknown_seeding() -> None:
    family = ConicalFamily(pseudo_rotation().steps)
    with pytest.raises(ValueError, match="Unknown seeding"):
        crossing_experiment(family, AXIS, 0.25, 0.2, [1], seeding="sideways")


@pytest.mark.timeout(600)
def test_small_crossing_experiment() -> None:
    family = ConicalFamily(pseudo_rotation().steps)
    result = crossing_experiment(
        family,
        AXIS,
        0.25,
        0.2,
        [1],
        seeds_per_m=2,
        settings=FlowSettings(max_steps=200),
        rng=np.random.default_rng(6),
    )
    assert len(result.rows) == 4
    assert sorted(row.direction for row in result.rows) == [-1, -1, 1, 1]
    summary = result.to_dict()
    assert set(summary) == {
        "c_min",
        "c_infinity",
        "lines",
        "crossings",
        "violations",
        "seeding",
        "tolerances",
    }
    assert summary["lines"] == 4
    assert summary["seeding"] == "boundary"
    assert result.violations == ()
    assert result.to_csv().splitlines()[0] == ",".join(CROSSING_COLUMNS)
    if result.c_infinity is not None:
        assert result.c_infinity > 0.0


@pytest.mark.timeout(600)
def test_interior_seeding_matches_across_workers() -> None:
    family = ConicalFamily(pseudo_rotation().steps)

    def run(workers: int) -> CrossingResult:
        return crossing_experiment(
            family,
            AXIS,
            0.25,
            0.2,
            [1],
            seeds_per_m=2,
            settings=FlowSettings(max_steps=100),
            rng=np.random.default_rng(9),
            workers=workers,
            seeding="interior",
        )

    serial, threaded = run(1), run(2)
    assert serial.seeding == "interior"
    assert len(serial.rows) == len(threaded.rows) == 4
    for a, b in zip(serial.rows, threaded.rows):
        assert (a.seed, a.direction, a.crossed, a.termination) == (
            b.seed,
            b.direction,
            b.crossed,
            b.termination,
        )
        assert a.delta_action == pytest.approx(b.delta_action, abs=1e-12)
    assert serial.violations == ()


def test_violations_are_crossed_rows_without_action_drop() -> None:
    def row(crossed: bool, delta: float) -> CrossingRow:
        return CrossingRow(
            m=1,
            seed=0,
            direction=1,
            crossed=crossed,
            delta_action=delta,
            steps=1,
            termination="entered",
        )

    result = CrossingResult(
        rows=(row(True, 0.02), row(True, -0.01), row(True, 0.0), row(False, 0.0)),
        c_min={1: -0.01},
    )
    assert [r.delta_action for r in result.violations] == [-0.01, 0.0]
    assert result.to_dict()["violations"] == 2


@pytest.mark.timeout(1800)
def test_hyperbolic_crossing_energies_are_positive() -> None:
    fixture = hyperbolic_fixture()
    point = fixture.known_fixed_points[0]
    family = ConicalFamily(fixture.steps, epsilon=0.3)
    result = crossing_experiment(
        family,
        point.z,
        point.action,
        0.2,
        [1, 2],
        seeds_per_m=4,
        settings=FlowSettings(max_steps=400),
        rng=np.random.default_rng(10),
        workers=2,
        seeding="interior",
        isolation=isolation_estimate(fixture, point.z),
    )
    assert result.violations == ()
    assert result.c_min[1] is not None
    assert all(c > 0.0 for c in result.c_min.values() if c is not None)
