"""Test the verification corpus."""

import numpy as np
import pytest

from symplectic_genfun import symplin
from symplectic_genfun.checks import (
    CHECKS,
    check_bott_inequalities,
    check_decomposition,
    run_checks,
)
from symplectic_genfun.errors import ConfigError

FAST_CHECKS = [
    "tau_gradient_law",
    "cayley_rotation",
    "broken_gradient",
    "index_gap",
    "maslov_calibration",
]


def test_fast_checks_pass() -> None:
    results = run_checks(FAST_CHECKS, np.random.default_rng(0))
    assert [r.name for r in results] == FAST_CHECKS
    for result in results:
        assert result.passed, result


@pytest.mark.timeout(3600)
def test_all_checks_pass() -> None:
    results = run_checks()
    assert [r.name for r in results] == list(CHECKS)
    assert all(r.passed for r in results), [r for r in results if not r.passed]


def test_decomposition_on_a_small_corpus() -> None:
    assert check_decomposition(np.random.default_rng(1), instances=40).startswith("relative gap")


@pytest.mark.timeout(600)
def test_bott_inequalities_on_elliptic_and_hyperbolic_paths() -> None:
    detail = check_bott_inequalities(np.random.default_rng(2), elliptic=2, hyperbolic=2, kmax=6)
    assert detail == "2 elliptic and 2 hyperbolic paths, k <= 6"


def test_broken_tau_is_reported(monkeypatch: pytest.MonkeyPatch) -> None:
    original = symplin.tau

    def flipped(
        z: symplin.RealifiedVector, big_z: symplin.RealifiedVector
    ) -> tuple:
        mid, diff = original(z, big_z)
        return mid, symplin.RealifiedVector(-diff.coords)

    monkeypatch.setattr(symplin, "tau", flipped)
    (result,) = run_checks(["tau_gradient_law"])
    assert not result.passed
    assert "residual" in result.detail


def test_run_checks_rejects_bad_selection() -> None:
    with pytest.raises(ConfigError, match="No checks selected"):
        run_checks([])
    with pytest.raises(ConfigError, match="Unknown checks"):
        run_checks(["tau_gradient_law", "hofer_norm"])
