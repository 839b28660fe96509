"""Named verification checks run by ``symplectic-genfun verify``."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from symplectic_genfun import symplin
from symplectic_genfun.cpaction import (
    ConicalFamily,
    critical_points,
    kernel_correspondence,
    recap_shift,
)
from symplectic_genfun.errors import ConfigError, GenfunError
from symplectic_genfun.genfun import (
    ElementaryGen,
    StepTuple,
    broken_gradient,
    broken_hessian,
    coordinates_from_v,
    decompose_check,
    step_map,
)
from symplectic_genfun.hamdiff import pseudo_rotation_fixture, rotation_tuple
from symplectic_genfun.maslov import SymplecticPath, bott_check, maslov_index

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


Check = Callable[[np.random.Generator], str]


class CheckFailed(AssertionError):
    """Raised by a check whose identity does not hold."""


def _random_step(rng: np.random.Generator, d: int, scale: float = 0.2) -> ElementaryGen:
    k = rng.normal(size=(2 * d, 2 * d)) * scale
    return ElementaryGen.from_matrix(k + k.T)


def check_tau_gradient_law(rng: np.random.Generator) -> str:
    """``tau(z, sigma(z)) = (w, grad f(w))`` for random quadratic steps."""
    worst = 0.0
    for _ in range(20):
        step = _random_step(rng, 2)
        z = rng.normal(size=4)
        image, _ = step_map(step, z)
        mid, diff = symplin.tau(
            symplin.RealifiedVector(z), symplin.RealifiedVector(image)
        )
        worst = max(worst, float(np.linalg.norm(diff.coords - step.gradient(mid.coords))))
    if worst > 1e-10:
        raise CheckFailed(f"gradient law residual {worst:.3e}")
    return f"residual {worst:.3e}"


def check_cayley_rotation(rng: np.random.Generator) -> str:
    """``cayley_genfn(exp(-2 i pi t)) = -tan(pi t) |w|^2``."""
    worst = 0.0
    for t in (-0.4, -0.25, 0.1, 0.25, 0.4):
        rot = symplin.complex_scalar(np.exp(-2j * np.pi * t), 2)
        q = symplin.cayley_genfn(rot)
        worst = max(worst, float(np.max(np.abs(q.matrix + np.tan(np.pi * t) * np.eye(4)))))
    if worst > 1e-12:
        raise CheckFailed(f"coefficient error {worst:.3e}")
    return f"coefficient error {worst:.3e}"


def check_broken_gradient(rng: np.random.Generator) -> str:
    """Slot ``k`` of the gradient is ``i (z_k - sigma_{k-1}(z_{k-1}))``."""
    worst = 0.0
    for n in (3, 5):
        steps = StepTuple(tuple(_random_step(rng, 1) for _ in range(n)), 1)
        v = rng.normal(size=(n, 2))
        coords = coordinates_from_v(steps, v)
        images = 2.0 * coords.w - coords.z
        expected = symplin.mul_i(coords.z - np.roll(images, 1, axis=0))
        worst = max(worst, float(np.max(np.abs(broken_gradient(steps, v) - expected))))
    if worst > 1e-10:
        raise CheckFailed(f"gradient residual {worst:.3e}")
    return f"gradient residual {worst:.3e}"


def check_decomposition(rng: np.random.Generator, instances: int = 1000) -> str:
    """Splitting of ``F_(sigma, delta)`` at the shared slots on random points."""
    worst = 0.0
    for _ in range(instances):
        sigma = StepTuple(tuple(_random_step(rng, 1) for _ in range(2)), 1)
        delta = rotation_tuple(0.3, 5, 1)
        v = rng.normal(size=(sigma.n + delta.n, 2))
        lhs, rhs = decompose_check(sigma, delta, v)
        worst = max(worst, abs(lhs - rhs) / (1.0 + abs(lhs)))
    if worst > 1e-11:
        raise CheckFailed(f"relative gap {worst:.3e}")
    return f"relative gap {worst:.3e}"


def check_index_gap(rng: np.random.Generator) -> str:
    """``ind F_delta_1 - ind F_delta_0 = 2 dim`` for rotation tuples."""
    gaps = []
    for dim in (2, 3):
        for n2 in (5, 7):
            zero = np.zeros((n2, 2 * dim))
            i1, _ = symplin.quad_index(broken_hessian(rotation_tuple(1.0, n2, dim), zero))
            i0, _ = symplin.quad_index(broken_hessian(rotation_tuple(0.0, n2, dim), zero))
            if i1 - i0 != 2 * dim:
                raise CheckFailed(f"gap {i1 - i0} for C^{dim}, n2={n2}")
            gaps.append(i1 - i0)
    return f"gaps {gaps}"


def check_maslov_calibration(rng: np.random.Generator) -> str:
    """A full positive turn on C has index -2; the negative turn on C^dim ``2 dim``."""
    full = maslov_index(SymplecticPath.rotation([1.0]))
    if full != -2:
        raise CheckFailed(f"full rotation has index {full}, expected -2")
    for dim in (2, 3):
        turn = maslov_index(SymplecticPath.rotation([-1.0] * dim))
        if turn != 2 * dim:
            raise CheckFailed(f"negative turn on C^{dim} has index {turn}")
    return "calibrated"


def _random_symplectic(rng: np.random.Generator, scale: float = 0.5) -> np.ndarray:
    s = rng.normal(size=(2, 2)) * scale
    return SymplecticPath.one_parameter(s + s.T).at(1.0)


def check_bott_inequalities(
    rng: np.random.Generator, elliptic: int = 20, hyperbolic: int = 5, kmax: int = 20
) -> str:
    """Bott inequalities on random elliptic and hyperbolic Sp(2) paths.

    Odd elliptic paths are rotations conjugated by a random symplectic matrix.
    Hyperbolic paths are ``exp(s J S)`` with ``S`` of signature (1, 1).
    """
    for j in range(elliptic):
        path = SymplecticPath.rotation([float(rng.uniform(-1.5, 1.5))])
        if j % 2:
            path = path.conjugate(_random_symplectic(rng))
        bott_check(path, kmax=kmax, big_k=kmax)
    for _ in range(hyperbolic):
        lam, mu = rng.uniform(0.1, 0.5, size=2)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        q = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
        path = SymplecticPath.one_parameter(q.T @ np.diag([lam, -mu]) @ q)
        bott_check(path, kmax=kmax, big_k=kmax)
    return f"{elliptic} elliptic and {hyperbolic} hyperbolic paths, k <= {kmax}"


def check_pseudo_rotation(rng: np.random.Generator) -> str:
    """Spectrum, kernel correspondence and recapping on a CP^1 rotation."""
    fixture = pseudo_rotation_fixture([0.25, 0.75])
    family = ConicalFamily(fixture.steps)
    records = critical_points(family, seeds=4, rng=rng)
    actions = sorted(r.action_mod1 for r in records)
    if len(records) != 2 or not np.allclose(actions, [0.25, 0.75], atol=1e-8):
        raise CheckFailed(f"actions {actions}")
    for record in records:
        kernel_correspondence(family, record)
        recap_shift(family, record)
    return f"actions {actions}"


CHECKS: Dict[str, Check] = {
    "tau_gradient_law": check_tau_gradient_law,
    "cayley_rotation": check_cayley_rotation,
    "broken_gradient": check_broken_gradient,
    "decomposition": check_decomposition,
    "index_gap": check_index_gap,
    "maslov_calibration": check_maslov_calibration,
    "bott_inequalities": check_bott_inequalities,
    "pseudo_rotation": check_pseudo_rotation,
}


def run_checks(
    names: Optional[Sequence[str]] = None,
    rng: Optional[np.random.Generator] = None,
) -> List[CheckResult]:
    """Run the named checks (all by default), collecting failures.

    Raises:
        ConfigError: On an empty list or an unknown name.
    """
    selected = list(CHECKS) if names is None else list(names)
    if not selected:
        raise ConfigError("No checks selected")
    unknown = [name for name in selected if name not in CHECKS]
    if unknown:
        raise ConfigError(f"Unknown checks {unknown}. Expected some of {list(CHECKS)}")
    rng = rng or np.random.default_rng(0)
    results = []
    for name in selected:
        try:
            detail = CHECKS[name](rng)
            results.append(CheckResult(name, True, detail))
        except (CheckFailed, GenfunError) as exc:
            logger.warning("Check %s failed: %s", name, exc)
            results.append(CheckResult(name, False, str(exc)))
    return results
