"""Small systems shared by the unit tests."""

import numpy as np

from symplectic_genfun.genfun import ElementaryGen, StepTuple
from symplectic_genfun.hamdiff import Fixture, pseudo_rotation_fixture

ROTATION_NUMBERS = [0.25, 0.75]


def random_quadratic_step(
    rng: np.random.Generator, d: int, scale: float = 0.2
) -> ElementaryGen:
    k = rng.normal(size=(2 * d, 2 * d)) * scale
    return ElementaryGen.from_matrix(k + k.T)


def random_quadratic_tuple(
    rng: np.random.Generator, n: int, d: int, scale: float = 0.2
) -> StepTuple:
    return StepTuple(tuple(random_quadratic_step(rng, d, scale) for _ in range(n)), d)


def quartic_step(d: int, c: float = 0.05) -> ElementaryGen:
    """``f(w) = c |w|^4``."""
    eye = np.eye(2 * d)
    return ElementaryGen(
        d=d,
        value=lambda w: c * float(w @ w) ** 2,
        gradient=lambda w: 4.0 * c * float(w @ w) * w,
        hessian=lambda w: 4.0 * c * (float(w @ w) * eye + 2.0 * np.outer(w, w)),
        name="quartic",
    )


def pseudo_rotation() -> Fixture:
    return pseudo_rotation_fixture(ROTATION_NUMBERS)
