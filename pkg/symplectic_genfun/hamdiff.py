"""Discrete Hamiltonian systems: flow tuples, rotation tuples and fixtures.

Convention: the Hamiltonian vector field is ``J grad H``, so ``H = -pi |z|^2``
generates ``exp(-2 i pi t)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike

from symplectic_genfun.errors import NewtonDivergence, VerificationError
from symplectic_genfun.genfun import (
    ElementaryGen,
    NewtonSettings,
    StepTuple,
    linearized_monodromy,
    orbit,
)
from symplectic_genfun.symplin import (
    complex_scalar,
    from_complex,
    mul_i,
    realify,
    realify_hermitian,
    to_complex,
)

logger = logging.getLogger(__name__)

ScalarField = Callable[[float, np.ndarray], float]
VectorField = Callable[[float, np.ndarray], np.ndarray]


# ------------------------------------------------------------------------------
# Hamiltonians
# ------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class HamiltonianField:
    """A Hamiltonian on C^dim with gradient and Hessian callbacks."""

    dim: int
    evaluate: ScalarField
    gradient: VectorField
    hessian: VectorField
    autonomous: bool = True
    two_homogeneous: bool = False
    s1_invariant: bool = False
    name: str = ""


@dataclass(frozen=True, eq=False)
class HamiltonianTable:
    """Symbolic coefficient table of an autonomous conical Hamiltonian.

    ``H(z) = z* C z + sum_j c_j (z* A_j z)(z* B_j z) / |z|^2`` with Hermitian
    ``C``, ``A_j``, ``B_j``.
    """

    quadratic: np.ndarray
    ratio_terms: Tuple[Tuple[float, np.ndarray, np.ndarray], ...] = ()

    def __post_init__(self) -> None:
        quad = np.atleast_2d(np.asarray(self.quadratic, dtype=complex))
        object.__setattr__(self, "quadratic", quad)
        terms = tuple(
            (
                float(c),
                np.atleast_2d(np.asarray(a, dtype=complex)),
                np.atleast_2d(np.asarray(b, dtype=complex)),
            )
            for c, a, b in self.ratio_terms
        )
        for _, a, b in terms:
            if a.shape != quad.shape or b.shape != quad.shape:
                raise ValueError(
                    f"Ratio term shapes {a.shape}, {b.shape} do not match {quad.shape}"
                )
        object.__setattr__(self, "ratio_terms", terms)

    @property
    def dim(self) -> int:
        return self.quadratic.shape[0]

    @property
    def is_zero(self) -> bool:
        return not np.any(self.quadratic) and all(c == 0 for c, _, _ in self.ratio_terms)

    def field(self, name: str = "") -> HamiltonianField:
        s = realify_hermitian(self.quadratic)
        ratios = [
            (c, realify_hermitian(a), realify_hermitian(b))
            for c, a, b in self.ratio_terms
        ]

        def evaluate(t: float, x: np.ndarray) -> float:
            total = float(x @ s @ x)
            nrm = float(x @ x)
            if nrm > 0.0:
                for c, a, b in ratios:
                    total += c * float(x @ a @ x) * float(x @ b @ x) / nrm
            return total

        def gradient(t: float, x: np.ndarray) -> np.ndarray:
            grad = 2.0 * (s @ x)
            nrm = float(x @ x)
            if nrm > 0.0:
                for c, a, b in ratios:
                    ax, bx = a @ x, b @ x
                    qa, qb = float(x @ ax), float(x @ bx)
                    grad += c * (
                        (2.0 * ax * qb + 2.0 * bx * qa) / nrm
                        - 2.0 * qa * qb * x / nrm**2
                    )
            return grad

        def hessian(t: float, x: np.ndarray) -> np.ndarray:
            hess = 2.0 * s
            nrm = float(x @ x)
            if nrm > 0.0:
                eye = np.eye(x.size)
                for c, a, b in ratios:
                    ax, bx = 2.0 * (a @ x), 2.0 * (b @ x)
                    qa, qb = 0.5 * float(x @ ax), 0.5 * float(x @ bx)
                    g = qa * qb
                    dg = ax * qb + bx * qa
                    hg = 2.0 * a * qb + 2.0 * b * qa + np.outer(ax, bx) + np.outer(bx, ax)
                    dn = 2.0 * x
                    hess = hess + c * (
                        hg / nrm
                        - (np.outer(dg, dn) + np.outer(dn, dg)) / nrm**2
                        - 2.0 * g * eye / nrm**2
                        + 2.0 * g * np.outer(dn, dn) / nrm**3
                    )
            return hess

        return HamiltonianField(
            dim=self.dim,
            evaluate=evaluate,
            gradient=gradient,
            hessian=hessian,
            autonomous=True,
            two_homogeneous=True,
            s1_invariant=True,
            name=name,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "quadratic": _complex_to_json(self.quadratic),
            "ratio": [
                {"coef": c, "left": _complex_to_json(a), "right": _complex_to_json(b)}
                for c, a, b in self.ratio_terms
            ],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "HamiltonianTable":
        try:
            quadratic = _complex_from_json(data["quadratic"])
            terms = tuple(
                (
                    float(term["coef"]),
                    _complex_from_json(term["left"]),
                    _complex_from_json(term["right"]),
                )
                for term in data.get("ratio", [])
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"Malformed Hamiltonian table: {exc}") from exc
        return cls(quadratic=quadratic, ratio_terms=terms)


@dataclass(frozen=True)
class LiftCertificate:
    """Sampled residuals of the conical-lift identities."""

    homogeneity_residual: float
    euler_residual: float
    invariance_residual: float

    @property
    def two_homogeneous(self) -> bool:
        return self.homogeneity_residual <= 1e-10 and self.euler_residual <= 1e-9

    @property
    def s1_invariant(self) -> bool:
        return self.invariance_residual <= 1e-10

    @property
    def passed(self) -> bool:
        return self.two_homogeneous and self.s1_invariant


def lift_validate(
    h: HamiltonianField,
    rng: Optional[np.random.Generator] = None,
    samples: int = 50,
    t: float = 0.0,
) -> LiftCertificate:
    """Sample 2-homogeneity, the Euler identity and S^1-invariance of ``h``."""
    rng = rng or np.random.default_rng(0)
    homog = euler = invariance = 0.0
    for _ in range(samples):
        x = rng.normal(size=2 * h.dim)
        lam = complex(rng.normal(), rng.normal())
        hx = h.evaluate(t, x)
        scale = 1.0 + abs(hx)
        scaled = lam.real * x + lam.imag * mul_i(x)
        homog = max(
            homog, abs(h.evaluate(t, scaled) - abs(lam) ** 2 * hx) / (abs(lam) ** 2 * scale)
        )
        euler = max(euler, abs(float(h.gradient(t, x) @ x) - 2.0 * hx) / scale)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        rotated = np.cos(theta) * x + np.sin(theta) * mul_i(x)
        invariance = max(invariance, abs(h.evaluate(t, rotated) - hx) / scale)
    return LiftCertificate(
        homogeneity_residual=homog,
        euler_residual=euler,
        invariance_residual=invariance,
    )


# ------------------------------------------------------------------------------
# Tuples
# ------------------------------------------------------------------------------
def tuple_from_flow(
    h: HamiltonianField,
    n: int,
    duration: float = 1.0,
    settings: Optional[NewtonSettings] = None,
    certify: bool = True,
) -> StepTuple:
    """Implicit-midpoint tuple of the flow of ``h`` over ``[0, duration]``.

    Step ``k`` has generating function ``h_step * H(t_k + h_step / 2, w)`` with
    ``h_step = duration / n``.

    Raises:
        NewtonDivergence: If a step fails its smallness certificate.
    """
    if n < 1:
        raise ValueError(f"Number of steps must be positive, got {n}")
    dt = duration / n
    conical = h.two_homogeneous and h.s1_invariant
    steps: List[ElementaryGen] = []
    for k in range(n):
        steps.append(_flow_step(h, k * dt + 0.5 * dt, dt, conical))
        if h.autonomous:
            steps.extend(steps[0] for _ in range(n - 1))
            break
    result = StepTuple(tuple(steps), h.dim)
    if certify and duration != 0.0:
        distinct = StepTuple((steps[0],), h.dim) if h.autonomous else result
        cert = distinct.certify(np.random.default_rng(0), settings)
        if not cert.passed:
            raise NewtonDivergence(
                f"{n} steps are too coarse for '{h.name}': "
                f"{cert.failures} of {cert.samples} Newton solves failed"
            )
    return result


def _flow_step(h: HamiltonianField, t_mid: float, dt: float, conical: bool) -> ElementaryGen:
    evaluate, gradient, hessian = h.evaluate, h.gradient, h.hessian
    return ElementaryGen(
        d=h.dim,
        value=lambda w: dt * evaluate(t_mid, w),
        gradient=lambda w: dt * gradient(t_mid, w),
        hessian=lambda w: dt * hessian(t_mid, w),
        is_conical=conical,
        name=f"{h.name}@{t_mid:.4g}",
    )


def flow_family(
    h: HamiltonianField, n: int, settings: Optional[NewtonSettings] = None
) -> Callable[[float], StepTuple]:
    """``s -> tuple_from_flow(h, n, duration=s)``, a continuous family of tuples."""

    def family(s: float) -> StepTuple:
        return tuple_from_flow(h, n, duration=s, settings=settings, certify=False)

    return family


def rotation_step(t: float, d: int) -> ElementaryGen:
    """The step ``q_t(w) = -tan(pi t) |w|^2`` of ``exp(-2 i pi t)`` on C^d."""
    if abs(t) >= 0.5:
        raise ValueError(f"Rotation step needs |t| < 1/2, got {t}")
    return ElementaryGen.from_matrix(-np.tan(np.pi * t) * np.eye(2 * d), name=f"q_{t:.4g}")


def rotation_tuple(t: float, m: int, d: int = 1) -> StepTuple:
    """``m - 1`` copies of ``q_{t/(m-1)}`` followed by the identity.

    The composition is ``exp(-2 i pi t)``.
    """
    if m < 5 or m % 2 == 0:
        raise ValueError(f"Rotation tuples need an odd size m >= 5, got {m}")
    step = rotation_step(t / (m - 1), d)
    return StepTuple((step,) * (m - 1) + (ElementaryGen.zero(d),), d)


def diagonal_rotation_step(angles: ArrayLike) -> ElementaryGen:
    """Step of ``diag(exp(2 i pi a_j))`` for ``|a_j| < 1/2``."""
    a = np.asarray(angles, dtype=float)
    if np.any(np.abs(a) >= 0.5):
        raise ValueError(f"Diagonal rotation step needs |a_j| < 1/2, got {a}")
    return ElementaryGen.from_matrix(
        realify(np.diag(np.tan(np.pi * a))), name="diag_rotation"
    )


def apply_tuple(
    steps: StepTuple, z: ArrayLike, settings: Optional[NewtonSettings] = None
) -> np.ndarray:
    """The composed map ``sigma_n o ... o sigma_1`` at ``z``."""
    _, _, end = orbit(steps, z, settings)
    return end


def conjugate_tuple(steps: StepTuple, u: ArrayLike) -> StepTuple:
    """Tuple of ``U sigma_k U^-1`` for a complex unitary ``U``."""
    um = realify(u)
    if not np.allclose(um.T @ um, np.eye(um.shape[0]), atol=1e-12):
        raise ValueError("Conjugating matrix is not unitary")
    conj: List[ElementaryGen] = []
    for step in steps:
        if step.matrix is not None:
            conj.append(ElementaryGen.from_matrix(um @ step.matrix @ um.T, name=step.name))
            continue
        conj.append(_conjugated_step(step, um))
    return StepTuple(tuple(conj), steps.d)


def _conjugated_step(step: ElementaryGen, um: np.ndarray) -> ElementaryGen:
    value, gradient, hessian = step.value, step.gradient, step.hessian
    return ElementaryGen(
        d=step.d,
        value=lambda w: value(um.T @ w),
        gradient=lambda w: um @ gradient(um.T @ w),
        hessian=lambda w: um @ hessian(um.T @ w) @ um.T,
        is_quadratic=step.is_quadratic,
        is_conical=step.is_conical,
        name=step.name,
    )


def projective_linearization(
    steps: StepTuple,
    z: ArrayLike,
    t: float,
    settings: Optional[NewtonSettings] = None,
) -> np.ndarray:
    """Linearization at ``[z]`` of the projectivized map, as a 2d x 2d matrix.

    The map ``exp(-2 i pi t) Phi`` fixes the unit vector ``z``; its derivative
    preserves ``C z`` and the orthogonal complement, and the block on the
    complement is returned in an orthonormal basis of it.
    """
    zc = to_complex(np.asarray(z, dtype=float))
    basis = orthonormal_complement(zc)
    monodromy = complex_scalar(np.exp(-2j * np.pi * t), steps.d) @ linearized_monodromy(
        steps, z, settings
    )
    return basis.T @ monodromy @ basis


def orthonormal_complement(zc: ArrayLike) -> np.ndarray:
    """Real orthonormal basis of the complex orthogonal complement of ``z``."""
    zc = np.asarray(zc, dtype=complex)
    dim = zc.size
    q, _ = np.linalg.qr(np.column_stack([zc, np.eye(dim, dtype=complex)]))
    return realify(q[:, 1:dim])


# ------------------------------------------------------------------------------
# Fixtures
# ------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class KnownFixedPoint:
    """A fixed direction of a fixture with its action and optional index."""

    z: np.ndarray
    action: float
    index: Optional[int] = None
    label: str = ""


@dataclass(frozen=True, eq=False)
class Fixture:
    """A named discrete system on C^{d+1} together with its known data."""

    name: str
    steps: StepTuple
    d: int
    known_fixed_points: Tuple[KnownFixedPoint, ...] = ()
    hamiltonian: Optional[HamiltonianTable] = None
    params: Dict[str, Any] = field(default_factory=dict)

    @property
    def n1(self) -> int:
        return self.steps.n

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "d": self.d,
            "n": self.steps.n,
            "params": dict(self.params),
            "hamiltonian": self.hamiltonian.to_dict() if self.hamiltonian else None,
            "known_fixed_points": [
                {
                    "z": _complex_to_json(to_complex(p.z)),
                    "action": p.action,
                    "index": p.index,
                    "label": p.label,
                }
                for p in self.known_fixed_points
            ],
        }


def pseudo_rotation_fixture(a: Sequence[float], n1: int = 4) -> Fixture:
    """Lift ``diag(exp(2 i pi a_j))`` of a rotation of CP^d.

    The tuple is ``n1 - 1`` equal diagonal rotation steps followed by the
    identity. The coordinate axes are fixed with actions ``a_j mod 1``.
    """
    angles = np.asarray(a, dtype=float)
    if angles.ndim != 1 or angles.size < 2:
        raise ValueError(f"Need at least two rotation numbers, got {a}")
    if n1 < 2 or n1 % 2:
        raise ValueError(f"n1 must be even and >= 2, got {n1}")
    step = diagonal_rotation_step(angles / (n1 - 1))
    dim = angles.size
    steps = StepTuple((step,) * (n1 - 1) + (ElementaryGen.zero(dim),), dim)
    known = tuple(
        KnownFixedPoint(
            z=from_complex(np.eye(dim)[j]),
            action=float(np.mod(angles[j], 1.0)),
            label=f"axis{j}",
        )
        for j in range(dim)
    )
    return Fixture(
        name="pseudo_rotation",
        steps=steps,
        d=dim - 1,
        known_fixed_points=known,
        hamiltonian=HamiltonianTable(np.diag(np.pi * angles)),
        params={"a": [float(x) for x in angles], "n1": n1},
    )


def hyperbolic_fixture(
    c: float = 0.1,
    epsilon: float = 0.0,
    rotation: float = 0.0,
    n1: int = 8,
    settings: Optional[NewtonSettings] = None,
) -> Fixture:
    """A CP^1 system whose poles are hyperbolic fixed points.

    ``H = pi c X Y / |z|^2 + rotation (|z_1|^2 - |z_2|^2) + epsilon |z_1|^4 / |z|^2``
    with ``X = 2 Re(conj(z_1) z_2)`` and ``Y = -2 Im(conj(z_1) z_2)``. At a pole
    the projectivized flow is ``u' = 4 pi c conj(u)`` rotated at rate
    ``4 (rotation + epsilon)``; it is hyperbolic when ``pi c`` exceeds that rate
    over 4.

    Raises:
        VerificationError: If the linearized return map at a pole has an
            eigenvalue within 0.05 of the unit circle.
    """
    if n1 < 2 or n1 % 2:
        raise ValueError(f"n1 must be even and >= 2, got {n1}")
    cx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    cy = np.array([[0.0, 1j], [-1j, 0.0]])
    e1 = np.diag([1.0, 0.0]).astype(complex)
    terms: List[Tuple[float, np.ndarray, np.ndarray]] = [(np.pi * c, cx, cy)]
    if epsilon:
        terms.append((epsilon, e1, e1))
    table = HamiltonianTable(
        quadratic=rotation * np.diag([1.0, -1.0]).astype(complex),
        ratio_terms=tuple(terms),
    )
    flow = tuple_from_flow(table.field(name="hyperbolic"), n1 - 1, settings=settings)
    steps = flow.with_identity()
    known: List[KnownFixedPoint] = []
    for j, pole_action in enumerate(
        [(rotation + epsilon) / np.pi, -rotation / np.pi]
    ):
        z = from_complex(np.eye(2)[j])
        end = apply_tuple(steps, z, settings)
        t = float(np.angle(to_complex(end) @ np.conj(to_complex(z)))) / (2 * np.pi)
        lin = projective_linearization(steps, z, t, settings)
        moduli = np.abs(np.linalg.eigvals(lin))
        gap = float(np.min(np.abs(moduli - 1.0)))
        if gap < 0.05:
            raise VerificationError(
                f"Pole {j} is not hyperbolic: eigenvalue moduli {moduli}"
            )
        known.append(
            KnownFixedPoint(z=z, action=float(np.mod(t, 1.0)), label=f"pole{j}")
        )
        logger.debug(
            "Pole %d: action %.6f (flow value %.6f), moduli %s",
            j,
            t,
            pole_action,
            moduli,
        )
    return Fixture(
        name="hyperbolic",
        steps=steps,
        d=1,
        known_fixed_points=tuple(known),
        hamiltonian=table,
        params={"c": c, "epsilon": epsilon, "rotation": rotation, "n1": n1},
    )


def identity_fixture(d: int, n1: int = 4) -> Fixture:
    """The identity of CP^d; every direction is fixed with action 0."""
    if n1 < 2 or n1 % 2:
        raise ValueError(f"n1 must be even and >= 2, got {n1}")
    return Fixture(
        name="identity",
        steps=StepTuple.identity(d + 1, n1),
        d=d,
        hamiltonian=HamiltonianTable(np.zeros((d + 1, d + 1))),
        params={"d": d, "n1": n1},
    )


def hamiltonian_fixture(
    table: HamiltonianTable,
    n1: int = 8,
    settings: Optional[NewtonSettings] = None,
) -> Fixture:
    """Fixture of the time-one map of an inline Hamiltonian table."""
    if n1 < 2 or n1 % 2:
        raise ValueError(f"n1 must be even and >= 2, got {n1}")
    if table.is_zero:
        return identity_fixture(table.dim - 1, n1)
    flow = tuple_from_flow(table.field(name="inline"), n1 - 1, settings=settings)
    return Fixture(
        name="hamiltonian",
        steps=flow.with_identity(),
        d=table.dim - 1,
        hamiltonian=table,
        params={"n1": n1},
    )


def load_fixture(
    data: Dict[str, Any], settings: Optional[NewtonSettings] = None
) -> Fixture:
    """Build a fixture from its JSON description and verify its known data."""
    name = data.get("name")
    n1 = data.get("n1")
    if name == "pseudo_rotation":
        fixture = pseudo_rotation_fixture(data["a"], n1=n1 or 4)
    elif name == "hyperbolic":
        fixture = hyperbolic_fixture(
            c=data.get("c", 0.1),
            epsilon=data.get("epsilon", 0.0),
            rotation=data.get("rotation", 0.0),
            n1=n1 or 8,
            settings=settings,
        )
    elif name == "identity":
        fixture = identity_fixture(int(data.get("d", 1)), n1=n1 or 4)
    elif name == "hamiltonian":
        fixture = hamiltonian_fixture(
            HamiltonianTable.from_dict(data["hamiltonian"]),
            n1=n1 or 8,
            settings=settings,
        )
    else:
        raise ValueError(
            f"Unknown fixture '{name}'. Expected one of "
            "pseudo_rotation, hyperbolic, identity, hamiltonian"
        )
    verify_fixture(fixture, settings)
    return fixture


def verify_fixture(
    fixture: Fixture, settings: Optional[NewtonSettings] = None, tol: float = 1e-9
) -> List[float]:
    """Check every known fixed direction against the fixture's tuple.

    Returns:
        The residuals ``|exp(-2 i pi t) Phi(Z) - Z|``.

    Raises:
        VerificationError: If a residual exceeds ``tol``.
    """
    residuals = []
    for point in fixture.known_fixed_points:
        end = apply_tuple(fixture.steps, point.z, settings)
        rotated = complex_scalar(np.exp(-2j * np.pi * point.action), fixture.d + 1) @ end
        residual = float(np.linalg.norm(rotated - point.z))
        if residual > tol:
            raise VerificationError(
                f"Fixture '{fixture.name}': known point {point.label} has residual "
                f"{residual:.3e}"
            )
        residuals.append(residual)
    return residuals


def _complex_to_json(m: np.ndarray) -> Dict[str, Any]:
    arr = np.asarray(m, dtype=complex)
    return {"real": arr.real.tolist(), "imag": arr.imag.tolist()}


def _complex_from_json(data: Any) -> np.ndarray:
    if isinstance(data, dict):
        real = np.asarray(data["real"], dtype=float)
        imag = np.asarray(data.get("imag", np.zeros_like(real)), dtype=float)
        return real + 1j * imag
    return np.asarray(data, dtype=complex)
