"""Broken-trajectory calculus.

A discrete Hamiltonian diffeomorphism is stored as a tuple of elementary
generating functions ``f_k``. Each step ``sigma_k`` is derived from ``f_k``
through ``grad f_k(w) = i (z - sigma_k(z))`` with ``w = (z + sigma_k(z)) / 2``,
and the tuple carries the function

    F(v) = sum_k f_k((v_k + v_{k+1}) / 2) + 1/2 <v_k, i v_{k+1}>,  v_{n+1} = v_1,

whose critical points are the closed broken trajectories of the tuple.
Slot vectors are handled as arrays of shape ``(n, 2d)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg, sparse

from symplectic_genfun.errors import (
    CBlockSingular,
    NewtonDivergence,
    VerificationError,
)
from symplectic_genfun.symplin import (
    QuadForm,
    complex_structure,
    mul_i,
    quad_index,
)

logger = logging.getLogger(__name__)

ValueFn = Callable[[np.ndarray], float]
VectorFn = Callable[[np.ndarray], np.ndarray]


# ------------------------------------------------------------------------------
# Configuration Classes
# ------------------------------------------------------------------------------
@dataclass
class NewtonSettings:
    """Configuration for the Newton inversion of elementary steps."""

    tol: float
    max_iter: int
    min_damping: float
    working_radius: float
    certificate_samples: int

    def __init__(
        self,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
        min_damping: Optional[float] = None,
        working_radius: Optional[float] = None,
        certificate_samples: Optional[int] = None,
    ) -> None:
        """Initialize NewtonSettings with custom or default values.

        Args:
            tol: Relative residual tolerance (default: 1e-12)
            max_iter: Newton iteration cap (default: 50)
            min_damping: Smallest backtracking factor (default: 1/64)
            working_radius: Radius of the sampled working ball (default: 4)
            certificate_samples: Points sampled per step by certify (default: 200)
        """
        self.tol = tol if tol is not None else 1e-12
        self.max_iter = max_iter if max_iter is not None else 50
        self.min_damping = min_damping if min_damping is not None else 1.0 / 64
        self.working_radius = working_radius if working_radius is not None else 4.0
        self.certificate_samples = (
            certificate_samples if certificate_samples is not None else 200
        )

    @classmethod
    def default(cls) -> "NewtonSettings":
        """Create NewtonSettings with default values."""
        return cls()


# ------------------------------------------------------------------------------
# Domain types
# ------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ElementaryGen:
    """A generating function without auxiliary variables on C^d.

    ``matrix`` is set for quadratic functions ``f(w) = w^T K w``; steps of
    quadratic functions are solved exactly instead of by Newton.
    """

    d: int
    value: ValueFn
    gradient: VectorFn
    hessian: VectorFn
    is_quadratic: bool = False
    is_conical: bool = False
    name: str = ""
    matrix: Optional[np.ndarray] = None

    @classmethod
    def zero(cls, d: int) -> "ElementaryGen":
        """The identity step."""
        return cls.from_matrix(np.zeros((2 * d, 2 * d)), name="id")

    @classmethod
    def from_matrix(cls, k: ArrayLike, name: str = "") -> "ElementaryGen":
        """Quadratic function ``w^T K w`` for a symmetric K."""
        km = np.array(k, dtype=float)
        km = 0.5 * (km + km.T)
        km.setflags(write=False)
        j = complex_structure(km.shape[0] // 2)
        return cls(
            d=km.shape[0] // 2,
            value=lambda w: float(w @ km @ w),
            gradient=lambda w: 2.0 * (km @ w),
            hessian=lambda w: 2.0 * km,
            is_quadratic=True,
            is_conical=bool(np.allclose(km @ j, j @ km, atol=1e-12)),
            name=name,
            matrix=km,
        )

    @classmethod
    def from_quadform(cls, q: QuadForm, name: str = "") -> "ElementaryGen":
        return cls.from_matrix(q.matrix, name=name)

    @property
    def is_zero(self) -> bool:
        return self.matrix is not None and not np.any(self.matrix)

    def scaled(self, c: float) -> "ElementaryGen":
        """The function ``c * f``."""
        if self.matrix is not None:
            return ElementaryGen.from_matrix(c * self.matrix, name=self.name)
        value, gradient, hessian = self.value, self.gradient, self.hessian
        return ElementaryGen(
            d=self.d,
            value=lambda w: c * value(w),
            gradient=lambda w: c * gradient(w),
            hessian=lambda w: c * hessian(w),
            is_quadratic=self.is_quadratic,
            is_conical=self.is_conical,
            name=self.name,
        )

    def gradient_error(
        self, rng: np.random.Generator, samples: int = 20, h: float = 1e-6
    ) -> float:
        """Worst relative error between the gradient and central differences."""
        worst = 0.0
        eye = np.eye(2 * self.d)
        for _ in range(samples):
            w = rng.normal(size=2 * self.d)
            fd = np.array(
                [
                    (self.value(w + h * e) - self.value(w - h * e)) / (2 * h)
                    for e in eye
                ]
            )
            g = self.gradient(w)
            scale = max(float(np.linalg.norm(g)), 1e-8)
            worst = max(worst, float(np.linalg.norm(fd - g)) / scale)
        return worst

    def conical_error(self, rng: np.random.Generator, samples: int = 20) -> float:
        """Worst residual of ``f(lam w) = |lam|^2 f(w)`` on random samples."""
        worst = 0.0
        for _ in range(samples):
            w = rng.normal(size=2 * self.d)
            lam = complex(rng.normal(), rng.normal())
            scaled = _scale_complex(w, lam)
            lhs = self.value(scaled)
            rhs = abs(lam) ** 2 * self.value(w)
            worst = max(worst, abs(lhs - rhs) / (1.0 + abs(rhs)))
        return worst


@dataclass(frozen=True)
class SmallnessCertificate:
    """Outcome of sampling Newton inversion over the working ball."""

    passed: bool
    samples: int
    failures: int
    worst_residual: float


@dataclass(frozen=True, eq=False)
class StepTuple:
    """An ordered tuple of elementary generating functions on C^d."""

    steps: Tuple[ElementaryGen, ...]
    d: int

    def __post_init__(self) -> None:
        steps = tuple(self.steps)
        if not steps:
            raise ValueError("A step tuple needs at least one step")
        for step in steps:
            if step.d != self.d:
                raise ValueError(
                    f"Step '{step.name}' acts on C^{step.d}, tuple is on C^{self.d}"
                )
        object.__setattr__(self, "steps", steps)

    @classmethod
    def identity(cls, d: int, n: int = 1) -> "StepTuple":
        return cls(tuple(ElementaryGen.zero(d) for _ in range(n)), d)

    @property
    def n(self) -> int:
        return len(self.steps)

    @property
    def is_odd(self) -> bool:
        return self.n % 2 == 1

    @property
    def is_quadratic(self) -> bool:
        return all(step.is_quadratic for step in self.steps)

    @property
    def is_conical(self) -> bool:
        return all(step.is_conical for step in self.steps)

    def __len__(self) -> int:
        return self.n

    def __iter__(self) -> Iterator[ElementaryGen]:
        return iter(self.steps)

    def __getitem__(self, k: int) -> ElementaryGen:
        return self.steps[k]

    def __add__(self, other: "StepTuple") -> "StepTuple":
        return self.concat(other)

    def concat(self, *others: "StepTuple") -> "StepTuple":
        steps = list(self.steps)
        for other in others:
            if other.d != self.d:
                raise ValueError(f"Cannot concatenate C^{self.d} and C^{other.d} tuples")
            steps.extend(other.steps)
        return StepTuple(tuple(steps), self.d)

    def repeat(self, m: int) -> "StepTuple":
        if m < 1:
            raise ValueError(f"Repetition count must be positive, got {m}")
        return StepTuple(self.steps * m, self.d)

    def with_identity(self) -> "StepTuple":
        return StepTuple(self.steps + (ElementaryGen.zero(self.d),), self.d)

    def certify(
        self,
        rng: np.random.Generator,
        settings: Optional[NewtonSettings] = None,
    ) -> SmallnessCertificate:
        """Sample Newton inversion of every step over the working ball."""
        settings = settings or NewtonSettings.default()
        failures = 0
        worst = 0.0
        count = 0
        for step in self.steps:
            if step.is_zero:
                continue
            for _ in range(settings.certificate_samples):
                z = _random_in_ball(rng, 2 * self.d, settings.working_radius)
                count += 1
                try:
                    sigma_z, w = step_map(step, z, settings)
                except NewtonDivergence:
                    failures += 1
                    continue
                residual = np.linalg.norm(
                    step.gradient(w) - mul_i(z - sigma_z)
                )
                worst = max(worst, float(residual))
        if failures:
            logger.warning(
                "Smallness certificate failed on %d of %d samples", failures, count
            )
        return SmallnessCertificate(
            passed=failures == 0,
            samples=count,
            failures=failures,
            worst_residual=worst,
        )


@dataclass(frozen=True, eq=False)
class BrokenCoordinates:
    """The v, w and z coordinates of one point of a tuple's domain."""

    v: np.ndarray
    w: np.ndarray
    z: np.ndarray

    @property
    def n(self) -> int:
        return self.v.shape[0]


@dataclass(frozen=True, eq=False)
class FiberedLinearMap:
    """The map ``(q; xi) -> (q; xi - c^-1 b^T q)`` in permuted coordinates."""

    matrix: np.ndarray
    base: np.ndarray

    def __call__(self, x: ArrayLike) -> np.ndarray:
        return self.matrix @ np.asarray(x, dtype=float)


# ------------------------------------------------------------------------------
# Elementary steps
# ------------------------------------------------------------------------------
def step_map(
    f: ElementaryGen,
    z: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> Tuple[np.ndarray, np.ndarray]:
    """Apply one elementary step.

    Solves ``z = w - (i/2) grad f(w)`` for the midpoint ``w`` and returns
    ``(sigma(z), w)`` with ``sigma(z) = 2 w - z``.

    Args:
        f: The elementary generating function of the step.
        z: Input point.
        settings: Newton settings.

    Returns:
        Tuple of the image point and the midpoint.

    Raises:
        NewtonDivergence: If damped Newton from ``w = z`` does not converge.
    """
    settings = settings or NewtonSettings.default()
    z = np.asarray(z, dtype=float)
    if z.shape != (2 * f.d,):
        raise ValueError(f"Expected a point of C^{f.d}, got shape {z.shape}")
    if f.is_zero:
        return z.copy(), z.copy()
    j = complex_structure(f.d)
    eye = np.eye(2 * f.d)
    if f.matrix is not None:
        w = np.linalg.solve(eye - j @ f.matrix, z)
        return 2.0 * w - z, w

    threshold = settings.tol * (1.0 + float(np.linalg.norm(z)))
    w = z.copy()
    r = w - 0.5 * mul_i(f.gradient(w)) - z
    rn = float(np.linalg.norm(r))
    for _ in range(settings.max_iter):
        if rn <= threshold:
            break
        jac = eye - 0.5 * j @ f.hessian(w)
        try:
            dw = np.linalg.solve(jac, -r)
        except np.linalg.LinAlgError as exc:
            raise NewtonDivergence("Singular step Jacobian in Newton inversion") from exc
        damping = 1.0
        while True:
            w_new = w + damping * dw
            r_new = w_new - 0.5 * mul_i(f.gradient(w_new)) - z
            rn_new = float(np.linalg.norm(r_new))
            if rn_new < (1.0 - 1e-4 * damping) * rn or damping <= settings.min_damping:
                break
            damping *= 0.5
        w, r, rn = w_new, r_new, rn_new
    if not rn <= threshold:
        raise NewtonDivergence(
            f"Newton inversion of step '{f.name}' stopped at residual {rn:.3e} "
            f"after {settings.max_iter} iterations"
        )
    return 2.0 * w - z, w


def step_jacobian(f: ElementaryGen, w: ArrayLike) -> np.ndarray:
    """Derivative of the step map at the input whose midpoint is ``w``."""
    eye = np.eye(2 * f.d)
    if f.is_zero:
        return eye
    j = complex_structure(f.d)
    hess = f.hessian(np.asarray(w, dtype=float))
    return 2.0 * np.linalg.inv(eye - 0.5 * j @ hess) - eye


def orbit(
    steps: StepTuple,
    z1: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Inputs ``z_k``, midpoints ``w_k`` and end point of the orbit of ``z1``."""
    z = np.asarray(z1, dtype=float).copy()
    inputs = np.empty((steps.n, 2 * steps.d))
    mids = np.empty_like(inputs)
    for k, step in enumerate(steps):
        inputs[k] = z
        z, mids[k] = step_map(step, z, settings)
    return inputs, mids, z


def linearized_monodromy(
    steps: StepTuple,
    z: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> np.ndarray:
    """Derivative of the composed map at ``z``, the product of step Jacobians."""
    _, mids, _ = orbit(steps, z, settings)
    total = np.eye(2 * steps.d)
    for step, w in zip(steps, mids):
        total = step_jacobian(step, w) @ total
    return total


# ------------------------------------------------------------------------------
# Coordinate changes
# ------------------------------------------------------------------------------
def averaging_matrix(n: int) -> np.ndarray:
    """Scalar matrix of ``w_k = (v_k + v_{k+1}) / 2`` acting on the slot axis."""
    return 0.5 * (np.eye(n) + np.roll(np.eye(n), 1, axis=1))


def average(v: ArrayLike) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    return 0.5 * (arr + np.roll(arr, -1, axis=0))


def unaverage(w: ArrayLike) -> np.ndarray:
    """Inverse of :func:`average`, defined for an odd number of slots."""
    arr = np.asarray(w, dtype=float)
    n = arr.shape[0]
    if n % 2 == 0:
        raise ValueError(f"The averaging map is singular for an even size, got {n}")
    return np.linalg.solve(averaging_matrix(n), arr)


def coordinates_from_v(steps: StepTuple, v: ArrayLike) -> BrokenCoordinates:
    """Explicit ``v -> w -> z`` conversion; ``z_k = w_k - (i/2) grad f_k(w_k)``."""
    slots = _as_slots(steps, v)
    w = average(slots)
    grads = _gradients(steps, w)
    z = w - 0.5 * mul_i(grads)
    return BrokenCoordinates(v=slots, w=w, z=z)


def coordinates_from_z(
    steps: StepTuple,
    z: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> BrokenCoordinates:
    """The map ``z -> w`` by step inversion followed by ``w -> v``."""
    zs = _as_slots(steps, z)
    w = np.empty_like(zs)
    for k, step in enumerate(steps):
        _, w[k] = step_map(step, zs[k], settings)
    return BrokenCoordinates(v=unaverage(w), w=w, z=zs)


def trajectory(
    steps: StepTuple,
    z1: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> Tuple[BrokenCoordinates, np.ndarray]:
    """Open broken trajectory starting at ``z1`` and the end point ``Phi(z1)``.

    The Hessian of ``F`` at the returned v-point generates ``dPhi(z1)``; when
    ``z1`` is fixed the point is critical.
    """
    if not steps.is_odd:
        raise ValueError(f"Trajectory coordinates need an odd tuple, got n={steps.n}")
    inputs, mids, end = orbit(steps, z1, settings)
    return BrokenCoordinates(v=unaverage(mids), w=mids, z=inputs), end


# ------------------------------------------------------------------------------
# The composed generating function
# ------------------------------------------------------------------------------
def broken_value(steps: StepTuple, v: ArrayLike) -> float:
    """Value of ``F`` at the slot vector ``v``."""
    slots = _as_slots(steps, v)
    w = average(slots)
    total = sum(step.value(w[k]) for k, step in enumerate(steps))
    coupling = 0.5 * float(np.sum(slots * mul_i(np.roll(slots, -1, axis=0))))
    return float(total) + coupling


def broken_gradient(steps: StepTuple, v: ArrayLike) -> np.ndarray:
    """Gradient of ``F``, equal to ``i (z_k - sigma_{k-1}(z_{k-1}))`` slotwise."""
    slots = _as_slots(steps, v)
    w = average(slots)
    grads = _gradients(steps, w)
    return 0.5 * (grads + np.roll(grads, 1, axis=0)) + 0.5 * mul_i(
        np.roll(slots, -1, axis=0) - np.roll(slots, 1, axis=0)
    )


def broken_hessian(
    steps: StepTuple, v: ArrayLike, tol: Optional[float] = None
) -> QuadForm:
    """Hessian of ``F``, assembled block by block from its cyclic band."""
    slots = _as_slots(steps, v)
    n, dim = slots.shape
    w = average(slots)
    j = complex_structure(steps.d)
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    data: List[np.ndarray] = []
    local_r, local_c = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")

    def put(a: int, b: int, block: np.ndarray) -> None:
        rows.append((a * dim + local_r).ravel())
        cols.append((b * dim + local_c).ravel())
        data.append(np.asarray(block, dtype=float).ravel())

    for k, step in enumerate(steps):
        k1 = (k + 1) % n
        if not step.is_zero:
            quarter = 0.25 * step.hessian(w[k])
            for a in (k, k1):
                for b in (k, k1):
                    put(a, b, quarter)
        put(k, k1, 0.5 * j)
        put(k1, k, -0.5 * j)
    matrix = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n * dim, n * dim),
    ).toarray()
    return QuadForm(matrix, tol=tol)


def cyclic_band_order(n: int) -> np.ndarray:
    """Slot order ``0, n-1, 1, n-2, ...`` putting cyclic neighbours at most two apart."""
    order = np.empty(n, dtype=int)
    order[0::2] = np.arange((n + 1) // 2)
    order[1::2] = n - 1 - np.arange(n // 2)
    return order


def broken_hessian_index(steps: StepTuple, v: ArrayLike) -> Tuple[int, int]:
    """Index and nullity of the Hessian of ``F`` through its banded form.

    Reordering the slots by :func:`cyclic_band_order` turns the cyclic band
    into an ordinary band of half-width ``3 * 2d - 1``, so large tuples are
    handled in roughly linear time.
    """
    slots = _as_slots(steps, v)
    n, dim = slots.shape
    w = average(slots)
    j = complex_structure(steps.d)
    position = np.empty(n, dtype=int)
    position[cyclic_band_order(n)] = np.arange(n)
    width = min(3 * dim - 1, n * dim - 1)
    band = np.zeros((width + 1, n * dim))
    local_r, local_c = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")

    def put(a: int, b: int, block: np.ndarray) -> None:
        rows = (position[a] * dim + local_r).ravel()
        cols = (position[b] * dim + local_c).ravel()
        keep = rows <= cols
        np.add.at(
            band,
            (width + rows[keep] - cols[keep], cols[keep]),
            np.asarray(block, dtype=float).ravel()[keep],
        )

    for k, step in enumerate(steps):
        k1 = (k + 1) % n
        if not step.is_zero:
            quarter = 0.25 * step.hessian(w[k])
            for a in (k, k1):
                for b in (k, k1):
                    put(a, b, quarter)
        put(k, k1, 0.5 * j)
        put(k1, k, -0.5 * j)
    eig = linalg.eigvals_banded(band, lower=False)
    tol = 1e-8 * (1.0 + (2 * width + 1) * float(np.max(np.abs(band))))
    return int(np.count_nonzero(eig < -tol)), int(np.count_nonzero(np.abs(eig) <= tol))


def coupling_form(n: int, d: int) -> QuadForm:
    """Hessian of ``F`` for ``n`` identity steps on C^d."""
    return broken_hessian(StepTuple.identity(d, n), np.zeros((n, 2 * d)))


def nullity_transport(
    steps: StepTuple,
    z: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> Tuple[int, int]:
    """Kernel dimensions of the Hessian at the trajectory of ``z`` and of ``dPhi(z) - I``."""
    coords, _ = trajectory(steps, z, settings)
    _, hess_nullity = quad_index(broken_hessian(steps, coords.v))
    monodromy = linearized_monodromy(steps, z, settings)
    return hess_nullity, fixed_space_dimension(monodromy)


def fixed_space_dimension(m: ArrayLike, tol: Optional[float] = None) -> int:
    """``dim ker(M - I)`` from singular values."""
    arr = np.asarray(m, dtype=float)
    sv = np.linalg.svd(arr - np.eye(arr.shape[0]), compute_uv=False)
    if tol is None:
        tol = 1e-8 * (1.0 + float(np.linalg.norm(arr, 2)))
    return int(np.count_nonzero(sv <= tol))


# ------------------------------------------------------------------------------
# Algebraic reductions
# ------------------------------------------------------------------------------
def decompose_check(
    sigma: StepTuple, delta: StepTuple, v: ArrayLike
) -> Tuple[float, float]:
    """Both sides of the splitting of ``F_(sigma, delta)`` at the shared slots.

    The right side is ``F_(sigma,id)(v_1..v_{n+1}) + F_(delta,id)(v_{n+1}..v_{n+m}, v_1)``.
    """
    joined = sigma + delta
    slots = _as_slots(joined, v)
    n = sigma.n
    lhs = broken_value(joined, slots)
    head = broken_value(sigma.with_identity(), slots[: n + 1])
    tail = broken_value(
        delta.with_identity(), np.concatenate([slots[n:], slots[:1]], axis=0)
    )
    return lhs, head + tail


def reduce_quad0(
    q: QuadForm,
    base: Union[int, Sequence[int]],
    samples: int = 8,
    rng: Optional[np.random.Generator] = None,
) -> Tuple[FiberedLinearMap, np.ndarray]:
    """Fiberwise linear change making a zero-section generating form base-free.

    Args:
        q: Quadratic form over base coordinates and auxiliary coordinates.
        base: Number of leading real coordinates forming the base, or their
            explicit indices.
        samples: Random points on which base-independence is checked.
        rng: Random generator for the check.

    Returns:
        The map ``A`` (acting on the original coordinate order) and the
        auxiliary block ``c``, with ``Q(A x) = xi^T c xi``.

    Raises:
        CBlockSingular: When ``c`` is singular.
        VerificationError: When ``Q o A`` still depends on the base.
    """
    dim = q.dim
    base_idx = (
        np.arange(base) if isinstance(base, (int, np.integer)) else np.asarray(base)
    )
    fiber_idx = np.setdiff1d(np.arange(dim), base_idx)
    m = q.matrix
    b = m[np.ix_(base_idx, fiber_idx)]
    c = m[np.ix_(fiber_idx, fiber_idx)]
    sv = np.linalg.svd(c, compute_uv=False) if c.size else np.array([1.0])
    if sv.size and sv[-1] <= 1e-10 * (1.0 + sv[0]):
        raise CBlockSingular(
            f"Auxiliary block is singular (smallest singular value {sv[-1]:.3e})"
        )
    shift = np.linalg.solve(c, b.T)
    a_map = np.eye(dim)
    a_map[np.ix_(fiber_idx, base_idx)] = -shift
    composed = a_map.T @ m @ a_map
    rng = rng or np.random.default_rng(0)
    scale = 1.0 + float(np.linalg.norm(m, 2))
    for _ in range(samples):
        x = rng.normal(size=dim)
        grad = 2.0 * composed @ x
        if np.linalg.norm(grad[base_idx]) > 1e-9 * scale * np.linalg.norm(x):
            raise VerificationError(
                "Reduced form depends on the base: the form does not generate "
                "the zero section"
            )
    return FiberedLinearMap(matrix=a_map, base=base_idx), c


@dataclass(frozen=True)
class StabilizationReport:
    """Indices compared by :func:`stabilize`."""

    index_q: int
    index_delta: int
    index_delta_id: int
    composition_residual: float
    point_checks: Tuple[Tuple[int, int], ...] = ()

    @property
    def consistent(self) -> bool:
        return (
            self.index_q == self.index_delta == self.index_delta_id
            and all(lhs == rhs for lhs, rhs in self.point_checks)
        )


def step_matrix(f: ElementaryGen) -> np.ndarray:
    """Matrix of a quadratic step."""
    if f.matrix is None:
        raise ValueError(f"Step '{f.name}' is not quadratic")
    return step_jacobian(f, np.zeros(2 * f.d))


def stabilize(
    sigma: StepTuple,
    delta: StepTuple,
    points: Sequence[ArrayLike] = (),
) -> Tuple[QuadForm, StabilizationReport]:
    """Stabilization of ``F_(sigma, delta)`` by a unitary loop ``delta``.

    Returns the form ``Q(u) = F_delta(0, u)`` obtained by freezing the first
    slot of ``F_delta`` at zero, with a report comparing ``ind Q``,
    ``ind F_delta`` and ``ind F_(delta,id)``. Each of ``points`` (slot vectors of
    ``(sigma, delta)``) adds the check
    ``ind F_(sigma,delta)(p) = ind F_(sigma,id)(p_1..p_{m+1}) + ind Q``.

    Raises:
        ValueError: On parity or quadraticity violations.
        VerificationError: When ``delta`` does not compose to the identity or
            the indices disagree.
    """
    if sigma.n % 2:
        raise ValueError(f"sigma must have even size, got {sigma.n}")
    if not delta.is_odd:
        raise ValueError(f"delta must have odd size, got {delta.n}")
    if not delta.is_quadratic:
        raise ValueError("delta must consist of quadratic steps")
    product = np.eye(2 * delta.d)
    for step in delta:
        product = step_matrix(step) @ product
    residual = float(np.max(np.abs(product - np.eye(2 * delta.d))))
    if residual > 1e-9:
        raise VerificationError(
            f"delta does not compose to the identity (residual {residual:.3e})"
        )
    dim = 2 * delta.d
    zero = np.zeros((delta.n, dim))
    full = broken_hessian(delta, zero)
    q = QuadForm(full.matrix[dim:, dim:])
    index_q, _ = quad_index(q)
    index_delta, _ = quad_index(full)
    index_delta_id, _ = quad_index(
        broken_hessian(delta.with_identity(), np.zeros((delta.n + 1, dim)))
    )
    joined = sigma + delta
    head_tuple = sigma.with_identity()
    checks = []
    for p in points:
        slots = _as_slots(joined, p)
        lhs, _ = quad_index(broken_hessian(joined, slots))
        head, _ = quad_index(broken_hessian(head_tuple, slots[: sigma.n + 1]))
        checks.append((lhs, head + index_q))
    report = StabilizationReport(
        index_q=index_q,
        index_delta=index_delta,
        index_delta_id=index_delta_id,
        composition_residual=residual,
        point_checks=tuple(checks),
    )
    if not report.consistent:
        raise VerificationError(f"Stabilization indices disagree: {report}")
    return q, report


def common_factor_check(
    sigma: StepTuple,
    delta: StepTuple,
    delta_prime: StepTuple,
    z: ArrayLike,
    z_prime: ArrayLike,
    settings: Optional[NewtonSettings] = None,
    tol: float = 1e-10,
) -> bool:
    """Whether the sigma-segments of two trajectories have equal v-coordinates.

    ``z`` and ``z_prime`` are the step inputs of ``(sigma, delta, id)`` and
    ``(sigma, delta_prime, id)``. For an even total size the averaging map is
    singular; the trajectory must then close up (alternating sum of the ``w``
    vanishes) and the gauge ``v_1 = w_N`` fixes the solution.
    """
    if delta.n != delta_prime.n:
        raise ValueError(f"delta sizes differ: {delta.n} != {delta_prime.n}")
    first = (sigma + delta).with_identity()
    second = (sigma + delta_prime).with_identity()
    v_first = _v_from_inputs(first, z, settings)
    v_second = _v_from_inputs(second, z_prime, settings)
    if v_first is None or v_second is None:
        return False
    m = sigma.n
    gap = float(np.max(np.abs(v_first[:m] - v_second[:m])))
    logger.debug("Common factor gap %.3e", gap)
    return gap <= tol


def _v_from_inputs(
    steps: StepTuple, z: ArrayLike, settings: Optional[NewtonSettings]
) -> Optional[np.ndarray]:
    zs = _as_slots(steps, z)
    w = np.empty_like(zs)
    for k, step in enumerate(steps):
        _, w[k] = step_map(step, zs[k], settings)
    if steps.is_odd:
        return unaverage(w)
    signs = (-1.0) ** np.arange(steps.n)
    alternating = float(np.linalg.norm(signs @ w))
    if alternating > 1e-10 * (1.0 + float(np.linalg.norm(w))):
        logger.info("Trajectory does not close up (alternating sum %.3e)", alternating)
        return None
    v = np.empty_like(w)
    v[0] = w[-1]
    for k in range(steps.n - 1):
        v[k + 1] = 2.0 * w[k] - v[k]
    return v


# ------------------------------------------------------------------------------
# Helpers
# ------------------------------------------------------------------------------
def _as_slots(steps: StepTuple, v: ArrayLike) -> np.ndarray:
    arr = np.asarray(v, dtype=float)
    dim = 2 * steps.d
    if arr.size != steps.n * dim:
        raise ValueError(
            f"Expected {steps.n} slots of C^{steps.d}, got array of shape {arr.shape}"
        )
    return arr.reshape(steps.n, dim)


def _gradients(steps: StepTuple, w: np.ndarray) -> np.ndarray:
    grads = np.zeros_like(w)
    for k, step in enumerate(steps):
        if not step.is_zero:
            grads[k] = step.gradient(w[k])
    return grads


def _scale_complex(x: np.ndarray, lam: complex) -> np.ndarray:
    return lam.real * x + lam.imag * mul_i(x)


def _random_in_ball(rng: np.random.Generator, dim: int, radius: float) -> np.ndarray:
    direction = rng.normal(size=dim)
    direction /= np.linalg.norm(direction)
    return radius * rng.uniform() ** (1.0 / dim) * direction
