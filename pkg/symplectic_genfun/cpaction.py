"""The projective variational principle.

A conical tuple ``sigma`` of even size on C^{d+1} is completed by the rotation
tuple ``delta_t`` of odd size ``n2``. The broken function ``F_t`` of
``(sigma, delta_t)`` generates ``exp(-2 i pi t) Phi``, so its critical complex
lines are the fixed directions ``Z`` of ``Phi`` with ``Phi(Z) = exp(2 i pi t) Z``,
and ``t`` is their action.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from symplectic_genfun.errors import (
    DegenerateRecordError,
    NewtonDivergence,
    NoCriticalPoints,
    VerificationError,
)
from symplectic_genfun.genfun import (
    NewtonSettings,
    StepTuple,
    average,
    broken_hessian,
    broken_hessian_index,
    broken_value,
    fixed_space_dimension,
    orbit,
    step_jacobian,
    trajectory,
)
from symplectic_genfun.hamdiff import projective_linearization, rotation_tuple
from symplectic_genfun.symplin import (
    complex_scalar,
    from_complex,
    mul_i,
    quad_index,
    to_complex,
)

logger = logging.getLogger(__name__)

SigmaFamily = Callable[[float], StepTuple]

DEFAULT_RESOURCE_CAP = 1200


# ------------------------------------------------------------------------------
# Configuration Classes
# ------------------------------------------------------------------------------
@dataclass
class SolverSettings:
    """Configuration for the fixed-direction solver."""

    tol: float
    max_iter: int
    merge_t: float
    merge_projective: float
    random_seeds: int
    min_damping: float

    def __init__(
        self,
        tol: Optional[float] = None,
        max_iter: Optional[int] = None,
        merge_t: Optional[float] = None,
        merge_projective: Optional[float] = None,
        random_seeds: Optional[int] = None,
        min_damping: Optional[float] = None,
    ) -> None:
        """Initialize SolverSettings with custom or default values.

        Args:
            tol: Residual tolerance of the (t, Z) Newton iteration (default: 1e-11)
            max_iter: Iteration cap per seed (default: 60)
            merge_t: Records closer than this in t may be merged (default: 1e-7)
            merge_projective: Projective distance below which records merge
                (default: 1e-6)
            random_seeds: Random unit seeds added to the coordinate axes
                (default: 16)
            min_damping: Smallest backtracking factor (default: 1/64)
        """
        self.tol = tol if tol is not None else 1e-11
        self.max_iter = max_iter if max_iter is not None else 60
        self.merge_t = merge_t if merge_t is not None else 1e-7
        self.merge_projective = (
            merge_projective if merge_projective is not None else 1e-6
        )
        self.random_seeds = random_seeds if random_seeds is not None else 16
        self.min_damping = min_damping if min_damping is not None else 1.0 / 64

    @classmethod
    def default(cls) -> "SolverSettings":
        """Create SolverSettings with default values."""
        return cls()


# ------------------------------------------------------------------------------
# Families
# ------------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ConicalFamily:
    """The family ``t -> F_(sigma, delta_t)`` on ``t`` in ``(-epsilon, 1 + epsilon)``.

    ``sigma_family`` optionally interpolates ``sigma`` in a parameter ``s`` with
    ``sigma_family(1)`` equal to ``sigma``.
    """

    sigma: StepTuple
    n2: int = 5
    epsilon: float = 0.05
    sigma_family: Optional[SigmaFamily] = None

    def __post_init__(self) -> None:
        if self.sigma.n % 2:
            raise ValueError(f"sigma must have even size, got {self.sigma.n}")
        if self.n2 < 5 or self.n2 % 2 == 0:
            raise ValueError(f"n2 must be odd and >= 5, got {self.n2}")
        if not 0.0 < self.epsilon < 0.5:
            raise ValueError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if not self.sigma.is_conical:
            raise ValueError("sigma must consist of conical steps")

    @property
    def dim(self) -> int:
        """Complex dimension d + 1 of the lift."""
        return self.sigma.d

    @property
    def d(self) -> int:
        return self.sigma.d - 1

    @property
    def n1(self) -> int:
        return self.sigma.n

    @property
    def size(self) -> int:
        """Number of slots ``n1 + n2`` of ``F_t``."""
        return self.sigma.n + self.n2

    @property
    def auxiliary_dimension(self) -> int:
        """Complex dimension ``(d + 1)(n1 + n2)`` of the domain of ``F_t``."""
        return self.dim * self.size

    def window(self) -> Tuple[float, float]:
        return -self.epsilon, 1.0 + self.epsilon

    def sigma_at(self, s: float) -> StepTuple:
        if s == 1.0 or self.sigma_family is None:
            return self.sigma
        return self.sigma_family(s)

    def tuple_at(self, t: float, s: float = 1.0) -> StepTuple:
        """The tuple ``(sigma_s, delta_t)``."""
        return self.sigma_at(s) + rotation_tuple(t, self.n2, self.dim)

    def value(self, t: float, v: ArrayLike) -> float:
        return broken_value(self.tuple_at(t), v)

    def t_derivative(self, t: float, v: ArrayLike) -> float:
        """``d F_t / dt`` at ``v``; only the rotation slots depend on ``t``."""
        slots = np.asarray(v, dtype=float).reshape(self.size, 2 * self.dim)
        w = average(slots)[self.n1 : self.n1 + self.n2 - 1]
        angle = np.pi * t / (self.n2 - 1)
        coeff = -np.pi / (self.n2 - 1) / math.cos(angle) ** 2
        return float(coeff * np.sum(w * w))


# ------------------------------------------------------------------------------
# Records
# ------------------------------------------------------------------------------
CSV_COLUMNS_HEAD = ("t", "action_mod1", "index", "nullity", "residual")


@dataclass(frozen=True, eq=False)
class CriticalRecord:
    """A fixed direction ``Z`` of ``Phi`` with action ``t`` and Morse data."""

    t: float
    z: np.ndarray
    v: np.ndarray
    index: int
    nullity: int
    residual: float

    @property
    def action(self) -> float:
        return self.t

    @property
    def action_mod1(self) -> float:
        return float(np.mod(self.t, 1.0))

    @property
    def support(self) -> Tuple[int, int]:
        """Degrees ``[index, index + nullity]`` carrying the local invariant."""
        return self.index, self.index + self.nullity

    @property
    def is_degenerate(self) -> bool:
        return self.nullity > 0

    def to_dict(self) -> Dict[str, Any]:
        zc = to_complex(self.z)
        return {
            "t": self.t,
            "action_mod1": self.action_mod1,
            "index": self.index,
            "nullity": self.nullity,
            "residual": self.residual,
            "z_real": zc.real.tolist(),
            "z_imag": zc.imag.tolist(),
        }

    def csv_row(self) -> List[Any]:
        zc = to_complex(self.z)
        return [
            f"{self.t:.12g}",
            f"{self.action_mod1:.12g}",
            self.index,
            self.nullity,
            f"{self.residual:.3e}",
            *(f"{x:.12g}" for x in zc.real),
            *(f"{x:.12g}" for x in zc.imag),
        ]


def csv_header(dim: int) -> List[str]:
    """CSV header of records on C^dim."""
    return [
        *CSV_COLUMNS_HEAD,
        *(f"z{j}_real" for j in range(dim)),
        *(f"z{j}_imag" for j in range(dim)),
    ]


# ------------------------------------------------------------------------------
# Solver
# ------------------------------------------------------------------------------
def _map_and_derivative(
    sigma: StepTuple, z: np.ndarray, settings: Optional[NewtonSettings]
) -> Tuple[np.ndarray, np.ndarray]:
    _, mids, end = orbit(sigma, z, settings)
    total = np.eye(z.size)
    for step, w in zip(sigma, mids):
        total = step_jacobian(step, w) @ total
    return end, total


def _residual(
    sigma: StepTuple,
    t: float,
    z: np.ndarray,
    z_ref: np.ndarray,
    newton: Optional[NewtonSettings],
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    dim = z.size // 2
    image, deriv = _map_and_derivative(sigma, z, newton)
    rot = complex_scalar(np.exp(-2j * np.pi * t), dim)
    rotated = rot @ image
    res = np.concatenate([rotated - z, [z @ z - 1.0, mul_i(z_ref) @ z]])
    jac = np.zeros((z.size + 2, z.size + 1))
    jac[: z.size, 0] = -2.0 * np.pi * mul_i(rotated)
    jac[: z.size, 1:] = rot @ deriv - np.eye(z.size)
    jac[z.size, 1:] = 2.0 * z
    jac[z.size + 1, 1:] = mul_i(z_ref)
    return res, jac, rotated


def solve_fixed_direction(
    sigma: StepTuple,
    seed: ArrayLike,
    settings: Optional[SolverSettings] = None,
    newton: Optional[NewtonSettings] = None,
) -> Tuple[float, np.ndarray, float]:
    """Solve ``exp(-2 i pi t) Phi(Z) = Z`` with ``|Z| = 1`` from a seed.

    The phase is fixed by ``Im <Z_seed, Z> = 0``. Gauss-Newton with
    backtracking on the overdetermined system in ``(t, Z)``.

    Returns:
        ``(t, Z, residual)`` with ``t`` reduced to ``[0, 1)``.

    Raises:
        NewtonDivergence: If the iteration stalls above the tolerance.
    """
    settings = settings or SolverSettings.default()
    z = np.asarray(seed, dtype=float)
    z = z / np.linalg.norm(z)
    z_ref = z.copy()
    image = _map_and_derivative(sigma, z, newton)[0]
    t = float(np.angle(np.vdot(to_complex(z), to_complex(image)))) / (2 * np.pi)
    res, jac, _ = _residual(sigma, t, z, z_ref, newton)
    norm = float(np.linalg.norm(res))
    for _ in range(settings.max_iter):
        if norm < settings.tol:
            break
        step = np.linalg.lstsq(jac, -res, rcond=None)[0]
        damping = 1.0
        while damping >= settings.min_damping:
            t_new = t + damping * step[0]
            z_new = z + damping * step[1:]
            res_new, jac_new, _ = _residual(sigma, t_new, z_new, z_ref, newton)
            norm_new = float(np.linalg.norm(res_new))
            if norm_new < (1.0 - 1e-4 * damping) * norm:
                break
            damping *= 0.5
        else:
            raise NewtonDivergence(
                f"Fixed-direction solve stalled at residual {norm:.3e}"
            )
        t, z, res, jac, norm = t_new, z_new, res_new, jac_new, norm_new
    if norm >= settings.tol:
        raise NewtonDivergence(
            f"Fixed-direction solve stopped at residual {norm:.3e} after "
            f"{settings.max_iter} iterations"
        )
    t = float(np.mod(t, 1.0))
    if 1.0 - t < settings.merge_t:
        t = 0.0
    z = z / np.linalg.norm(z)
    rot = complex_scalar(np.exp(-2j * np.pi * t), z.size // 2)
    residual = float(np.linalg.norm(rot @ _map_and_derivative(sigma, z, newton)[0] - z))
    return t, z, residual


def record_at(
    family: ConicalFamily,
    t: float,
    z: ArrayLike,
    residual: float = 0.0,
    newton: Optional[NewtonSettings] = None,
) -> CriticalRecord:
    """Critical record of ``F_t`` at the closed trajectory of ``z``.

    The Hessian kernel always contains the complex line of the trajectory;
    the reported nullity excludes it.
    """
    z = np.asarray(z, dtype=float)
    coords, _ = trajectory(family.tuple_at(t), z, newton)
    index, raw = broken_hessian_index(family.tuple_at(t), coords.v)
    return CriticalRecord(
        t=float(t),
        z=z,
        v=coords.v,
        index=index,
        nullity=max(raw - 2, 0),
        residual=residual,
    )


def default_seeds(dim: int, count: int, rng: np.random.Generator) -> List[np.ndarray]:
    """Coordinate axes of C^dim followed by ``count`` random unit vectors."""
    seeds = [from_complex(np.eye(dim)[j]) for j in range(dim)]
    for _ in range(count):
        x = rng.normal(size=2 * dim)
        seeds.append(x / np.linalg.norm(x))
    return seeds


def projective_distance(z1: ArrayLike, z2: ArrayLike) -> float:
    """``sqrt(1 - |<Z1, Z2>|^2)`` for unit vectors."""
    inner = abs(np.vdot(to_complex(z1), to_complex(z2)))
    return math.sqrt(max(0.0, 1.0 - min(inner, 1.0) ** 2))


def _same_orbit(
    a: Tuple[float, np.ndarray], b: Tuple[float, np.ndarray], settings: SolverSettings
) -> bool:
    dt = abs(a[0] - b[0])
    dt = min(dt, 1.0 - dt)
    return dt < settings.merge_t and projective_distance(a[1], b[1]) < settings.merge_projective


def critical_points(
    family: ConicalFamily,
    seeds: Union[int, Sequence[ArrayLike], None] = None,
    settings: Optional[SolverSettings] = None,
    newton: Optional[NewtonSettings] = None,
    rng: Optional[np.random.Generator] = None,
    workers: int = 1,
    log: Optional[logging.Logger] = None,
) -> List[CriticalRecord]:
    """Fixed directions of ``Phi`` as critical records of ``F_t``, one per S^1-orbit.

    Args:
        family: The conical family.
        seeds: Explicit unit seeds, or the number of random seeds added to
            the coordinate axes (default: ``settings.random_seeds``).
        settings: Solver settings.
        newton: Step inversion settings.
        rng: Random generator for seeding.
        workers: Number of threads solving seeds concurrently.
        log: Logger for per-seed diagnostics (default: the module logger).

    Returns:
        Records sorted by action.

    Raises:
        NoCriticalPoints: If no seed converged.
    """
    log = log or logger
    settings = settings or SolverSettings.default()
    if seeds is None or isinstance(seeds, int):
        count = settings.random_seeds if seeds is None else seeds
        seed_list = default_seeds(family.dim, count, rng or np.random.default_rng(0))
    else:
        seed_list = [np.asarray(s, dtype=float) for s in seeds]

    def solve(seed: np.ndarray) -> Optional[Tuple[float, np.ndarray, float]]:
        try:
            return solve_fixed_direction(family.sigma, seed, settings, newton)
        except NewtonDivergence as exc:
            log.debug("Seed dropped: %s", exc)
            return None

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            solutions = list(pool.map(solve, seed_list))
    else:
        solutions = [solve(seed) for seed in seed_list]

    merged: List[Tuple[float, np.ndarray, float]] = []
    for sol in solutions:
        if sol is None:
            continue
        if any(_same_orbit((sol[0], sol[1]), (m[0], m[1]), settings) for m in merged):
            continue
        merged.append(sol)
    failed = sum(sol is None for sol in solutions)
    if failed:
        log.info("%d of %d seeds did not converge", failed, len(seed_list))
    if not merged:
        raise NoCriticalPoints(
            f"No fixed direction found from {len(seed_list)} seeds"
        )
    records = sorted(
        (record_at(family, t, z, res, newton) for t, z, res in merged),
        key=lambda r: (r.t, r.index),
    )
    if len(records) < family.d + 1:
        log.warning(
            "Found %d fixed directions, fewer than the %d guaranteed on CP^%d",
            len(records),
            family.d + 1,
            family.d,
        )
    degenerate = [r for r in records if r.is_degenerate]
    if degenerate:
        log.warning("%d of %d records are degenerate", len(degenerate), len(records))
    return records


def quotient_index(
    family: ConicalFamily, record: CriticalRecord
) -> Tuple[int, int]:
    """Index and nullity of the Hessian restricted to the complement of ``C v``.

    This is the Hessian of the action on the gauge-fixed chart of the
    projective space and must agree with the record's own data.
    """
    hess = broken_hessian(family.tuple_at(record.t), record.v)
    v = record.v.ravel()
    line = np.column_stack([v, mul_i(record.v).ravel()])
    basis = linalg.null_space(line.T)
    return quad_index(hess.restrict(basis))


def action_spectrum(
    source: Union[ConicalFamily, Sequence[CriticalRecord]],
    tol: float = 1e-7,
    **kwargs: Any,
) -> List[Tuple[float, int]]:
    """Actions mod 1 with their number of fixed directions.

    Accepts a family (solved with ``critical_points(family, **kwargs)``) or
    precomputed records. Values within ``tol`` on the circle are grouped.
    """
    records = (
        critical_points(source, **kwargs) if isinstance(source, ConicalFamily) else source
    )
    values = sorted(r.action_mod1 for r in records)
    groups: List[List[float]] = []
    for value in values:
        if groups and value - groups[-1][-1] < tol:
            groups[-1].append(value)
        else:
            groups.append([value])
    if len(groups) > 1 and groups[0][0] + 1.0 - groups[-1][-1] < tol:
        groups[0] = groups.pop() + groups[0]
    return [(float(g[0]) if g[0] < 1.0 - tol else 0.0, len(g)) for g in groups]


# ------------------------------------------------------------------------------
# Checks
# ------------------------------------------------------------------------------
@dataclass(frozen=True)
class MonotonicityReport:
    """Sampled signs of ``d F_t / dt``."""

    max_derivative: float
    sigma_max_derivative: float
    max_increment: float
    samples: int

    @property
    def margin(self) -> float:
        return -self.sigma_max_derivative


def delta_monotonicity(
    family: ConicalFamily,
    samples: int = 200,
    rng: Optional[np.random.Generator] = None,
    newton: Optional[NewtonSettings] = None,
    t_grid: int = 9,
) -> MonotonicityReport:
    """Check that ``F_t`` is nonincreasing in ``t`` and strictly so on open trajectories.

    Random unit ``v`` give the global sign; the v-points of open broken
    trajectories from random unit ``z`` (whose gradient lives in the first
    slot) give the strict one. ``t -> F_t(v)`` is also sampled on a grid of
    the window.

    Raises:
        VerificationError: If some sample violates either sign.
    """
    rng = rng or np.random.default_rng(0)
    lo, hi = family.window()
    ts = np.linspace(lo, hi, t_grid)
    worst = -np.inf
    worst_sigma = -np.inf
    increment = -np.inf
    shape = (family.size, 2 * family.dim)
    for _ in range(samples):
        v = rng.normal(size=shape)
        v /= np.linalg.norm(v)
        t = float(rng.uniform(lo, hi))
        worst = max(worst, family.t_derivative(t, v))
        values = [family.value(s, v) for s in ts]
        increment = max(increment, float(np.max(np.diff(values))))
        z = rng.normal(size=2 * family.dim)
        coords, _ = trajectory(family.tuple_at(t), z / np.linalg.norm(z), newton)
        worst_sigma = max(worst_sigma, family.t_derivative(t, coords.v))
    report = MonotonicityReport(
        max_derivative=float(worst),
        sigma_max_derivative=float(worst_sigma),
        max_increment=increment,
        samples=samples,
    )
    if worst > 1e-12 or worst_sigma >= 0.0 or increment > 1e-12:
        raise VerificationError(f"F_t is not decreasing in t: {report}")
    return report


def recap_shift(
    family: ConicalFamily,
    record: CriticalRecord,
    newton: Optional[NewtonSettings] = None,
) -> Tuple[int, int]:
    """Indices of a fixed direction at actions ``t`` and ``t + 1``.

    Both are read on ``G_s = F_(sigma, id, delta_t, delta_s)`` at ``s = 0`` and
    ``s = 1``, whose critical points are the same closed trajectories.

    Raises:
        DegenerateRecordError: If the record has nullity.
        VerificationError: If the gap differs from ``2(d + 1)``.
    """
    if record.is_degenerate:
        raise DegenerateRecordError(
            f"Record at t={record.t:.6g} has nullity {record.nullity}"
        )
    head = family.sigma.with_identity() + rotation_tuple(record.t, family.n2, family.dim)
    indices = []
    for s in (0.0, 1.0):
        steps = head + rotation_tuple(s, family.n2, family.dim)
        coords, end = trajectory(steps, record.z, newton)
        gap = float(np.linalg.norm(end - record.z))
        if gap > 1e-8:
            raise VerificationError(f"Trajectory does not close at s={s} (gap {gap:.3e})")
        index, raw = broken_hessian_index(steps, coords.v)
        if raw != 2:
            raise VerificationError(f"Unexpected nullity {raw - 2} at s={s}")
        indices.append(index)
    if indices[1] - indices[0] != 2 * family.dim:
        raise VerificationError(
            f"Recapping shifts the index by {indices[1] - indices[0]}, "
            f"expected {2 * family.dim}"
        )
    return indices[0], indices[1]


def kernel_correspondence(
    family: ConicalFamily,
    record: CriticalRecord,
    newton: Optional[NewtonSettings] = None,
) -> Tuple[int, int]:
    """Hessian nullity (minus ``C v``) against ``dim ker(dphi - id)``.

    Raises:
        VerificationError: If the two counts differ.
    """
    _, raw = broken_hessian_index(family.tuple_at(record.t), record.v)
    lin = projective_linearization(family.sigma, record.z, record.t, newton)
    pair = (raw - 2, fixed_space_dimension(lin))
    if pair[0] != pair[1]:
        raise VerificationError(
            f"Kernel mismatch at t={record.t:.6g}: Hessian {pair[0]}, "
            f"linearization {pair[1]}"
        )
    return pair


# ------------------------------------------------------------------------------
# Iteration
# ------------------------------------------------------------------------------
def iterated_size(family: ConicalFamily, m: int) -> int:
    """Real dimension ``2(d + 1)(m n1 + n2)`` of the domain of the m-th iterate."""
    return 2 * family.dim * (m * family.n1 + family.n2)


def iterate_family(
    family: ConicalFamily, m: int, cap: int = DEFAULT_RESOURCE_CAP
) -> ConicalFamily:
    """Family of ``Phi^m``: ``sigma`` repeated ``m`` times.

    In the parameter ``s`` the blocks move one at a time: at ``s = (k + u)/m``
    the first ``k`` blocks are ``sigma_1``, the next is ``sigma_u`` and the
    rest ``sigma_0``.

    Raises:
        ValueError: If ``m < 1`` or ``(d + 1)(m n1 + n2)`` exceeds ``cap``.
    """
    if m < 1:
        raise ValueError(f"Iterate must be positive, got {m}")
    complex_size = family.dim * (m * family.n1 + family.n2)
    if complex_size > cap:
        raise ValueError(
            f"Iterate {m} needs {complex_size} complex dimensions, cap is {cap}"
        )
    if m == 1:
        return family
    base = family

    def sigma_family(s: float) -> StepTuple:
        pos = min(max(s, 0.0), 1.0) * m
        k = min(int(math.floor(pos)), m - 1)
        u = pos - k
        blocks = [base.sigma_at(1.0)] * k + [base.sigma_at(u)]
        blocks += [base.sigma_at(0.0)] * (m - k - 1)
        return blocks[0].concat(*blocks[1:])

    return ConicalFamily(
        sigma=family.sigma.repeat(m),
        n2=family.n2,
        epsilon=family.epsilon,
        sigma_family=sigma_family if family.sigma_family is not None else None,
    )


def dirichlet_iterate(
    actions: Sequence[float], c: float, mmax: int
) -> Optional[int]:
    """Smallest ``m`` in ``1..mmax`` with every ``m t_j`` within ``c`` of an integer."""
    t = np.asarray(actions, dtype=float)
    for m in range(1, mmax + 1):
        frac = np.mod(m * t, 1.0)
        if np.all(np.minimum(frac, 1.0 - frac) <= c):
            return m
    return None

