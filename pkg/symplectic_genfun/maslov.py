"""Maslov indices of symplectic paths and of fixed points.

The index of a path ``Gamma`` is ``ind(Q_1) - ind(Q_0)`` for a continuous family
``Q_t`` of quadratic generating functions of ``Gamma_t``. The family used here
is the broken generating function of the tuple of Cayley factors

    (base factors of Gamma_0, Gamma_{t/n} Gamma_0^-1, ..., Gamma_t Gamma_{t(n-1)/n}^-1)

with a fixed odd total size. Indices count strictly negative eigenvalues; with
that convention the iterated indices satisfy

    k * mean <= mas_k   and   mas_k + nullity_k <= k * mean + 2d.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import ArrayLike
from scipy import linalg

from symplectic_genfun.errors import (
    BottViolation,
    CayleySingular,
    ContinuationFailure,
    NewtonDivergence,
    SubdivisionFailure,
    VerificationError,
)
from symplectic_genfun.genfun import (
    ElementaryGen,
    NewtonSettings,
    StepTuple,
    broken_hessian_index,
    coupling_form,
    fixed_space_dimension,
    linearized_monodromy,
    orbit,
    step_jacobian,
    step_map,
    trajectory,
)
from symplectic_genfun.hamdiff import orthonormal_complement
from symplectic_genfun.symplin import (
    cayley_matrix,
    complex_scalar,
    complex_structure,
    complexify,
    quad_index,
    realify,
    symplectic_inverse,
    symplectic_residual,
    to_complex,
)

logger = logging.getLogger(__name__)

Sampler = Callable[[float], np.ndarray]


# ------------------------------------------------------------------------------
# Configuration Classes
# ------------------------------------------------------------------------------
@dataclass
class MaslovSettings:
    """Configuration for the piecewise-Cayley generating families."""

    initial_subdivisions: int
    cayley_guard: float
    max_factor_step: float
    check_grid: int
    max_refinements: int

    def __init__(
        self,
        initial_subdivisions: Optional[int] = None,
        cayley_guard: Optional[float] = None,
        max_factor_step: Optional[float] = None,
        check_grid: Optional[int] = None,
        max_refinements: Optional[int] = None,
    ) -> None:
        """Initialize MaslovSettings with custom or default values.

        Args:
            initial_subdivisions: Odd starting number of path factors (default: 5)
            cayley_guard: Bound on ||(I + M)^-1|| for every factor (default: 4)
            max_factor_step: Bound on ||M - I|| for path factors (default: 1.5)
            check_grid: Number of t values where factors are checked (default: 17)
            max_refinements: Number of n -> 2n + 1 refinements tried (default: 8)
        """
        self.initial_subdivisions = initial_subdivisions or 5
        self.cayley_guard = cayley_guard or 4.0
        self.max_factor_step = max_factor_step or 1.5
        self.check_grid = check_grid or 17
        self.max_refinements = max_refinements or 8

    @classmethod
    def default(cls) -> "MaslovSettings":
        """Create MaslovSettings with default values."""
        return cls()


# ------------------------------------------------------------------------------
# Paths
# ------------------------------------------------------------------------------
class SymplecticPath:
    """A path ``[0, 1] -> Sp(2d)`` extended by ``Gamma_{u+k} = Gamma_u Gamma_1^k``.

    ``sample`` gives the base path on ``[0, 1]``. An iterated path covers
    ``[0, length]`` of the base, and transitions ``Gamma_b Gamma_a^-1`` are
    assembled from base samples and powers of ``Gamma_1`` so that they stay
    well conditioned even when ``Gamma_1^k`` is not.
    """

    def __init__(
        self,
        sample: Sampler,
        d: int,
        length: int = 1,
        based: Optional[bool] = None,
        name: str = "",
    ) -> None:
        self._sample = sample
        self._cache: Dict[float, np.ndarray] = {}
        self.d = d
        self.length = length
        self.name = name
        self._end: Optional[np.ndarray] = None
        if based is None:
            start = np.asarray(sample(0.0), dtype=float)
            based = bool(np.allclose(start, np.eye(2 * d), rtol=0.0, atol=1e-12))
        self.based = based

    # -- sampling ---------------------------------------------------------------
    @property
    def end(self) -> np.ndarray:
        """The base endpoint ``Gamma_1``."""
        if self._end is None:
            self._end = self._base(1.0)
        return self._end

    def _base(self, theta: float) -> np.ndarray:
        cached = self._cache.get(theta)
        if cached is None:
            cached = np.asarray(self._sample(theta), dtype=float)
            self._cache[theta] = cached
        return cached

    def _split(self, u: float) -> Tuple[int, float]:
        k = math.floor(u)
        theta = u - k
        if theta == 0.0 and k > 0:
            return k - 1, 1.0
        return k, theta

    def _base_at(self, u: float) -> np.ndarray:
        k, theta = self._split(u)
        head = self._base(theta)
        if k == 0:
            return head
        return head @ np.linalg.matrix_power(self.end, k)

    def at(self, s: float) -> np.ndarray:
        """``Gamma`` at ``s`` in ``[0, 1]`` of this (possibly iterated) path."""
        return self._base_at(self.length * s)

    def transitions(self, points: Sequence[float]) -> List[np.ndarray]:
        """``Gamma_{p_{i+1}} Gamma_{p_i}^-1`` for consecutive points of ``[0, 1]``."""
        parts = []
        for s in points:
            k, theta = self._split(self.length * s)
            parts.append((k, self._base(theta)))
        out = []
        for (k0, g0), (k1, g1) in zip(parts[:-1], parts[1:]):
            middle = np.linalg.matrix_power(self.end, k1 - k0) if k1 != k0 else None
            inv = symplectic_inverse(g0)
            out.append(g1 @ middle @ inv if middle is not None else g1 @ inv)
        return out

    # -- constructions ----------------------------------------------------------
    def iterate(self, k: int) -> "SymplecticPath":
        """The path ``s -> Gamma_{k s}``."""
        if k < 1:
            raise ValueError(f"Iterate must be positive, got {k}")
        if not self.based:
            raise ValueError("Only paths starting at the identity can be iterated")
        path = SymplecticPath(
            self._sample, self.d, self.length * k, based=True, name=f"{self.name}^{k}"
        )
        path._end = self._end
        path._cache = self._cache
        return path

    def reverse(self) -> "SymplecticPath":
        return SymplecticPath(lambda s: self.at(1.0 - s), self.d, name=f"rev({self.name})")

    def concat(self, other: "SymplecticPath", tol: float = 1e-9) -> "SymplecticPath":
        """Run ``self`` then ``other``; requires ``other`` to start where ``self`` ends."""
        if other.d != self.d:
            raise ValueError(f"Dimension mismatch: {self.d} against {other.d}")
        gap = float(np.max(np.abs(self.at(1.0) - other.at(0.0))))
        if gap > tol * (1.0 + float(np.max(np.abs(self.at(1.0))))):
            raise ValueError(f"Paths do not connect (gap {gap:.3e})")

        def sample(s: float) -> np.ndarray:
            return self.at(2.0 * s) if s <= 0.5 else other.at(2.0 * s - 1.0)

        return SymplecticPath(sample, self.d, name=f"{self.name}*{other.name}")

    def direct_sum(self, other: "SymplecticPath") -> "SymplecticPath":
        return SymplecticPath(
            lambda s: linalg.block_diag(self.at(s), other.at(s)),
            self.d + other.d,
            name=f"{self.name}+{other.name}",
        )

    def conjugate(self, a: ArrayLike) -> "SymplecticPath":
        """The path ``A Gamma A^-1`` for a symplectic A."""
        am = np.asarray(a, dtype=float)
        ainv = symplectic_inverse(am)
        return SymplecticPath(lambda s: am @ self.at(s) @ ainv, self.d, name=self.name)

    def reparametrize(self, phi: Callable[[float], float]) -> "SymplecticPath":
        """The path ``s -> Gamma_phi(s)`` for ``phi`` fixing 0 and 1."""
        return SymplecticPath(lambda s: self.at(phi(s)), self.d, name=self.name)

    def block(self, rows: np.ndarray) -> "SymplecticPath":
        """Restriction to an invariant coordinate block."""
        idx = np.asarray(rows)
        return SymplecticPath(
            lambda s: self.at(s)[np.ix_(idx, idx)], idx.size // 2, name=self.name
        )

    @classmethod
    def rotation(cls, rates: ArrayLike) -> "SymplecticPath":
        """``diag(exp(2 i pi b_j s))`` on C^len(rates)."""
        b = np.atleast_1d(np.asarray(rates, dtype=float))
        return cls(
            lambda s: realify(np.diag(np.exp(2j * np.pi * b * s))),
            b.size,
            based=True,
            name=f"rot{b.tolist()}",
        )

    @classmethod
    def one_parameter(cls, s_matrix: ArrayLike) -> "SymplecticPath":
        """The linear flow ``exp(s J S)`` of a symmetric S."""
        sm = np.asarray(s_matrix, dtype=float)
        sm = 0.5 * (sm + sm.T)
        generator = complex_structure(sm.shape[0] // 2) @ sm
        return cls(
            lambda s: linalg.expm(s * generator), sm.shape[0] // 2, based=True, name="exp"
        )

    @classmethod
    def constant(cls, m: ArrayLike) -> "SymplecticPath":
        mm = np.asarray(m, dtype=float)
        return cls(lambda s: mm, mm.shape[0] // 2, name="const")

    @classmethod
    def from_fixed_point(
        cls,
        steps: StepTuple,
        z: ArrayLike,
        t: float,
        settings: Optional[NewtonSettings] = None,
    ) -> "SymplecticPath":
        """Linearized path of ``exp(-2 i pi t s) Phi_s`` at a fixed direction.

        ``Phi_s`` runs through the steps of the tuple, the step in progress
        scaled by its completed fraction.
        """
        z = np.asarray(z, dtype=float)
        inputs, mids, _ = orbit(steps, z, settings)
        n = steps.n
        prefix = [np.eye(2 * steps.d)]
        for step, w in zip(steps, mids):
            prefix.append(step_jacobian(step, w) @ prefix[-1])

        def sample(theta: float) -> np.ndarray:
            pos = theta * n
            k = min(int(math.floor(pos)), n - 1)
            frac = pos - k
            if frac <= 0.0:
                lin = prefix[k]
            elif frac >= 1.0:
                lin = prefix[k + 1]
            else:
                partial = steps[k].scaled(frac)
                _, w = step_map(partial, inputs[k], settings)
                lin = step_jacobian(partial, w) @ prefix[k]
            return complex_scalar(np.exp(-2j * np.pi * t * theta), steps.d) @ lin

        return cls(sample, steps.d, based=True, name=f"fixed(t={t:.4g})")


# ------------------------------------------------------------------------------
# Maslov index
# ------------------------------------------------------------------------------
def _unitary_root(u: np.ndarray, k: int) -> np.ndarray:
    c = complexify(u)
    tri, basis = linalg.schur(c, output="complex")
    diag = np.diag(tri)
    root = basis @ np.diag(np.exp(1j * np.angle(diag) / k)) @ basis.conj().T
    return realify(root)


def _positive_root(p: np.ndarray, k: int) -> np.ndarray:
    vals, vecs = linalg.eigh(0.5 * (p + p.T))
    return (vecs * np.clip(vals, 0.0, None) ** (1.0 / k)) @ vecs.T


def base_factors(m: ArrayLike) -> List[np.ndarray]:
    """Four Cayley-safe factors composing to ``M``: ``U^1/2, U^1/2, P^1/2, P^1/2``.

    ``M = P U`` is the polar decomposition; factors are listed in order of
    application.
    """
    u, p = linalg.polar(np.asarray(m, dtype=float), side="left")
    u_root = _unitary_root(u, 2)
    p_root = _positive_root(p, 2)
    return [u_root, u_root, p_root, p_root]


def _factors_ok(factors: Sequence[np.ndarray], guard: float, step: Optional[float]) -> bool:
    eye = np.eye(factors[0].shape[0])
    for m in factors:
        try:
            inv = np.linalg.inv(eye + m)
        except np.linalg.LinAlgError:
            return False
        if np.linalg.norm(inv, 2) > guard:
            return False
        if step is not None and np.linalg.norm(m - eye, 2) > step:
            return False
    return True


def _family_index(factors: Sequence[np.ndarray], d: int) -> int:
    steps = StepTuple(
        tuple(ElementaryGen.from_matrix(cayley_matrix(m)) for m in factors), d
    )
    index, _ = broken_hessian_index(steps, np.zeros((steps.n, 2 * d)))
    return index


def _index_at(path: SymplecticPath, n: int, base: List[np.ndarray]) -> int:
    grid = np.linspace(0.0, 1.0, n + 1)
    factors = base + path.transitions(grid)
    return _family_index(factors, path.d)


def _mesh_ok(
    path: SymplecticPath, n: int, base: List[np.ndarray], settings: MaslovSettings
) -> bool:
    if base and not _factors_ok(base, settings.cayley_guard, None):
        return False
    for t in np.linspace(0.0, 1.0, settings.check_grid)[1:]:
        factors = path.transitions(t * np.linspace(0.0, 1.0, n + 1))
        if not _factors_ok(factors, settings.cayley_guard, settings.max_factor_step):
            return False
    return True


def maslov_index(
    path: SymplecticPath,
    subdivisions: Optional[int] = None,
    settings: Optional[MaslovSettings] = None,
) -> int:
    """Maslov index ``ind(Q_1) - ind(Q_0)`` of a path.

    The mesh is refined ``n -> 2n + 1`` until every Cayley factor is safe on
    the check grid; the result is accepted once two consecutive safe meshes
    agree.

    Raises:
        SubdivisionFailure: If no pair of consecutive refinements agree.
    """
    settings = settings or MaslovSettings.default()
    n = max(subdivisions or settings.initial_subdivisions, 2 * path.length + 1)
    if n % 2 == 0:
        n += 1
    base = [] if path.based else base_factors(path.at(0.0))
    previous: Optional[int] = None
    for _ in range(settings.max_refinements):
        try:
            safe = _mesh_ok(path, n, base, settings)
        except CayleySingular:
            safe = False
        if safe:
            value = _index_at(path, n, base) - _index_at(
                SymplecticPath.constant(path.at(0.0)), n, base
            )
            if previous is not None and value == previous:
                return value
            previous = value
        else:
            previous = None
            logger.debug("Refining %s: %d factors are not Cayley-safe", path.name, n)
        n = 2 * n + 1
    raise SubdivisionFailure(
        f"Maslov index of {path.name} did not stabilize after "
        f"{settings.max_refinements} refinements"
    )


# ------------------------------------------------------------------------------
# Reports
# ------------------------------------------------------------------------------
@dataclass(frozen=True)
class MeanIndex:
    """Mean index bracketed by the iterated-index inequalities."""

    value: float
    error: float
    lower: float
    upper: float
    table: Tuple[Tuple[int, int, int], ...]

    @property
    def consistent(self) -> bool:
        return self.lower <= self.upper + 1e-9


@dataclass(frozen=True)
class IndexReport:
    """Iterated indices of a path with the slack of both inequalities."""

    d: int
    mas: int
    mean: float
    error: float
    iterates: Tuple[Tuple[int, int, int], ...]
    lower_margin: Tuple[float, ...]
    upper_margin: Tuple[float, ...]
    tolerances: Dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "d": self.d,
            "mas": self.mas,
            "mean": self.mean,
            "error": self.error,
            "iterates": [
                {"k": k, "mas": mas, "nullity": nul} for k, mas, nul in self.iterates
            ],
            "lower_margin": list(self.lower_margin),
            "upper_margin": list(self.upper_margin),
            "tolerances": dict(self.tolerances),
        }


def iterate_table(
    path: SymplecticPath,
    ks: Sequence[int],
    settings: Optional[MaslovSettings] = None,
    workers: int = 1,
) -> List[Tuple[int, int, int]]:
    """Rows ``(k, mas_k, dim ker(Gamma_1^k - I))``."""

    def row(k: int) -> Tuple[int, int, int]:
        it = path.iterate(k)
        return k, maslov_index(it, settings=settings), fixed_space_dimension(it.at(1.0))

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(row, ks))
    return [row(k) for k in ks]


def mean_index(
    path: SymplecticPath,
    big_k: int,
    settings: Optional[MaslovSettings] = None,
    workers: int = 1,
) -> MeanIndex:
    """Mean index from the iterates ``k = 1..K``.

    Every iterate brackets the mean:
    ``(mas_k + nullity_k - 2d) / k <= mean <= mas_k / k``. The midpoint of the
    intersected bracket is returned with error ``min(d / K, half-width)``.
    """
    if big_k < 4:
        raise ValueError(f"K must be at least 4, got {big_k}")
    table = iterate_table(path, range(1, big_k + 1), settings, workers)
    d = path.d
    lower = max((mas + nul - 2 * d) / k for k, mas, nul in table)
    upper = min(mas / k for k, mas, _ in table)
    value = 0.5 * (lower + upper)
    error = min(d / big_k, max(0.5 * (upper - lower), 0.0))
    return MeanIndex(value=value, error=error, lower=lower, upper=upper, table=tuple(table))


def bott_check(
    path: SymplecticPath,
    kmax: int,
    big_k: Optional[int] = None,
    settings: Optional[MaslovSettings] = None,
    workers: int = 1,
) -> IndexReport:
    """Check ``k mean <= mas_k`` and ``mas_k + nullity_k <= k mean + 2d``.

    Raises:
        BottViolation: If some iterate contradicts the inequalities.
    """
    mean = mean_index(path, max(kmax, big_k or kmax, 4), settings, workers)
    d = path.d
    rows = [row for row in mean.table if row[0] <= kmax]
    lower = tuple(mas - k * mean.value for k, mas, _ in rows)
    upper = tuple(k * mean.value + 2 * d - mas - nul for k, mas, nul in rows)
    for (k, mas, nul), lo, up in zip(rows, lower, upper):
        slack = k * mean.error + 1e-9
        if not mean.consistent or lo < -slack or up < -slack:
            raise BottViolation(
                f"Iterate {k} of {path.name}: mas={mas}, nullity={nul}, "
                f"mean={mean.value:.6f}, margins ({lo:.3g}, {up:.3g})"
            )
    return IndexReport(
        d=d,
        mas=rows[0][1],
        mean=mean.value,
        error=mean.error,
        iterates=tuple(rows),
        lower_margin=lower,
        upper_margin=upper,
    )


# ------------------------------------------------------------------------------
# Path identities
# ------------------------------------------------------------------------------
@dataclass(frozen=True)
class PathIdentity:
    name: str
    lhs: int
    rhs: int

    @property
    def holds(self) -> bool:
        return self.lhs == self.rhs


def path_properties_suite(
    r: SymplecticPath,
    s: SymplecticPath,
    conjugator: Optional[np.ndarray] = None,
    settings: Optional[MaslovSettings] = None,
) -> List[PathIdentity]:
    """Evaluate both sides of the basic path identities.

    For the concatenation ``s`` is right-multiplied by ``r_1`` so that it starts
    where ``r`` ends. Endpoints should be nondegenerate for the identities to
    hold with the strict-negative index count.
    """
    mas = lambda path: maslov_index(path, settings=settings)  # noqa: E731
    end = r.at(1.0)
    shifted = SymplecticPath(lambda t: s.at(t) @ end, s.d, name=f"{s.name}r")
    out = [
        PathIdentity("concatenation", mas(r.concat(shifted)), mas(r) + mas(shifted)),
        PathIdentity("reverse", mas(r.reverse()), -mas(r)),
        PathIdentity("direct_sum", mas(r.direct_sum(s)), mas(r) + mas(s)),
    ]
    a = conjugator if conjugator is not None else np.eye(2 * r.d)
    out.append(PathIdentity("conjugation", mas(r.conjugate(a)), mas(r)))
    out.append(
        PathIdentity("reparametrization", mas(r.reparametrize(lambda t: t * t)), mas(r))
    )
    return out


def lift_index_split(
    path: SymplecticPath, z: ArrayLike, tol: float = 1e-9
) -> Tuple[int, int, int]:
    """Indices of a path preserving ``C z`` and of its two blocks.

    Returns ``(mas(full), mas(C z block), mas(orthogonal block))``.

    Raises:
        ValueError: If the path mixes ``C z`` with its orthogonal complement.
    """
    zc = to_complex(np.asarray(z, dtype=float))
    zc = zc / np.linalg.norm(zc)
    perp = orthonormal_complement(zc)
    basis = np.column_stack([realify(zc.reshape(-1, 1)), perp])
    conj = SymplecticPath(
        lambda s: basis.T @ path.at(s) @ basis, path.d, length=1, name=path.name
    )
    for s in np.linspace(0.0, 1.0, 9):
        g = conj.at(s)
        if np.max(np.abs(g[:2, 2:])) > tol or np.max(np.abs(g[2:, :2])) > tol:
            raise ValueError("Path does not preserve the complex line of z")
    line = maslov_index(conj.block(np.arange(2)))
    rest = maslov_index(conj.block(np.arange(2, 2 * path.d)))
    return maslov_index(conj), line, rest


def fixed_point_maslov(
    family: Callable[[float], StepTuple],
    z: ArrayLike,
    samples: int = 8,
    settings: Optional[NewtonSettings] = None,
) -> int:
    """Hessian-index difference along a family of tuples at a point.

    ``zeta_s`` is the trajectory point of ``z`` for the tuple at ``s``; its
    Hessian generates ``dPhi_s(z)``, so the difference of indices between
    ``s = 1`` and ``s = 0`` is the index of ``s -> dPhi_s(z)``. ``z`` must be
    fixed at ``s = 1``. Wherever ``z`` is also fixed at an inner sample,
    ``zeta_s`` is a critical point; its nullity growing there marks a
    bifurcation.

    Raises:
        ContinuationFailure: If the family changes size, a step inversion
            fails, ``z`` is not fixed at ``s = 1`` or a bifurcation is met.
    """
    z = np.asarray(z, dtype=float)
    tol = 1e-9 * (1.0 + float(np.linalg.norm(z)))
    sizes = set()
    indices = []
    nullities = []
    grid = np.linspace(0.0, 1.0, samples + 1)
    for i, s in enumerate(grid):
        steps = family(float(s))
        sizes.add(steps.n)
        if len(sizes) > 1:
            raise ContinuationFailure(f"Family changes size at s={s:.3g}")
        if not steps.is_odd:
            raise ValueError(f"Family tuples must have odd size, got {steps.n}")
        try:
            coords, end = trajectory(steps, z, settings)
        except NewtonDivergence as exc:
            raise ContinuationFailure(f"Step inversion failed at s={s:.3g}") from exc
        index, nullity = broken_hessian_index(steps, coords.v)
        gap = float(np.linalg.norm(end - z))
        if i == samples and gap > tol:
            raise ContinuationFailure(f"Point is not fixed at s=1 (gap {gap:.3e})")
        if 0 < i < samples and gap <= tol and nullity > nullities[-1]:
            raise ContinuationFailure(
                f"Bifurcation at s={s:.3g}: nullity rose from {nullities[-1]} to {nullity}"
            )
        indices.append(index)
        nullities.append(nullity)
    return indices[-1] - indices[0]


def linearized_flow_path(
    family: Callable[[float], StepTuple],
    z: ArrayLike,
    settings: Optional[NewtonSettings] = None,
) -> SymplecticPath:
    """The path ``s -> dPhi_s(z)`` of a family of tuples."""
    zz = np.asarray(z, dtype=float)
    return SymplecticPath(
        lambda s: linearized_monodromy(family(s), zz, settings),
        zz.size // 2,
        based=True,
        name="dPhi",
    )


# ------------------------------------------------------------------------------
# Iterated fixed points
# ------------------------------------------------------------------------------
@dataclass(frozen=True)
class IterationRow:
    m: int
    t_m: float
    floor: int
    lhs: float
    rhs: float
    tolerance: float

    @property
    def holds(self) -> bool:
        return abs(self.lhs - self.rhs) <= self.tolerance


def _fixed_mean(
    steps: StepTuple,
    z: np.ndarray,
    t: float,
    big_k: int,
    settings: Optional[MaslovSettings],
    workers: int,
) -> MeanIndex:
    return mean_index(SymplecticPath.from_fixed_point(steps, z, t), big_k, settings, workers)


def iterated_index_identity(
    steps: StepTuple,
    z: ArrayLike,
    t: float,
    mmax: int,
    n2: int = 5,
    big_k: int = 40,
    settings: Optional[MaslovSettings] = None,
    workers: int = 1,
    strict: bool = True,
) -> List[IterationRow]:
    """Both sides of ``mind(y^m) = m mean(y) - 2(d+1) floor(m t) + i(m)``.

    ``mind(y^m)`` is the mean index of the iterated tuple at the reduced action
    ``t(y^m) = m t - floor(m t)`` plus ``i(m)``, the index of the all-identity
    function of size ``m n1 + n2``.

    Raises:
        VerificationError: If ``strict`` and some row disagrees beyond the
            mean-index error bars.
    """
    z = np.asarray(z, dtype=float)
    dim = steps.d
    base = _fixed_mean(steps, z, t, big_k, settings, workers)
    rows = []
    for m in range(1, mmax + 1):
        floor = math.floor(m * t)
        t_m = m * t - floor
        iterated = _fixed_mean(steps.repeat(m), z, t_m, big_k, settings, workers)
        i_m, _ = quad_index(coupling_form(m * steps.n + n2, dim))
        rows.append(
            IterationRow(
                m=m,
                t_m=t_m,
                floor=floor,
                lhs=iterated.value + i_m,
                rhs=m * base.value - 2 * dim * floor + i_m,
                tolerance=iterated.error + m * base.error + 1e-9,
            )
        )
    failed = [row for row in rows if not row.holds]
    if strict and failed:
        raise VerificationError(f"Iterated index identity fails for m={[r.m for r in failed]}")
    return rows


@dataclass(frozen=True)
class AugmentedAction:
    m: int
    value: float
    base: float
    tolerance: float

    @property
    def homogeneous(self) -> bool:
        return abs(self.value - self.m * self.base) <= self.tolerance


def augmented_action(
    steps: StepTuple,
    z: ArrayLike,
    t: float,
    m: int,
    big_k: int = 40,
    settings: Optional[MaslovSettings] = None,
    workers: int = 1,
) -> AugmentedAction:
    """``m t - mean(exp(-2 i pi m t s) Phi_{m s}) / (2(d+1))`` at a fixed direction.

    The base value (``m = 1``) is returned alongside for the homogeneity check.
    """
    z = np.asarray(z, dtype=float)
    dim = steps.d
    base = _fixed_mean(steps, z, t, big_k, settings, workers)
    base_value = t - base.value / (2 * dim)
    if m == 1:
        return AugmentedAction(
            m=1, value=base_value, base=base_value, tolerance=base.error / (2 * dim) + 1e-9
        )
    iterated = _fixed_mean(steps.repeat(m), z, m * t, big_k, settings, workers)
    return AugmentedAction(
        m=m,
        value=m * t - iterated.value / (2 * dim),
        base=base_value,
        tolerance=(iterated.error + m * base.error) / (2 * dim) + 1e-9,
    )


@dataclass(frozen=True)
class GapIdentity:
    lhs: float
    rhs: float
    tolerance: float

    @property
    def holds(self) -> bool:
        return abs(self.lhs - self.rhs) <= self.tolerance


def index_gap_identity(
    steps: StepTuple,
    x: Tuple[ArrayLike, float],
    y: Tuple[ArrayLike, float],
    m: int,
    big_k: int = 40,
    settings: Optional[MaslovSettings] = None,
) -> GapIdentity:
    """``mind(y^m) - mind(x^m) = 2m(d+1)(a(x) - a(y)) + 2(d+1)(t(y^m) - t(x^m))``.

    ``x`` and ``y`` are ``(direction, action)`` pairs and ``a`` the augmented
    action; the left side is computed from the iterated system directly.
    """
    dim = steps.d
    sides = []
    for z, t in (x, y):
        zz = np.asarray(z, dtype=float)
        t_m = m * t - math.floor(m * t)
        iterated = _fixed_mean(steps.repeat(m), zz, t_m, big_k, settings, 1)
        base = _fixed_mean(steps, zz, t, big_k, settings, 1)
        aug = t - base.value / (2 * dim)
        sides.append((iterated, base, aug, t_m))
    (it_x, b_x, a_x, tm_x), (it_y, b_y, a_y, tm_y) = sides
    return GapIdentity(
        lhs=it_y.value - it_x.value,
        rhs=2 * m * dim * (a_x - a_y) + 2 * dim * (tm_y - tm_x),
        tolerance=it_x.error + it_y.error + m * (b_x.error + b_y.error) + 1e-9,
    )


def symplectic_defect(path: SymplecticPath, samples: int = 9) -> float:
    """Largest ``|Gamma^T J Gamma - J|`` entry on a uniform sample of the path."""
    return max(symplectic_residual(path.at(s)) for s in np.linspace(0.0, 1.0, samples))
