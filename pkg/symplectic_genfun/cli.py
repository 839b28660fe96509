"""Batch front-end: ``symplectic-genfun {fixed-points,maslov,crossing,verify}``.

Exit codes: 0 on success, 1 when a verification fails or a solver gives up,
2 on usage and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

from symplectic_genfun import checks
from symplectic_genfun._utils import parse_override, write_csv, write_json
from symplectic_genfun.cpaction import (
    ConicalFamily,
    SolverSettings,
    critical_points,
    csv_header,
)
from symplectic_genfun.crossing import (
    CROSSING_COLUMNS,
    SEEDINGS,
    FlowSettings,
    crossing_experiment,
    isolation_estimate,
)
from symplectic_genfun.errors import ConfigError, GenfunError
from symplectic_genfun.genfun import NewtonSettings
from symplectic_genfun.hamdiff import Fixture, HamiltonianTable, load_fixture
from symplectic_genfun.maslov import (
    MaslovSettings,
    SymplecticPath,
    bott_check,
    iterated_index_identity,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2

FIXTURE_NAMES = ("pseudo_rotation", "hyperbolic", "identity", "hamiltonian")
DEFAULT_N1 = {"pseudo_rotation": 4, "hyperbolic": 8, "identity": 4, "hamiltonian": 8}
TOLERANCE_KEYS = (
    "newton_tol",
    "solver_tol",
    "flow_atol",
    "flow_rtol",
    "cayley_guard",
)


# ------------------------------------------------------------------------------
# Configuration
# ------------------------------------------------------------------------------
@dataclass
class ExperimentConfig:
    """One experiment, read from a JSON document."""

    fixture: Dict[str, Any]
    n2: int
    epsilon: float
    m_list: List[int]
    r: float
    seeds: int
    random_seeds: int
    mmax: int
    kmax: int
    big_k: int
    point: int
    seeding: str
    resource_cap: int
    seed: int
    tolerances: Dict[str, float] = field(default_factory=dict)
    checks: Optional[List[str]] = None
    path: Optional[Dict[str, Any]] = None

    def __init__(
        self,
        fixture: Optional[Dict[str, Any]] = None,
        n2: Optional[int] = None,
        epsilon: Optional[float] = None,
        m_list: Optional[List[int]] = None,
        r: Optional[float] = None,
        seeds: Optional[int] = None,
        random_seeds: Optional[int] = None,
        mmax: Optional[int] = None,
        kmax: Optional[int] = None,
        big_k: Optional[int] = None,
        point: Optional[int] = None,
        seeding: Optional[str] = None,
        resource_cap: Optional[int] = None,
        seed: Optional[int] = None,
        tolerances: Optional[Dict[str, float]] = None,
        checks: Optional[List[str]] = None,
        path: Optional[Dict[str, Any]] = None,
    ) -> None:
        """Initialize ExperimentConfig with custom or default values.

        Args:
            fixture: Fixture description (default: pseudo-rotation a=(0.25, 0.75))
            n2: Size of the rotation tuple, odd and >= 5 (default: 5)
            epsilon: Half-width margin of the action window (default: 0.05)
            m_list: Iterates of the crossing experiment (default: [1])
            r: Neighbourhood radius (default: 0.2)
            seeds: Flow-line seeds per iterate (default: 8)
            random_seeds: Random seeds of the fixed-direction solver (default: 16)
            mmax: Largest iterate of the index identity table (default: 4)
            kmax: Largest iterate checked against the Bott inequalities (default: 8)
            big_k: Iterates used for the mean index (default: 40)
            point: Known fixed point used by maslov and crossing (default: 0)
            seeding: Crossing seeds on dV_r or inside V_r/2 (default: boundary)
            resource_cap: Bound on (d + 1)(n1 m + n2) (default: 1200)
            seed: Random seed (default: 0)
            tolerances: Overrides among TOLERANCE_KEYS (default: none)
            checks: Names of verification checks (default: all)
            path: Explicit symplectic path for the maslov command (default: none)
        """
        self.fixture = fixture or {"name": "pseudo_rotation", "a": [0.25, 0.75]}
        self.n2 = n2 if n2 is not None else 5
        self.epsilon = epsilon if epsilon is not None else 0.05
        self.m_list = list(m_list) if m_list is not None else [1]
        self.r = r if r is not None else 0.2
        self.seeds = seeds if seeds is not None else 8
        self.random_seeds = random_seeds if random_seeds is not None else 16
        self.mmax = mmax if mmax is not None else 4
        self.kmax = kmax if kmax is not None else 8
        self.big_k = big_k if big_k is not None else 40
        self.point = point if point is not None else 0
        self.seeding = seeding if seeding is not None else "boundary"
        self.resource_cap = resource_cap if resource_cap is not None else 1200
        self.seed = seed if seed is not None else 0
        self.tolerances = dict(tolerances or {})
        self.checks = list(checks) if checks is not None else None
        self.path = path

    @classmethod
    def default(cls) -> "ExperimentConfig":
        """Create ExperimentConfig with default values."""
        return cls()

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("The configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown configuration keys: {unknown}")
        config = cls(**data)
        config.validate()
        return config

    @property
    def n1(self) -> int:
        name = self.fixture.get("name", "")
        return int(self.fixture.get("n1") or DEFAULT_N1.get(name, 4))

    @property
    def dim(self) -> int:
        """Complex dimension d + 1 of the lifted fixture."""
        name = self.fixture.get("name")
        if name == "pseudo_rotation":
            return len(self.fixture.get("a", ()))
        if name == "hyperbolic":
            return 2
        if name == "identity":
            return int(self.fixture.get("d", 1)) + 1
        return HamiltonianTable.from_dict(self.fixture["hamiltonian"]).dim

    def validate(self) -> None:
        """Check parities, ranges and the resource cap.

        Raises:
            ConfigError: On the first violated constraint.
        """
        if not isinstance(self.fixture, dict):
            raise ConfigError("fixture must be a JSON object")
        name = self.fixture.get("name")
        if name not in FIXTURE_NAMES:
            raise ConfigError(f"Unknown fixture '{name}'. Expected one of {FIXTURE_NAMES}")
        if name == "hamiltonian" and "hamiltonian" not in self.fixture:
            raise ConfigError("A hamiltonian fixture needs a 'hamiltonian' table")
        if self.n1 < 2 or self.n1 % 2:
            raise ConfigError(f"n1 must be even and >= 2, got {self.n1}")
        if self.n2 < 5 or self.n2 % 2 == 0:
            raise ConfigError(f"n2 must be odd and >= 5, got {self.n2}")
        if not 0.0 < self.epsilon < 0.5:
            raise ConfigError(f"epsilon must lie in (0, 1/2), got {self.epsilon}")
        if self.r <= 0.0:
            raise ConfigError(f"r must be positive, got {self.r}")
        if self.seeding not in SEEDINGS:
            raise ConfigError(f"Unknown seeding '{self.seeding}'. Expected one of {SEEDINGS}")
        if not self.m_list or any(int(m) != m or m < 1 for m in self.m_list):
            raise ConfigError(f"m_list must hold positive integers, got {self.m_list}")
        for key, value in (
            ("seeds", self.seeds),
            ("random_seeds", self.random_seeds),
            ("mmax", self.mmax),
            ("kmax", self.kmax),
        ):
            if value < 1:
                raise ConfigError(f"{key} must be positive, got {value}")
        if self.big_k < 4:
            raise ConfigError(f"big_k must be at least 4, got {self.big_k}")
        unknown = sorted(set(self.tolerances) - set(TOLERANCE_KEYS))
        if unknown:
            raise ConfigError(f"Unknown tolerance keys {unknown}. Expected {TOLERANCE_KEYS}")
        try:
            dim = self.dim
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError(f"Invalid fixture description: {exc}") from exc
        for m in self.m_list:
            size = dim * (self.n1 * m + self.n2)
            if size > self.resource_cap:
                raise ConfigError(
                    f"m={m} needs (d+1)(n1 m + n2) = {size}, above the cap "
                    f"{self.resource_cap}"
                )

    def newton_settings(self) -> NewtonSettings:
        return NewtonSettings(tol=self.tolerances.get("newton_tol"))

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(
            tol=self.tolerances.get("solver_tol"), random_seeds=self.random_seeds
        )

    def flow_settings(self) -> FlowSettings:
        return FlowSettings(
            atol=self.tolerances.get("flow_atol"), rtol=self.tolerances.get("flow_rtol")
        )

    def maslov_settings(self) -> MaslovSettings:
        return MaslovSettings(cayley_guard=self.tolerances.get("cayley_guard"))

    def tolerances_used(self) -> Dict[str, float]:
        newton = self.newton_settings()
        solver = self.solver_settings()
        flow = self.flow_settings()
        return {
            "newton_tol": newton.tol,
            "solver_tol": solver.tol,
            "flow_atol": flow.atol,
            "flow_rtol": flow.rtol,
            "cayley_guard": self.maslov_settings().cayley_guard,
        }


def load_config(
    path: Optional[str],
    seed: Optional[int] = None,
    overrides: Sequence[str] = (),
) -> ExperimentConfig:
    """Read, override and validate a configuration.

    Raises:
        ConfigError: If the file is unreadable or the result is invalid.
    """
    data: Dict[str, Any] = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except OSError as exc:
            raise ConfigError(f"Cannot read configuration {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"Malformed JSON in {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("The configuration must be a JSON object")
    data = dict(data)
    if seed is not None:
        data["seed"] = seed
    if overrides:
        tolerances = dict(data.get("tolerances") or {})
        for text in overrides:
            try:
                key, value = parse_override(text)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            tolerances[key] = value
        data["tolerances"] = tolerances
    try:
        return ExperimentConfig.from_dict(data)
    except TypeError as exc:
        raise ConfigError(f"Invalid configuration: {exc}") from exc


# ------------------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------------------
def _fixture(config: ExperimentConfig) -> Fixture:
    description = dict(config.fixture)
    description.setdefault("n1", config.n1)
    try:
        return load_fixture(description, config.newton_settings())
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"Invalid fixture: {exc}") from exc


def _summary(
    out: Path, command: str, config: ExperimentConfig, **extra: Any
) -> None:
    write_json(
        out / "summary.json",
        {
            "command": command,
            "seed": config.seed,
            "tolerances": config.tolerances_used(),
            **extra,
        },
    )


def cmd_fixed_points(config: ExperimentConfig, out: Path, workers: int = 1) -> int:
    """Solve for the fixed directions of the fixture and write them out."""
    fixture = _fixture(config)
    family = ConicalFamily(fixture.steps, n2=config.n2, epsilon=config.epsilon)
    records = critical_points(
        family,
        settings=config.solver_settings(),
        newton=config.newton_settings(),
        rng=np.random.default_rng(config.seed),
        workers=workers,
    )
    write_csv(
        out / "fixed_points.csv",
        csv_header(family.dim),
        (record.csv_row() for record in records),
    )
    write_json(out / "fixed_points.json", [record.to_dict() for record in records])
    _summary(
        out,
        "fixed-points",
        config,
        fixture=fixture.name,
        records=len(records),
        degenerate=sum(record.is_degenerate for record in records),
    )
    return EXIT_OK


def _explicit_path(spec: Dict[str, Any]) -> SymplecticPath:
    kind = spec.get("kind")
    if kind == "rotation":
        return SymplecticPath.rotation(spec["rates"])
    if kind == "one_parameter":
        return SymplecticPath.one_parameter(spec["matrix"])
    raise ConfigError(f"Unknown path kind '{kind}'. Expected rotation or one_parameter")


def cmd_maslov(config: ExperimentConfig, out: Path, workers: int = 1) -> int:
    """Index reports with the Bott inequalities and the iterated index identity."""
    settings = config.maslov_settings()
    reports: List[Dict[str, Any]] = []
    if config.path is not None:
        try:
            path = _explicit_path(config.path)
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"Invalid path: {exc}") from exc
        report = bott_check(path, config.kmax, config.big_k, settings, workers)
        reports.append({"path": path.name, "report": report.to_dict()})
    else:
        fixture = _fixture(config)
        for point in fixture.known_fixed_points:
            path = SymplecticPath.from_fixed_point(fixture.steps, point.z, point.action)
            report = bott_check(path, config.kmax, config.big_k, settings, workers)
            rows = iterated_index_identity(
                fixture.steps,
                point.z,
                point.action,
                config.mmax,
                n2=config.n2,
                big_k=config.big_k,
                settings=settings,
                workers=workers,
            )
            reports.append(
                {
                    "point": point.label,
                    "action": point.action,
                    "report": report.to_dict(),
                    "iterated_identity": [
                        {
                            "m": row.m,
                            "t_m": row.t_m,
                            "lhs": row.lhs,
                            "rhs": row.rhs,
                            "tolerance": row.tolerance,
                        }
                        for row in rows
                    ],
                }
            )
    write_json(out / "maslov.json", reports)
    _summary(out, "maslov", config, reports=len(reports))
    return EXIT_OK


def cmd_crossing(config: ExperimentConfig, out: Path, workers: int = 1) -> int:
    """Crossing-energy experiment around one known fixed point."""
    fixture = _fixture(config)
    if not 0 <= config.point < len(fixture.known_fixed_points):
        raise ConfigError(
            f"Fixture '{fixture.name}' has {len(fixture.known_fixed_points)} known "
            f"points, got point={config.point}"
        )
    point = fixture.known_fixed_points[config.point]
    family = ConicalFamily(fixture.steps, n2=config.n2, epsilon=config.epsilon)
    result = crossing_experiment(
        family,
        point.z,
        point.action,
        config.r,
        config.m_list,
        seeds_per_m=config.seeds,
        settings=config.flow_settings(),
        rng=np.random.default_rng(config.seed),
        workers=workers,
        cap=config.resource_cap,
        isolation=isolation_estimate(fixture, point.z),
        seeding=config.seeding,
    )
    write_csv(out / "crossing.csv", CROSSING_COLUMNS, (r.as_row() for r in result.rows))
    write_json(out / "crossing.json", result.to_dict())
    _summary(out, "crossing", config, point=point.label, crossing=result.to_dict())
    if result.violations:
        logger.error("%d crossing lines did not lose action", len(result.violations))
        return EXIT_FAILED
    return EXIT_OK


def cmd_verify(config: ExperimentConfig, out: Path, workers: int = 1) -> int:
    """Run the verification corpus; exit 1 naming every failed check."""
    results = checks.run_checks(config.checks, np.random.default_rng(config.seed))
    failed = [r.name for r in results if not r.passed]
    write_json(
        out / "verify.json",
        [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
    )
    _summary(out, "verify", config, passed=len(results) - len(failed), failed=failed)
    if failed:
        logger.error("Failed checks: %s", ", ".join(failed))
        return EXIT_FAILED
    logger.info("All %d checks passed", len(results))
    return EXIT_OK


Command = Callable[[ExperimentConfig, Path, int], int]

COMMANDS: Dict[str, Command] = {
    "fixed-points": cmd_fixed_points,
    "maslov": cmd_maslov,
    "crossing": cmd_crossing,
    "verify": cmd_verify,
}


# ------------------------------------------------------------------------------
# Entry point
# ------------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON experiment configuration")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument(
        "--workers", type=int, default=os.cpu_count() or 1, help="worker threads"
    )
    common.add_argument(
        "--tol-override",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help=f"override a tolerance ({', '.join(TOLERANCE_KEYS)})",
    )
    common.add_argument("--verbose", action="store_true", help="debug logging")
    parser = argparse.ArgumentParser(
        prog="symplectic-genfun",
        description="Generating-function experiments on C^d and CP^d",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, command in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(command.__doc__ or "").strip())
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config, args.seed, args.tol_override)
        if args.workers < 1:
            raise ConfigError(f"--workers must be positive, got {args.workers}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
    except (ConfigError, OSError) as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](config, out, args.workers)
    except ConfigError as exc:
        logger.error("%s", exc)
        return EXIT_CONFIG
    except GenfunError as exc:
        logger.error("%s failed: %s", args.command, exc)
        return EXIT_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
