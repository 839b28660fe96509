from importlib import metadata

from symplectic_genfun.cpaction import (
    ConicalFamily,
    CriticalRecord,
    action_spectrum,
    critical_points,
)
from symplectic_genfun.crossing import CrossingSpace, crossing_experiment
from symplectic_genfun.errors import ConfigError, GenfunError
from symplectic_genfun.genfun import ElementaryGen, NewtonSettings, StepTuple
from symplectic_genfun.hamdiff import Fixture, load_fixture
from symplectic_genfun.maslov import SymplecticPath, bott_check, maslov_index

try:
    __version__ = metadata.version(__package__)
except metadata.PackageNotFoundError:
    # Case where package metadata is not available.
    __version__ = ""

__all__ = [
    "__version__",
    "ConfigError",
    "ConicalFamily",
    "CriticalRecord",
    "CrossingSpace",
    "ElementaryGen",
    "Fixture",
    "GenfunError",
    "NewtonSettings",
    "StepTuple",
    "SymplecticPath",
    "action_spectrum",
    "bott_check",
    "critical_points",
    "crossing_experiment",
    "load_fixture",
    "maslov_index",
]
