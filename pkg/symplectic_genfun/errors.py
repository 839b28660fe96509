"""Exception types raised by the generating-function toolkit."""

from __future__ import annotations


class GenfunError(Exception):
    """Base class for all errors raised by this package."""


class NewtonDivergence(GenfunError):
    """Newton inversion of an elementary step did not converge.

    Signals that the step is not small enough on the sampled region.
    """


class CayleySingular(GenfunError):
    """A linear symplectic map has eigenvalue -1 (or is too close to it)."""


class CBlockSingular(GenfunError):
    """The auxiliary block of a quadratic form is singular.

    The form then does not generate the zero section.
    """


class EigenSolverError(GenfunError):
    """The symmetric eigensolver failed."""


class SubdivisionFailure(GenfunError):
    """Refining a path subdivision could not produce a stable Maslov index."""


class ContinuationFailure(GenfunError):
    """A critical point could not be continued along a family."""


class BottViolation(GenfunError):
    """An iterated index violated the Bott inequalities."""


class VerificationError(GenfunError):
    """A hard numerical invariant failed to hold."""


class DegenerateRecordError(GenfunError):
    """An operation needing a nondegenerate critical point received a degenerate one."""


class ProjectionFailure(GenfunError):
    """A point could not be projected back onto the level manifold."""


class NoCriticalPoints(GenfunError):
    """The critical point solver found nothing for a conical family."""


class ConfigError(GenfunError, ValueError):
    """An experiment configuration is malformed or out of range."""
