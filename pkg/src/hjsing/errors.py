"""Exception hierarchy shared by all solver layers."""

from __future__ import annotations


class HJSingError(Exception):
    """Base class for every error raised by the library."""


class NonConvergence(HJSingError):
    """An inner iterative solve (Legendre, Newton) did not converge."""


class Unbounded(HJSingError):
    """A supremum grew without bound while searching."""


class NoConvergence(HJSingError):
    """A trajectory or fixed-point solver exhausted its iteration budget."""

    def __init__(self, message: str, residual: float = float("nan")):
        super().__init__(message)
        self.residual = residual


class BlowUp(HJSingError):
    """Every minimizing candidate left the a-priori trust region."""


class ProbeFailure(HJSingError):
    """A convexity probe failed at every trial time."""


class UniquenessViolation(HJSingError):
    """Multi-start extremizers disagree; the caller should shrink t."""


class DegenerateSamples(HJSingError):
    """Too few differentiability points were sampled."""


class NotSingularSeed(HJSingError):
    """The starting point of an arc is not singular."""


class StepFailure(HJSingError):
    """An arc segment could not be completed.

    ``time_reached`` is the arc time at the failed segment start and
    ``arc`` the partial arc traced so far.
    """

    def __init__(self, message: str, time_reached: float = 0.0, arc=None):
        super().__init__(message)
        self.time_reached = time_reached
        self.arc = arc


class ShiftBoundary(HJSingError):
    """The torus shift search hit its outermost widening radius."""


class ConfigError(HJSingError):
    """Invalid scenario configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class UnknownFixture(HJSingError):
    """A fixture id did not match the registry."""


class GridLoadError(HJSingError):
    """A grid file could not be parsed."""
