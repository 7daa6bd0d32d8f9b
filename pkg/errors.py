"""Exception hierarchy shared by the k-DPA library and its command-line runner.

``ConfigError`` and ``DomainError`` describe bad input and map to exit code 2;
every ``NumericError`` maps to exit code 3.
"""

from __future__ import annotations

__all__ = [
    "KdpaError",
    "ConfigError",
    "DomainError",
    "NumericError",
    "ZeroDensity",
    "OutOfSupport",
    "OutOfRange",
    "DegenerateConditioning",
    "EmptyInterval",
    "IrregularDistribution",
    "QuadratureError",
    "DegenerateCompetition",
    "NoBracket",
    "NonMinimal",
    "TooLarge",
    "ThresholdOnAtom",
]


class KdpaError(RuntimeError):
    """Base class for every failure raised by this package."""


class ConfigError(KdpaError, ValueError):
    """Raised when user supplied configuration cannot be interpreted."""


class DomainError(KdpaError, ValueError):
    """Raised when an argument lies outside the domain of a function."""


class NumericError(KdpaError):
    """Raised when a numerical routine cannot produce a trustworthy value."""


class ZeroDensity(NumericError):
    """The density at the requested value is below the density floor."""


class OutOfSupport(NumericError):
    """A value lies outside the support of the distribution."""


class OutOfRange(NumericError):
    """No value maps to the requested virtual value."""


class DegenerateConditioning(NumericError):
    """All probability mass sits below the reserve."""


class EmptyInterval(NumericError):
    """A conditioning interval carries (numerically) no mass."""


class IrregularDistribution(NumericError):
    """The virtual value is not weakly increasing."""


class QuadratureError(NumericError):
    """Adaptive quadrature failed to reach the requested tolerance."""


class DegenerateCompetition(NumericError):
    """A single buyer cannot support strictly decreasing prices."""


class NoBracket(NumericError):
    """The shooting solver could not bracket the terminal condition."""

    def __init__(self, message: str, diagnostics: list[tuple[float, int]] | None = None) -> None:
        super().__init__(message)
        self.diagnostics = diagnostics or []


class NonMinimal(NumericError):
    """Two solved thresholds collide; the price sequence is not minimal."""


class TooLarge(NumericError):
    """Exhaustive enumeration would exceed the profile cap."""


class ThresholdOnAtom(NumericError):
    """A threshold coincides with an atom of a discrete distribution."""
