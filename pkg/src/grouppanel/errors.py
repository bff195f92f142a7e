"""Exception and warning types shared across the package."""

from __future__ import annotations


class GroupPanelError(Exception):
    """Base class for all package errors."""


class AlreadyDemeanedError(GroupPanelError):
    """Within transformation requested on data already demeaned."""


class SingularGramError(GroupPanelError):
    """A unit (or the pooled) Gram matrix is numerically singular."""

    def __init__(self, unit):
        self.unit = unit
        super().__init__(f"singular Gram matrix for unit {unit!r}")


class EmptySubsetError(GroupPanelError):
    """An operation received an empty unit subset."""


class UnassignedUnitError(GroupPanelError):
    """A unit has no valid group assignment."""

    def __init__(self, unit):
        self.unit = unit
        super().__init__(f"unit {unit!r} has no valid group assignment")


class ShapeMismatchError(GroupPanelError):
    """Array shapes are inconsistent with the panel dimensions."""


class KTooLargeError(GroupPanelError):
    """More clusters requested than points available."""


class KGridTooLargeError(GroupPanelError):
    """Candidate-K grid exceeds what the point set supports."""


class MethodNeedsK2Error(GroupPanelError):
    """Selection index undefined below two clusters."""


class LengthMismatchError(GroupPanelError):
    """Two assignments cover different numbers of units."""


class TooFewPeriodsError(GroupPanelError):
    """Not enough time periods for the requested fold count."""


class DegenerateResidualsError(GroupPanelError):
    """Auxiliary regression left numerically zero residual variation."""

    def __init__(self, unit):
        self.unit = unit
        super().__init__(f"degenerate auxiliary residuals for unit {unit!r}")


class DataFormatError(GroupPanelError):
    """Input file violates the long-format panel contract."""


class DegenerateUnitWarning(UserWarning):
    """A unit's covariate column is constant and demeans to zero."""
