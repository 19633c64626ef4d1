"""Exception hierarchy shared by all modules."""


class LevyCouplingError(Exception):
    """Base class for all library errors."""


class DimensionMismatch(LevyCouplingError, ValueError):
    pass


class IncompatibleGrids(LevyCouplingError, ValueError):
    """Two grid densities do not live on a common lattice."""


class SnapError(LevyCouplingError, ValueError):
    """An atom offset is not a multiple of the grid spacing."""


class BudgetExceeded(LevyCouplingError, RuntimeError):
    """A convolution would exceed the atom/cell budget.

    ``achieved`` is the largest convolution power (or index) that was
    computed within the budget.
    """

    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class ZeroDisplacement(LevyCouplingError, ValueError):
    pass


class DensityRotationUnsupported(LevyCouplingError, NotImplementedError):
    pass


class EmptyTruncation(LevyCouplingError, ValueError):
    pass


class ZeroMass(LevyCouplingError, ValueError):
    pass


class DegenerateOverlap(LevyCouplingError, ValueError):
    """The measure and its displaced copy have no common mass."""


class CriterionFailed(LevyCouplingError, ValueError):
    pass


class InsufficientData(LevyCouplingError, ValueError):
    pass


class SchemaError(LevyCouplingError, ValueError):
    """Input document is structurally malformed (missing or mistyped field)."""
