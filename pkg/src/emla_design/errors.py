"""Exception hierarchy shared by all modules."""


class EmlaDesignError(Exception):
    """Base class for every error raised by this package."""


class DomainError(EmlaDesignError, ValueError):
    """Input outside the mathematical domain of an operation (NaN, inf)."""


class RangeError(EmlaDesignError, ValueError):
    """Input outside a physical or configured limit."""


class ModelInconsistencyError(EmlaDesignError):
    """A model produced physically impossible values."""


class GeometryInfeasibleError(EmlaDesignError, ValueError):
    """Closed-chain lengths cannot form a triangle for the requested stroke."""


class StrokeLimitError(RangeError):
    """Actuator stroke outside ``[0, Lc]``."""

    def __init__(self, message, value):
        super().__init__(message)
        self.value = value


class SingularConfigurationError(EmlaDesignError):
    """Closed chain too close to a degenerate triangle."""


class ConfigurationError(EmlaDesignError, ValueError):
    """Inconsistent sizes or settings."""


class FittingError(EmlaDesignError):
    """Least-squares fit could not be carried out."""


class ReachabilityError(EmlaDesignError):
    """Reference trajectory leaves the reachable workspace."""

    def __init__(self, message, times):
        super().__init__(message)
        self.times = list(times)


class SolverBreakdown(EmlaDesignError):
    """The NLP solver could not continue (singular or non-finite subproblem)."""

    def __init__(self, message, last_iterate=None):
        super().__init__(message)
        self.last_iterate = last_iterate
