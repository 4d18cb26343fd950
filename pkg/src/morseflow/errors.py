"""Exception hierarchy shared by all modules."""


class MorseFlowError(Exception):
    """Base class for every error raised by the package."""


class DescriptorError(MorseFlowError):
    """Unknown chart, unknown built-in, or malformed atlas data."""


class DomainError(MorseFlowError):
    """A point or parameter lies outside the domain of a map."""


class PreconditionError(MorseFlowError):
    pass


class DegenerateCriticalPointError(MorseFlowError):
    pass


class ConsistencyError(MorseFlowError):
    """Internal bookkeeping contradicts itself (duplicates, cycles, negative dimensions)."""


class IntegrationError(MorseFlowError):
    def __init__(self, message, last_state=None):
        super().__init__(message)
        self.last_state = last_state


class UndefinedFlowMapError(MorseFlowError):
    def __init__(self, message, critical=None):
        super().__init__(message)
        self.critical = critical


class LevelError(MorseFlowError):
    """A requested level is a critical value or otherwise inadmissible."""


class ConfigurationError(MorseFlowError):
    pass


class UnresolvedOrbitError(MorseFlowError):
    def __init__(self, message, bracket=None):
        super().__init__(message)
        self.bracket = bracket


class DegenerateIntersectionError(MorseFlowError):
    """Descending and ascending spheres meet (numerically) non-transversally."""


class BrokenLineError(MorseFlowError):
    """The requested connection passes through a critical point."""


class IncompleteInputError(MorseFlowError):
    pass


class ChartExitError(DomainError):
    """A trajectory leaves its chart; ``exit_time`` is when it crosses the boundary."""

    def __init__(self, message, exit_time=None):
        super().__init__(message)
        self.exit_time = exit_time
