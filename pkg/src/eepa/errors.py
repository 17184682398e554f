"""Exception hierarchy shared by the library and the command line."""


class EepaError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(EepaError, ValueError):
    """An argument lies outside the domain of the operation."""


class DimensionError(EepaError, ValueError):
    """Vectors that must have matching lengths do not."""


class CapabilityError(EepaError):
    """The requested problem size is beyond what the routine supports."""


class InfeasibleEquilibriumError(EepaError):
    """The equilibrium report exceeds the largest admissible report G."""
