"""Exception hierarchy shared by every finereg module."""


class FineRegError(Exception):
    """Base class for all package errors."""


class DomainMembershipError(FineRegError, ValueError):
    pass


class InvalidDomainError(FineRegError, ValueError):
    pass


class InvalidConeError(FineRegError, ValueError):
    pass


class PotentialClassError(FineRegError, ValueError):
    """A potential violates V(x) * delta(x)**2 <= a at some node."""


class AssemblyError(FineRegError):
    pass


class SolverError(FineRegError):
    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PoleError(FineRegError, ValueError):
    pass


class InsufficientStatisticsError(FineRegError):
    pass


class ScenarioError(FineRegError, ValueError):
    """Scenario file could not be parsed or validated.

    ``field`` names the offending key path (dotted), when known.
    """

    def __init__(self, message, field=None):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field
