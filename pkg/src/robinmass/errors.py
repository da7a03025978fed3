"""Exception hierarchy shared by all modules."""


class RobinMassError(Exception):
    """Base class for numerical and domain errors raised by the package."""


class DomainError(RobinMassError, ValueError):
    """An argument lies outside the domain of the operation."""


class TruncationError(RobinMassError):
    """A series or lattice sum cannot reach the requested tolerance within its cutoff."""


class SingularityError(RobinMassError, ValueError):
    """Evaluation requested exactly at a singular point of a kernel."""


class ConvergenceError(RobinMassError):
    """An extrapolation, quadrature or fit failed its self-consistency check."""


class PoleProximityError(RobinMassError, ValueError):
    """A spectral parameter sits inside the guard band around an eigenvalue."""


class BranchError(RobinMassError):
    """A real logarithm branch assumption is violated."""


class SchemaError(RobinMassError, ValueError):
    """A configuration or JSON document does not match its schema."""
