"""Exception types shared across the package."""


class FmmError(Exception):
    """Base class for all fmmkit errors."""


class CapacityError(FmmError):
    """A configured resource limit (level cap, histogram budget, integer width) was exceeded."""


class DomainError(FmmError, ValueError):
    """An argument violated a documented precondition."""


class RoutingError(FmmError):
    """The data manager could not satisfy an import request; signals a box-type bug."""


class InfeasiblePartitionError(FmmError):
    """More compute units were requested than there are non-empty boxes to assign."""
