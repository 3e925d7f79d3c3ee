class InvalidInput(ValueError):
    """Bad arguments: dimension mismatch, empty samples, out-of-range configs."""


class InvariantViolation(RuntimeError):
    """A structural guarantee of the partition (covering, non-empty domain) broke."""


class ResourceError(RuntimeError):
    """A configured size cap (grid cells, memory budget) would be exceeded."""
