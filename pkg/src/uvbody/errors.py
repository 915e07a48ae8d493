"""Exception types shared across the toolkit."""


class UVBodyError(Exception):
    """Base class for all toolkit errors."""


class LoadError(UVBodyError):
    """A model directory or data file is missing, malformed or inconsistent."""


class ValidationError(UVBodyError):
    """An input violates a documented invariant (shapes, masks, ranges)."""


class DegenerateInputError(UVBodyError):
    """Numerically degenerate input: collinear points, empty maps, zero-area charts."""
