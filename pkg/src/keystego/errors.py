"""Exception types shared across the package."""


class KeystegoError(Exception):
    """Base class for all package errors."""


class ShapeError(KeystegoError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ContractError(KeystegoError, ValueError):
    """A call violated an operation precondition (e.g. non-scalar loss)."""


class GeometryError(KeystegoError, ValueError):
    """Image or tensor spatial dimensions are unusable (odd, indivisible, mismatched)."""


class ConfigError(KeystegoError, ValueError):
    """Invalid model, training or attack configuration."""
