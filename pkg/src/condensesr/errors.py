"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Tensor shapes are incompatible; the message names the offending axis."""


class ContractError(RuntimeError):
    """An operation was called outside its allowed state or argument domain."""


class ConfigError(ValueError):
    """A configuration value is invalid or inconsistent."""


class NumericError(RuntimeError):
    """A numeric failure (non-finite loss, overflow) occurred during a run."""
