"""Exception types shared by every module."""


class NqsvmError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(NqsvmError, ValueError):
    """Invalid configuration or hyperparameters."""


class InputError(NqsvmError, ValueError):
    """Dimension mismatch or violated dataset precondition."""


class FormatError(NqsvmError, ValueError):
    """Malformed IDX, model or CSV file."""


class NumericalError(NqsvmError, ArithmeticError):
    """Non-finite value where a finite one is required."""


class ContractError(NqsvmError, RuntimeError):
    """A forward cache was reused or does not belong to the network."""
