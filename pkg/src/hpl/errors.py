"""Exception types shared across the package."""


class HPLError(Exception):
    """Base class for all errors raised by hpl."""


class ContractError(HPLError, ValueError):
    """A documented precondition was violated (wrong dimension, bad value)."""


class FactorizationError(HPLError):
    """The regularized Gram matrix could not be Cholesky-factorized."""


class FitError(HPLError):
    """Every restart of a hyperparameter fit failed."""


class SerializationError(HPLError, ValueError):
    """A persisted document could not be parsed."""


class SafeSetError(HPLError):
    """No member of a safe-set family passed invariance verification."""


class ConfigError(HPLError, ValueError):
    """Invalid run configuration; the message names the offending field."""
