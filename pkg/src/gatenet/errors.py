"""Shared exception types.

Grouped by how the command line maps them to exit codes: configuration
problems, data problems, and training divergence each get their own code.
"""


class GatenetError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(GatenetError):
    """Invalid configuration value or unusable combination of options."""


class DataError(GatenetError):
    """Input data violates a documented requirement."""


class CorruptFileError(DataError):
    """File is structurally broken (truncated, inconsistent sizes, ...)."""


class UnsupportedFormatError(DataError):
    """File is well formed but uses a feature this reader does not handle."""


class GraphStateError(GatenetError):
    """Autodiff graph used out of order, e.g. backward before any forward."""


class EmptyContextError(GatenetError):
    """Pooling was asked to reduce over zero context events."""


class TrainingDivergedError(GatenetError):
    """Non-finite value appeared during optimization.

    Carries enough detail to tell the user where training blew up.
    """

    def __init__(self, message, *, param_name=None, iteration=None):
        super().__init__(message)
        self.param_name = param_name
        self.iteration = iteration
