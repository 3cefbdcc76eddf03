"""Exception types shared across the package.

Each error maps to a CLI exit code (see ``mgplan.cli``).
"""


class MgplanError(Exception):
    exit_code = 1


class DimensionError(MgplanError, ValueError):
    """Operand shapes are incompatible."""

    exit_code = 3


class ContractError(MgplanError, ValueError):
    """A precondition of an operation was violated."""

    exit_code = 3


class DegeneratePathError(MgplanError, ValueError):
    """All trajectory points coincide, so no arc-length parameterization exists."""

    exit_code = 3


class ConfigError(MgplanError, ValueError):
    exit_code = 2


class LayoutError(ConfigError):
    pass


class StateError(MgplanError, RuntimeError):
    exit_code = 3


class DataError(MgplanError, ValueError):
    """Malformed input file. ``line`` is 1-based when known."""

    exit_code = 3

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class TrainingError(MgplanError, RuntimeError):
    """NaN gradients, NaN losses or divergence during training."""

    exit_code = 4


class LoadError(MgplanError, RuntimeError):
    exit_code = 5
