"""Exception taxonomy shared across the package."""


class PdsrError(Exception):
    """Base class for all library errors."""


class DimensionError(PdsrError, ValueError):
    """Tensor shapes are inconsistent with an operation's contract."""


class ContractError(PdsrError, ValueError):
    """An argument violates a documented precondition."""


class StateError(PdsrError, RuntimeError):
    """Mutable training state (dual variables, optimizer) is inconsistent."""


class NumericError(PdsrError, ArithmeticError):
    """A computation produced non-finite values where finite ones are required."""


class FormatError(PdsrError, ValueError):
    """A file (checkpoint, image, manifest, config) does not parse."""


class ConfigError(PdsrError, ValueError):
    """A run configuration is invalid or contains unknown keys."""


class DivergenceError(PdsrError, RuntimeError):
    """Training or an iterative solver diverged.

    ``snapshot_path`` points at a diagnostic checkpoint when one was written.
    """

    def __init__(self, message, snapshot_path=None):
        super().__init__(message)
        self.snapshot_path = snapshot_path
