"""Exception hierarchy shared by every module.

Each error family carries a stable process exit code used by the CLI.
"""


class TensorAugError(Exception):
    exit_code = 1


class InvalidArgument(TensorAugError, ValueError):
    exit_code = 7


class InvalidMode(InvalidArgument):
    pass


class ShapeError(TensorAugError, ValueError):
    exit_code = 7


class InvalidRank(TensorAugError, ValueError):
    exit_code = 2


class DecompositionError(TensorAugError, RuntimeError):
    exit_code = 8


class ParseError(TensorAugError, ValueError):
    exit_code = 3

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DataError(TensorAugError, ValueError):
    exit_code = 4


class ConfigError(TensorAugError, ValueError):
    exit_code = 5


class NumericalError(TensorAugError, FloatingPointError):
    exit_code = 6

    def __init__(self, message, step=None):
        self.step = step
        if step is not None:
            message = f"step {step}: {message}"
        super().__init__(message)
