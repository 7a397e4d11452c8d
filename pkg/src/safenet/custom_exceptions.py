from typing import Optional


class SafeNetError(Exception):
    """Base class for every error raised by the toolkit."""


class UsageError(SafeNetError):
    """Invalid user input: configuration, manifests, command-line arguments."""


class DimensionError(SafeNetError, ValueError):
    def __init__(self, message: str, *shapes: tuple[int, ...]):
        if shapes:
            message = f"{message} (shapes: {', '.join(str(s) for s in shapes)})"
        super().__init__(message)
        self.shapes = shapes


class RangeError(SafeNetError, ValueError):
    pass


class PreconditionError(SafeNetError, ValueError):
    pass


class UnsupportedFilterError(SafeNetError):
    pass


class SignalLengthError(SafeNetError, ValueError):
    pass


class EmptyDatasetError(SafeNetError, ValueError):
    pass


class ContractViolationError(SafeNetError):
    pass


class SplitError(SafeNetError):
    pass


class NonFiniteLossError(SafeNetError, FloatingPointError):
    def __init__(self, batch_index: int, epoch: int, value: float):
        super().__init__(f"Non-finite loss {value!r} at epoch {epoch}, batch {batch_index}")
        self.batch_index = batch_index
        self.epoch = epoch


class InvalidLatencyError(SafeNetError, ZeroDivisionError):
    pass


class BenchmarkBusyError(SafeNetError):
    def __init__(self):
        super().__init__("Another latency benchmark is already running in this process")


class ContainerFormatError(SafeNetError):
    pass


class ParseError(UsageError):
    def __init__(self, message: str, *, path: str, line: Optional[int] = None, column: Optional[str] = None):
        location = path if line is None else f"{path}:{line}"
        super().__init__(f"{location}: {message}")
        self.path = path
        self.line = line
        self.column = column


class ConfigMismatchError(UsageError):
    def __init__(self, differences: list[str]):
        super().__init__("Checkpoint config does not match runtime config: " + "; ".join(differences))
        self.differences = differences


class OutputExistsError(UsageError):
    def __init__(self, path: str):
        super().__init__(f"Output `{path}` already exists, pass --force to overwrite")
        self.path = path


class InputNotFoundError(UsageError):
    def __init__(self, path: str, what: str = "input"):
        super().__init__(f"{what} `{path}` does not exist")
        self.path = path
