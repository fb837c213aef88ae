"""Exception hierarchy.  The CLI maps :class:`UserError` to exit code 1 and
:class:`NumericError` to exit code 2."""


class WganSingError(Exception):
    pass


class UserError(WganSingError):
    """Bad arguments, configuration or input files."""


class ConfigError(UserError, ValueError):
    pass


class ContractError(WganSingError, RuntimeError):
    """An API precondition was violated by the caller."""


class DimensionError(UserError, ValueError):
    def __init__(self, axis: str, message: str):
        super().__init__(f"[{axis}] {message}")
        self.axis = axis


class DegenerateInputError(UserError, ValueError):
    pass


class VocabularyError(UserError, ValueError):
    def __init__(self, message: str, frame: int | None = None):
        super().__init__(message)
        self.frame = frame


class RangeError(UserError, ValueError):
    pass


class BoundsError(UserError, IndexError):
    pass


class ParseError(UserError, ValueError):
    def __init__(self, message: str, line: int | None = None, path=None):
        where = ""
        if path is not None:
            where += f"{path}"
        if line is not None:
            where += f":{line}"
        super().__init__(f"{where}: {message}" if where else message)
        self.line = line
        self.path = path


class AlignmentError(UserError, ValueError):
    pass


class CorpusError(UserError, OSError):
    pass


class CheckpointError(UserError, OSError):
    pass


class NumericError(WganSingError, FloatingPointError):
    """A loss went non-finite during training."""

    def __init__(self, message: str, batch_indices=None):
        super().__init__(message)
        self.batch_indices = batch_indices
