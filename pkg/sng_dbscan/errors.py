class SngError(Exception):
    """Base class for every error raised by sng_dbscan."""


class ParameterError(SngError, ValueError):
    """An input parameter or command line flag is out of range."""


class ContractError(SngError, ValueError):
    """An operation was called outside its precondition."""


class DatasetFormatError(SngError, ValueError):
    def __init__(self, message: str, line: int = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyInputError(DatasetFormatError):
    pass


class EmptyLevelSetError(ContractError):
    pass


class CalibrationError(ParameterError):
    pass


class CheckFailedError(SngError):
    """A report threshold check failed while running with --assert."""
