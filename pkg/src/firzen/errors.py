class FirzenError(Exception):
    """Base class for all errors raised by the package."""


class ParseError(FirzenError):
    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class EmptyDatasetError(FirzenError):
    pass


class AlignmentError(FirzenError):
    pass


class DataError(FirzenError):
    def __init__(self, message, row=None):
        self.row = row
        super().__init__(message)


class ConfigError(FirzenError):
    pass


class CheckpointError(FirzenError):
    pass


class TrainingError(FirzenError):
    pass
