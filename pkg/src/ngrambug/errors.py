"""Exception hierarchy. Everything raised on bad data derives from DataError."""


class DataError(Exception):
    """Base class for data, model and I/O errors (CLI exit code 1)."""


class MissingColumn(DataError):
    pass


class BadTimestamp(DataError):
    pass


class DuplicateId(DataError):
    pass


class UnknownLabel(DataError):
    pass


class MissingText(DataError):
    pass


class HttpError(DataError):
    def __init__(self, message, status=None):
        super().__init__(message)
        self.status = status


class NotFound(HttpError):
    pass


class ParseError(DataError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyCorpus(DataError):
    pass


class DegenerateClass(DataError):
    pass


class SingleClass(DataError):
    def __init__(self, message, fold=None):
        if fold is not None:
            message = f"fold {fold}: {message}"
        super().__init__(message)
        self.fold = fold


class LengthMismatch(DataError):
    pass


class MissingTimestamp(DataError):
    pass
