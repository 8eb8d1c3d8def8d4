"""Исключения предметной области. Каждый класс несёт код выхода CLI."""

EXIT_OK = 0
EXIT_WARNINGS = 2
EXIT_USAGE = 64
EXIT_DATA = 65
EXIT_NUMERIC = 70


class TimeFuseError(Exception):
    exit_code: int = EXIT_DATA

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.message = message
        self.context = context


# Форматы файлов
class FormatError(TimeFuseError):
    pass

class TruncatedFile(FormatError):
    pass

class ChecksumMismatch(FormatError):
    pass

class ParseError(FormatError):
    def __init__(self, message: str, line: int = None, **context):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message, line=line, **context)
        self.line = line


# Некорректные данные
class WindowTooShort(TimeFuseError):
    pass

class NonFiniteInput(TimeFuseError):
    pass

class ShapeMismatch(TimeFuseError):
    pass

class DuplicateModelName(TimeFuseError):
    pass

class RosterMismatch(TimeFuseError):
    pass

class EmptyDataset(TimeFuseError):
    pass

class EmptySubset(TimeFuseError):
    pass

class LagTooLarge(TimeFuseError):
    pass

class UnknownTask(TimeFuseError):
    pass

class InsufficientTasks(UnknownTask):
    pass

class MissingModelFile(TimeFuseError):
    pass

class InvalidWeights(TimeFuseError):
    pass


# Ошибки использования
class UsageError(TimeFuseError):
    exit_code = EXIT_USAGE

class MissingInput(UsageError):
    pass

class UnknownMethod(TimeFuseError):
    exit_code = EXIT_USAGE

class KOutOfRange(TimeFuseError):
    exit_code = EXIT_USAGE

class InvalidZooMethod(TimeFuseError):
    exit_code = EXIT_USAGE

class InvalidPeriod(InvalidZooMethod):
    pass

class InvalidWidth(InvalidZooMethod):
    pass

class InvalidOrder(InvalidZooMethod):
    pass


# Численные сбои
class NonFiniteLoss(TimeFuseError):
    exit_code = EXIT_NUMERIC
