"""Exception hierarchy shared by every module.

User-facing failures (bad input files, bad configs) derive from
``EpgenError`` and map to exit code 1 in the CLI.  ``InvariantViolation``
marks a broken internal guarantee and maps to exit code 2.
"""


class EpgenError(Exception):
    pass


class ParseError(EpgenError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class UnknownReferenceError(EpgenError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else ""


class DomainError(EpgenError, ValueError):
    pass


class ConfigError(EpgenError, ValueError):
    pass


class UndefinedLabelError(DomainError):
    pass


class TrainingDivergedError(EpgenError, FloatingPointError):
    def __init__(self, epoch):
        super().__init__(f"training diverged: non-finite loss at epoch {epoch}")
        self.epoch = epoch


class EmptyActionError(EpgenError):
    pass


class InvariantViolation(AssertionError):
    pass
