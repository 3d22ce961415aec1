"""Exception hierarchy. Each class carries the process exit code the CLI uses."""


class DucaError(Exception):
    exit_code = 1


class InvalidInputError(DucaError, ValueError):
    exit_code = 3


class FormatError(DucaError):
    exit_code = 4


class IntegrityError(DucaError):
    exit_code = 5


class DigestMismatchError(DucaError):
    exit_code = 6


class ConvergenceError(DucaError, RuntimeError):
    exit_code = 7

    def __init__(self, message, residual=None, iterations=None, context=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations
        self.context = context


class MissingFeatureError(DucaError, KeyError):
    exit_code = 8

    def __str__(self):
        return str(self.args[0]) if self.args else "missing feature"


class EmptyOutputError(DucaError):
    exit_code = 9
