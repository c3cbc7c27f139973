"""Exception types shared across the package.

Each class carries the process exit code the command-line front end uses
when the error escapes to the top level.
"""


class SphereError(Exception):
    exit_code = 1

    def __init__(self, message, stage=None):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        msg = super().__str__()
        return f"[{self.stage}] {msg}" if self.stage else msg


class InvalidInputError(SphereError, ValueError):
    exit_code = 2


class UnsupportedDegreeError(InvalidInputError):
    pass


class DivergenceError(SphereError, FloatingPointError):
    """A loss term became NaN or infinite during fitting."""

    exit_code = 3

    def __init__(self, message, term=None, iteration=None, stage=None):
        super().__init__(message, stage=stage)
        self.term = term
        self.iteration = iteration


class SphereIOError(SphereError, OSError):
    exit_code = 4
