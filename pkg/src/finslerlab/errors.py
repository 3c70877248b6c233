"""Exception hierarchy shared by all modules."""


class FinslerLabError(Exception):
    """Base class for all package errors."""


class ValidationError(FinslerLabError):
    """Bad user input: scene configs, operation preconditions, malformed specs."""


class DslParseError(ValidationError):
    """Expression or scene text failed to parse.

    Carries 1-based line/column of the offending token.
    """

    def __init__(self, message, line=None, col=None):
        self.line = line
        self.col = col
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", col {col}" if col is not None else "") + ")"
        super().__init__(message + loc)


class DomainError(FinslerLabError):
    """Evaluation outside the chart domain, or a metric that fails to be
    positive definite at an evaluation site."""


class NumericalError(FinslerLabError):
    """Internal numeric failure: singular matrices, diverged solves."""


class BoundsError(NumericalError):
    """Integration bounding box failed its containment check."""


class DegenerateNormError(NumericalError):
    """A norm produced an empty or unusable acceptance region."""
