"""Exceptions raised within homoflow."""


class HomoflowError(Exception):
    """Parent class for all homoflow errors."""


class DomainError(HomoflowError, ValueError):
    """Input outside the domain of an operation (unordered particles, bad parameters)."""


class NumericalOverflowError(HomoflowError, ArithmeticError):
    """A kernel produced a non-finite value, typically from a vanishing gap."""


class NotConvergedError(HomoflowError):
    """Newton iteration of an implicit step failed; the caller should shrink dt."""

    def __init__(self, msg, residual_norm=float("nan"), iterations=0):
        super().__init__(msg)
        self.residual_norm = residual_norm
        self.iterations = iterations


class SolverError(HomoflowError):
    """An optimization routine failed on every start. Carries the best result found."""

    def __init__(self, msg, best=None):
        super().__init__(msg)
        self.best = best


class ConfigError(HomoflowError, ValueError):
    """Invalid run configuration document."""

    def __init__(self, msg, key=None, line=None, column=None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(msg + loc)
        self.key = key
        self.line = line
        self.column = column
