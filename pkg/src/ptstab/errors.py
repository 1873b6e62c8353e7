"""Exception hierarchy shared by the ptstab modules."""


class PtstabError(Exception):
    """Base class for all errors raised by ptstab."""


class DomainError(PtstabError, ValueError):
    """An argument lies outside the domain where the formula is defined."""


class ConstraintError(PtstabError, ValueError):
    """A design constraint (gain inequality, admissibility) is violated."""


class EvaluationError(PtstabError, ArithmeticError):
    """A numerical evaluation produced a non-finite value."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class EstimationError(PtstabError, RuntimeError):
    """Monte Carlo estimation could not produce a statistic."""


class ConfigError(PtstabError, ValueError):
    """A run configuration is malformed or refers to an unknown preset."""
