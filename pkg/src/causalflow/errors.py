"""Exception and warning classes.

Every error carries an ``exit_code`` used by the command line runner so that
each failure class maps to a distinct process status.
"""


class CausalFlowError(Exception):
    exit_code = 1


class ShapeError(CausalFlowError, ValueError):
    exit_code = 2


class CyclicGraphError(CausalFlowError, ValueError):
    exit_code = 3


class CyclicBlockError(CyclicGraphError):
    exit_code = 4


class UnknownSCMError(CausalFlowError, LookupError):
    exit_code = 5


class DomainError(CausalFlowError, ValueError):
    """Input lies outside the domain of an analytic inverse."""

    exit_code = 6


class ConfigError(CausalFlowError, ValueError):
    exit_code = 7


class NonFiniteError(CausalFlowError, FloatingPointError):
    exit_code = 8


class NonConvergenceError(CausalFlowError, RuntimeError):
    exit_code = 9


class FormatError(CausalFlowError, ValueError):
    exit_code = 10


class VersionError(FormatError):
    exit_code = 11


class ChecksumError(CausalFlowError, OSError):
    exit_code = 12


class MissingColumnError(FormatError):
    exit_code = 13


class DegenerateLabelsError(CausalFlowError, ValueError):
    exit_code = 14


class ImplausibleValueWarning(UserWarning):
    """Intervention value falls outside the observed support."""


class DiameterWarning(UserWarning):
    """Generative flow has fewer layers than the graph diameter."""
