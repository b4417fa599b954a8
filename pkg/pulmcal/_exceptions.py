"""
Exception hierarchy shared by the library and the command line.

Every error raised on purpose derives from :class:`PulmcalError`, whose
``exit_code`` is what ``pulmcal`` returns to the shell.
"""


class PulmcalError(Exception):
    """Base class of all pulmcal errors."""

    exit_code = 2


class DataValidationError(PulmcalError, ValueError):
    """Input data, files or options do not satisfy their contract."""


class NetworkConfigError(DataValidationError):
    """The network configuration violates its schema or topology rules."""


class MissingArtifactError(PulmcalError, FileNotFoundError):
    """An upstream pipeline artifact is not available."""


class ConfigHashMismatchError(PulmcalError, RuntimeError):
    """An artifact was produced by a different configuration."""


class NumericalError(PulmcalError, ArithmeticError):
    """A numerical procedure failed."""

    exit_code = 3


class UnstableSimulationError(NumericalError):
    """The CFL condition could not be met within the step-count ceiling."""


class VesselCollapseError(NumericalError):
    """A vessel reached a nonpositive or non-finite cross-sectional area."""


class TrainingError(NumericalError):
    """Gaussian process hyperparameter optimization produced a non-finite loss."""


class DegenerateChainError(NumericalError, ValueError):
    """A chain segment has zero variance."""
