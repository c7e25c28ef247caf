"""Exception types raised across the package."""


class FbnnError(Exception):
    """Base class for all package errors."""


class InvalidInputError(FbnnError, ValueError):
    """Input rejected before any computation (shape, range or type problem)."""


class NumericOverflowError(FbnnError, FloatingPointError):
    """A network evaluation produced non-finite values.

    ``param_index`` points at the parameter coordinate most likely responsible
    (first non-finite entry, else the largest in magnitude).
    """

    def __init__(self, message, param_index=None):
        super().__init__(message)
        self.param_index = param_index


class ChainAbortError(FbnnError, RuntimeError):
    """An MCMC chain could not continue; ``partial_trace`` holds what was recorded."""

    def __init__(self, message, partial_trace=None, step=None):
        super().__init__(message)
        self.partial_trace = partial_trace
        self.step = step


class TrainingAbortError(FbnnError, RuntimeError):
    """Gradient-based training diverged or produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class PhaseError(FbnnError, RuntimeError):
    """Failure inside one phase of a calibrate/emulate/sample run."""

    def __init__(self, phase, cause):
        super().__init__(f"{phase} phase failed: {cause}")
        self.phase = phase
        self.cause = cause
