"""Exception and warning types shared across the package.

Errors abort the operation that raised them; warnings flag recoverable
conditions (clipped audio, zero-variance features, optimizers stopping on
an iteration cap) without interrupting a batch run.
"""


class AirwareError(Exception):
    """Base class for all errors raised by this package."""


class NyquistViolation(AirwareError):
    """Carrier frequency too close to (or beyond) half the sample rate."""


class GridViolation(AirwareError):
    """Pipeline parameters fall outside the supported search grid."""


class DomainError(AirwareError):
    """A physical quantity is outside its valid domain (speed, angle, ...)."""


class SimulationStall(AirwareError):
    """Repeated attempts failed to synthesize a usable recording."""


class TooShort(AirwareError):
    """Signal has fewer samples than one analysis window."""


class BandOutOfRange(AirwareError):
    """Requested spectrogram band extends past the frequency axis."""


class ShapeMismatch(AirwareError):
    """Array arguments disagree on dimensions."""


class DivergenceError(AirwareError):
    """Training produced non-finite loss or parameters."""


class EmptyMatrix(AirwareError):
    """A confusion matrix with no observations was given to a metric."""


class TooFewUsers(AirwareError):
    """Cross-validation protocol needs more distinct users than provided."""


class InsufficientSamples(AirwareError):
    """A stratified split needs more repetitions per class than provided."""


class NoSuccessfulTrial(AirwareError):
    """Every trial in a tuning run failed; there is no best configuration."""


class ClipWarning(UserWarning):
    """Synthesized audio exceeded [-1, 1] and was clipped."""


class ZeroVarianceWarning(UserWarning):
    """A feature column had (near) zero variance; its scale was clamped."""


class NonConvergenceWarning(UserWarning):
    """An iterative optimizer hit its iteration cap before its tolerance."""


class RankDeficiencyWarning(UserWarning):
    """Requested more principal components than the data's rank supports."""


class AbsentClassWarning(UserWarning):
    """A class with no test samples was dropped from a macro average."""
