"""Exception types raised by the toolkit.

ValidationError subclasses map to CLI exit code 2, NumericalError
subclasses to exit code 3.
"""


class PhaseSyncError(Exception):
    """Base class for every toolkit error"""

    exit_code = 1


class ValidationError(PhaseSyncError):
    """Input, format or configuration problem"""

    exit_code = 2


class NumericalError(PhaseSyncError):
    """Failure inside a numerical stage"""

    exit_code = 3


# ingest
class TruncatedFile(ValidationError):
    pass


class InvalidHeader(ValidationError):
    pass


class InconsistentRecord(ValidationError):
    pass


class TooFewChannels(ValidationError):
    pass


class NoMatchingEvents(ValidationError):
    pass


class VersionMismatch(ValidationError):
    pass


class CorruptContainer(ValidationError):
    pass


# dsp
class EmptyInput(ValidationError):
    pass


class InvalidBand(ValidationError):
    pass


class EvenTaps(ValidationError):
    pass


class TooFewTaps(ValidationError):
    pass


class SignalTooShort(ValidationError):
    pass


class WaveletTooWide(ValidationError):
    pass


# metrics
class EmptyEpochs(ValidationError):
    pass


class TooFewTrials(ValidationError):
    pass


class PhaseOutOfRange(ValidationError):
    pass


# stats
class LengthMismatch(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


class WindowTooLarge(ValidationError):
    pass


class WindowOutOfRange(ValidationError):
    pass


class ConstantInput(NumericalError):
    pass


class DegenerateControl(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass


class NonFiniteInput(NumericalError):
    pass


class SolverFailure(NumericalError):
    """A linear-algebra or floating-point failure inside numpy or scipy"""


# artifacts
class RankDeficient(NumericalError):
    pass


class AllSparse(NumericalError):
    pass


class NotConverged(UserWarning):
    """FastICA hit the iteration limit; the model is still returned"""


# synth / pipeline
class SpecMismatch(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class ReportIoError(ValidationError):
    pass


class PipelineStageError(PhaseSyncError):
    """Wraps an error raised inside a pipeline stage with the stage name"""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, 'exit_code', 1)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
