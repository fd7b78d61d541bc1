"""Exception hierarchy.

Every error carries a module-prefixed ``code`` (e.g. ``volume_io.BadMagic``)
so the CLI can print a single machine-parsable line on failure.
"""


class EntrovoteError(Exception):
    module = "entrovote"

    @property
    def code(self):
        return f"{self.module}.{type(self).__name__}"


# volume_io
class VolumeError(EntrovoteError):
    module = "volume_io"


class TooShort(VolumeError):
    pass


class BadMagic(VolumeError):
    pass


class BadSize(VolumeError):
    pass


class BadDim(VolumeError):
    pass


class UnsupportedDatatype(VolumeError):
    pass


class TruncatedData(VolumeError):
    pass


class Unsupported4D(VolumeError):
    pass


class InvalidVolume(VolumeError):
    pass


# entropy_sampler
class SamplerError(EntrovoteError):
    module = "entropy_sampler"


class EmptyHistogram(SamplerError):
    pass


class OverTrimmed(SamplerError):
    pass


# base_learner
class LearnerError(EntrovoteError):
    module = "base_learner"


class DimensionMismatch(LearnerError):
    pass


class EmptyDataset(LearnerError):
    pass


class BadHeader(LearnerError):
    pass


class NegativeProbability(LearnerError):
    pass


class RowSumOutOfTolerance(LearnerError):
    pass


class DuplicateId(LearnerError):
    pass


# ensemble
class EnsembleError(EntrovoteError):
    module = "ensemble"


class KTooLarge(EnsembleError):
    pass


class IdMismatch(EnsembleError):
    pass


class EmptyScan(EnsembleError):
    pass


# metrics
class MetricsError(EntrovoteError):
    module = "metrics"


class LengthMismatch(MetricsError):
    pass


class EmptyMatrix(MetricsError):
    pass


class ClassAbsent(MetricsError):
    pass


# dataset
class DatasetError(EntrovoteError):
    module = "dataset"


class ClassTooSmall(DatasetError):
    pass


class BadExtents(DatasetError):
    pass


class IoFailure(DatasetError):
    pass


# cli
class CliError(EntrovoteError):
    module = "cli"


class UsageError(CliError):
    pass


class ConfigError(CliError):
    pass
