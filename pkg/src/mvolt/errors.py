"""Exception types raised by the public API."""


class MvoltError(Exception):
    """Base class for all package errors."""


class ShapeError(MvoltError):
    """Input tensor shape does not match the model's input spec."""


class LabelError(MvoltError):
    """Class label outside the model's class range."""


class NumericError(MvoltError):
    """A public operation produced non-finite values."""


class TrainingDivergedError(MvoltError):
    """Training loss became non-finite."""


class MapError(MvoltError):
    """Variation-map entry references an out-of-range layer or index."""


class ModelPairError(MvoltError):
    """Two model views that must share a topology do not."""


class MetricError(MvoltError):
    """Metric undefined for the given records (e.g. empty denominator)."""


class FormatError(MvoltError):
    """Malformed binary or text artifact (IDX file, checkpoint, map)."""


class ConsistencyError(MvoltError):
    """Cross-checked artifact fields disagree (counts, hashes)."""


class ConfigError(MvoltError):
    """Invalid or incomplete experiment configuration."""


class ProfileError(MvoltError):
    """Detection profile cannot be built from the given inputs."""


class StageError(MvoltError):
    """Campaign stage failure; carries the stage tag for diagnostics."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
