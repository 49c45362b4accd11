"""Exception hierarchy shared across the library."""


class NvsurfError(Exception):
    """Base class for all library errors."""


class DimensionError(NvsurfError):
    """Tensor shapes are inconsistent with the operation's contract."""


class TrainingDivergenceError(NvsurfError):
    """A non-finite value appeared in a loss or gradient."""


class MeshFormatError(NvsurfError):
    """A mesh file could not be parsed."""


class EmptySceneError(NvsurfError):
    """The scene contains no usable geometry."""


class ConfigurationError(NvsurfError):
    """A config value violates its invariants."""


class CheckpointFormatError(NvsurfError):
    """A checkpoint or cache file is malformed or corrupted."""


class EmbeddingLookupError(NvsurfError):
    """An embedding-row index is out of range."""


class UndefinedMetricError(NvsurfError):
    """A metric was requested over an empty mask."""
