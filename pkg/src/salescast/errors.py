"""Exception hierarchy shared by all salescast modules."""


class SalescastError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(SalescastError):
    """Shapes of operands are incompatible."""


class NumericError(SalescastError):
    """A numeric operation produced NaN/Inf from finite inputs."""


class ContractError(SalescastError):
    """An API contract was violated (stale context, missing rng, ...)."""


class ParameterError(SalescastError):
    """A hyperparameter or argument value is outside its allowed range."""


class DegenerateBatchError(SalescastError):
    """Batch statistics requested on fewer than two values per channel."""


class ConstructionError(SalescastError):
    """A model spec violates one of its invariants."""


class SchemaError(SalescastError):
    """Input CSV is missing required columns or is empty."""


class EmptyDatasetError(SalescastError):
    """Cleaning removed every row."""


class GapError(SalescastError):
    """A quarterly series has an interior missing quarter (strict mode)."""


class InsufficientDataError(SalescastError):
    """Series too short to produce a single supervised window."""


class DivergedTrainingError(SalescastError):
    """Training loss became NaN/Inf."""

    def __init__(self, epoch, message=None):
        self.epoch = epoch
        super().__init__(message or f"training diverged at epoch {epoch}")


class CorruptModelError(SalescastError):
    """Model file failed magic/version/checksum validation."""


class BenchmarkError(SalescastError):
    """Every run of a model kind diverged; no median can be reported."""


class ConfigError(SalescastError):
    """Bad key/value in a config file or CLI override."""
