"""Exception hierarchy shared across the package."""


class NoduleSynthError(Exception):
    """Base class for all package errors."""


class EmptyMask(NoduleSynthError):
    """A binary mask has no foreground pixels where at least one is required."""


class DegenerateMask(NoduleSynthError):
    """A mask whose equivalent-ellipse diameter is zero (e.g. a single pixel)."""


class ShapeTooLarge(NoduleSynthError):
    """A rescaled shape's bounding box does not fit on the requested canvas."""


class SizeMismatch(NoduleSynthError):
    """Two grids that must share a spatial size do not."""


class ChannelMismatch(NoduleSynthError):
    """Feature-map channel count does not match a layer's kernels."""


class EmptyBatch(NoduleSynthError):
    """A score batch handed to a loss is empty."""


class EmptyDataset(NoduleSynthError):
    """A training dataset contains no samples."""


class BadLatentDim(NoduleSynthError):
    """A latent vector does not have the dimension the generator expects."""


class DimensionMismatch(NoduleSynthError):
    """Moment vectors/matrices passed to a distance do not share a dimension."""


class TooFewSamples(NoduleSynthError):
    """Not enough images to estimate a feature covariance."""


class NoGroundTruth(NoduleSynthError):
    """Detection records contain no ground-truth boxes to score against."""


class NotFitted(NoduleSynthError):
    """Detector used for prediction or finetuning before fit/load."""


class NoMissedNodules(NoduleSynthError):
    """Every ground-truth nodule was detected; there is nothing to mine."""


class EmptyDistribution(NoduleSynthError):
    """An attribute distribution has no samples to draw from."""


class NoValidCropLocation(NoduleSynthError):
    """No patch center satisfies the lung-interior containment policy."""


class OutOfBounds(NoduleSynthError):
    """A crop/paste window does not fit inside the image."""


class ConfigError(NoduleSynthError):
    """Invalid configuration value; carries the offending key path."""

    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"{key_path}: {message}")


class ChecksumMismatch(NoduleSynthError):
    """A dataset file does not match the checksum recorded in the manifest."""
