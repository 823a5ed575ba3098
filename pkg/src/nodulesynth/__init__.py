"""Lung-nodule synthesis and detector augmentation on phantom chest images.

The pipeline factors nodule synthesis into three controllable stages: a GAN
samples binary shape masks, a deterministic size modulation rescales any
mask to a requested pixel diameter, and a gated-convolution inpainting
network fills the masked region of a real patch with nodule texture. On top
of that sits a hard-example-mining loop that measures which nodule sizes a
detector misses, synthesizes more of exactly those, and finetunes.
"""

from .errors import (
    BadLatentDim,
    ChannelMismatch,
    ChecksumMismatch,
    ConfigError,
    DegenerateMask,
    DimensionMismatch,
    EmptyBatch,
    EmptyDataset,
    EmptyDistribution,
    EmptyMask,
    NoGroundTruth,
    NoMissedNodules,
    NoduleSynthError,
    NotFitted,
    NoValidCropLocation,
    OutOfBounds,
    ShapeTooLarge,
    SizeMismatch,
    TooFewSamples,
)
from .froc import Box, DetectionRecord, FrocSummary, froc_summary, iou, match_detections
from .imaging import crop_patch, from_network, load_image, load_mask, paste_patch, save_image, save_mask, to_network
from .masks import clean_mask, estimate_diameter, modulate_size, upsample_nn
from .metrics import MetricReport, fid_score, frechet_distance, pixel_metrics

__version__ = "0.1.0"

__all__ = [
    "Box",
    "DetectionRecord",
    "FrocSummary",
    "MetricReport",
    "clean_mask",
    "crop_patch",
    "estimate_diameter",
    "fid_score",
    "frechet_distance",
    "froc_summary",
    "from_network",
    "iou",
    "load_image",
    "load_mask",
    "match_detections",
    "modulate_size",
    "paste_patch",
    "pixel_metrics",
    "save_image",
    "save_mask",
    "to_network",
    "upsample_nn",
    # errors
    "NoduleSynthError",
    "BadLatentDim",
    "ChannelMismatch",
    "ChecksumMismatch",
    "ConfigError",
    "DegenerateMask",
    "DimensionMismatch",
    "EmptyBatch",
    "EmptyDataset",
    "EmptyDistribution",
    "EmptyMask",
    "NoGroundTruth",
    "NoMissedNodules",
    "NotFitted",
    "NoValidCropLocation",
    "OutOfBounds",
    "ShapeTooLarge",
    "SizeMismatch",
    "TooFewSamples",
]
