"""ColonNet: staged multi-task bleeding classification, detection and segmentation."""

from .dataset import AugmentationConfig, BoundingBox, ImageSample, load_dataset, split_dataset
from .model import ColonNet, load_checkpoint, save_checkpoint

__all__ = [
    "AugmentationConfig",
    "BoundingBox",
    "ColonNet",
    "ImageSample",
    "load_checkpoint",
    "load_dataset",
    "save_checkpoint",
    "split_dataset",
]
