"""Loading, splitting and augmenting labelled GI frames.

Samples carry an H x W x 3 float image in [0, 1], a binary bleeding label,
an optional normalized corner box and an optional binary mask.  Every
geometric transform is applied to all three spatial fields at once so they
stay consistent.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image
from scipy import ndimage
from skimage import exposure

log = logging.getLogger(__name__)

ANNOTATION_HEADER = ["id", "label", "x_min", "y_min", "x_max", "y_max"]


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in normalized corner form."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if not (0.0 <= self.x_min < self.x_max <= 1.0):
            raise DatasetError(f"invalid x extent [{self.x_min}, {self.x_max}]")
        if not (0.0 <= self.y_min < self.y_max <= 1.0):
            raise DatasetError(f"invalid y extent [{self.y_min}, {self.y_max}]")

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    @classmethod
    def from_corners(cls, a: float, b: float, c: float, d: float) -> "BoundingBox":
        """Sort two arbitrary corners into min/max form.

        Degenerate extents are widened by a hair so the result is always a
        valid box; this only matters for untrained detection heads.
        """
        x0, x1 = sorted((float(a), float(c)))
        y0, y1 = sorted((float(b), float(d)))
        x0, x1 = _open_interval(x0, x1)
        y0, y1 = _open_interval(y0, y1)
        return cls(x0, y0, x1, y1)

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> Optional["BoundingBox"]:
        """Tight box around the foreground pixels, using pixel-edge coordinates."""
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        if rows.size == 0:
            return None
        h, w = mask.shape
        return cls(cols[0] / w, rows[0] / h, (cols[-1] + 1) / w, (rows[-1] + 1) / h)


def _open_interval(lo: float, hi: float, eps: float = 1e-6) -> tuple[float, float]:
    lo, hi = min(max(lo, 0.0), 1.0), min(max(hi, 0.0), 1.0)
    if hi - lo >= eps:
        return lo, hi
    mid = min(max((lo + hi) / 2, eps), 1.0 - eps)
    return mid - eps / 2, mid + eps / 2


@dataclass
class ImageSample:
    id: str
    image: np.ndarray
    label: int
    bbox: Optional[BoundingBox] = None
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.float32)
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise DatasetError(f"{self.id}: image must be H x W x 3, got {self.image.shape}")
        if self.label not in (0, 1):
            raise DatasetError(f"{self.id}: label must be 0 or 1, got {self.label}")
        self.label = int(self.label)
        if self.bbox is not None and self.label != 1:
            raise DatasetError(f"{self.id}: bounding box on a non-bleeding sample")
        if self.mask is not None:
            self.mask = (np.asarray(self.mask) > 0).astype(np.uint8)
            if self.mask.shape != self.image.shape[:2]:
                raise DatasetError(
                    f"{self.id}: mask shape {self.mask.shape} does not match "
                    f"image shape {self.image.shape[:2]}"
                )

    @property
    def size(self) -> tuple[int, int]:
        return self.image.shape[0], self.image.shape[1]


@dataclass
class AugmentationConfig:
    flip_h_prob: float = 0.5
    flip_v_prob: float = 0.5
    rotation_choices: Sequence[int] = field(default_factory=lambda: [0, 90, 180, 270])
    target_size: int = 224
    ablation_contrast: bool = False

    def __post_init__(self):
        for name in ("flip_h_prob", "flip_v_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {p}")
        if self.target_size <= 0:
            raise ValueError(f"target_size must be positive, got {self.target_size}")
        if not self.rotation_choices:
            raise ValueError("rotation_choices must not be empty")
        for deg in self.rotation_choices:
            if deg % 90:
                raise ValueError(f"rotations must be multiples of 90 degrees, got {deg}")


# --------------------------------------------------------------------------
# Loading

def _read_rgb(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _read_mask(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        return (np.asarray(im.convert("L")) > 127).astype(np.uint8)


def _parse_box(row: dict, row_no: int) -> Optional[BoundingBox]:
    cells = [(row.get(k) or "").strip() for k in ANNOTATION_HEADER[2:]]
    if not any(cells):
        return None
    if not all(cells):
        raise DatasetError(f"annotations.csv row {row_no} ({row['id']}): incomplete bbox")
    try:
        return BoundingBox(*(float(c) for c in cells))
    except ValueError as exc:
        raise DatasetError(f"annotations.csv row {row_no} ({row['id']}): {exc}") from exc


def load_dataset(root_path) -> list[ImageSample]:
    """Read ``root/images``, ``root/masks`` and ``root/annotations.csv``.

    Images without an annotation row are labelled by their mask: bleeding if
    the mask has any foreground, non-bleeding otherwise.
    """
    root = Path(root_path)
    if not root.is_dir():
        raise DatasetError(f"dataset directory not found: {root}")
    image_dir, mask_dir = root / "images", root / "masks"
    image_paths = {p.stem: p for p in sorted(image_dir.glob("*.png"))} if image_dir.is_dir() else {}

    rows: dict[str, tuple[int, Optional[BoundingBox]]] = {}
    ann_path = root / "annotations.csv"
    if ann_path.exists():
        with open(ann_path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            missing = set(ANNOTATION_HEADER) - set(reader.fieldnames or [])
            if missing:
                raise DatasetError(f"annotations.csv missing columns: {sorted(missing)}")
            # header is line 1
            for row_no, row in enumerate(reader, start=2):
                sid = row["id"].strip()
                if sid not in image_paths:
                    raise DatasetError(f"annotations.csv row {row_no}: unknown image id {sid!r}")
                label = int(row["label"])
                box = _parse_box(row, row_no)
                if box is not None and label != 1:
                    raise DatasetError(f"annotations.csv row {row_no} ({sid}): bbox on label {label}")
                rows[sid] = (label, box)

    samples = []
    for sid in sorted(image_paths):
        image = _read_rgb(image_paths[sid])
        mask = None
        mask_path = mask_dir / f"{sid}.png"
        if mask_path.exists():
            mask = _read_mask(mask_path)
            if mask.shape != image.shape[:2]:
                raise DatasetError(
                    f"{sid}: mask size {mask.shape} differs from image size {image.shape[:2]}"
                )
        if sid in rows:
            label, box = rows[sid]
        else:
            label, box = int(mask is not None and mask.any()), None
        samples.append(ImageSample(sid, image, label, box, mask))
    return samples


def split_dataset(samples: Sequence[ImageSample], train_fraction: float = 0.8, seed: int = 0):
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(samples)
    if n < 2:
        raise ValueError(f"need at least 2 samples to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(train_fraction * n))
    n_train = min(max(n_train, 1), n - 1)
    train = [samples[i] for i in order[:n_train]]
    val = [samples[i] for i in order[n_train:]]
    return train, val


# --------------------------------------------------------------------------
# Geometric transforms

def flip_horizontal(sample: ImageSample) -> ImageSample:
    box = sample.bbox
    if box is not None:
        box = BoundingBox(1.0 - box.x_max, box.y_min, 1.0 - box.x_min, box.y_max)
    mask = None if sample.mask is None else sample.mask[:, ::-1].copy()
    return replace(sample, image=sample.image[:, ::-1].copy(), mask=mask, bbox=box)


def flip_vertical(sample: ImageSample) -> ImageSample:
    box = sample.bbox
    if box is not None:
        box = BoundingBox(box.x_min, 1.0 - box.y_max, box.x_max, 1.0 - box.y_min)
    mask = None if sample.mask is None else sample.mask[::-1].copy()
    return replace(sample, image=sample.image[::-1].copy(), mask=mask, bbox=box)


def _rotate_box_once(box: BoundingBox) -> BoundingBox:
    # counter-clockwise quarter turn maps (x, y) -> (y, 1 - x)
    xs = [y for y in (box.y_min, box.y_max)]
    ys = [1.0 - x for x in (box.x_min, box.x_max)]
    return BoundingBox(min(xs), min(ys), max(xs), max(ys))


def rotate90(sample: ImageSample, k: int) -> ImageSample:
    """Rotate counter-clockwise by ``k`` quarter turns."""
    if k not in (0, 1, 2, 3):
        raise ValueError(f"k must be in {{0, 1, 2, 3}}, got {k}")
    h, w = sample.size
    if h != w:
        raise DatasetError(f"{sample.id}: rotate90 needs a square image, got {h}x{w}")
    if k == 0:
        return replace(sample)
    box = sample.bbox
    for _ in range(k):
        box = None if box is None else _rotate_box_once(box)
    mask = None if sample.mask is None else np.rot90(sample.mask, k).copy()
    return replace(sample, image=np.rot90(sample.image, k).copy(), mask=mask, bbox=box)


def resize(sample: ImageSample, target_size: int) -> ImageSample:
    if target_size <= 0:
        raise ValueError(f"target_size must be positive, got {target_size}")
    if sample.size == (target_size, target_size):
        return replace(sample)
    size = (target_size, target_size)
    img = torch.from_numpy(np.ascontiguousarray(sample.image)).permute(2, 0, 1)[None]
    img = F.interpolate(img, size=size, mode="bilinear", align_corners=False)
    image = img[0].permute(1, 2, 0).clamp(0.0, 1.0).numpy()
    mask = None
    if sample.mask is not None:
        m = torch.from_numpy(sample.mask.astype(np.float32))[None, None]
        mask = F.interpolate(m, size=size, mode="nearest")[0, 0].numpy().astype(np.uint8)
    return replace(sample, image=image, mask=mask)


def augment(sample: ImageSample, config: AugmentationConfig, rng: np.random.Generator) -> ImageSample:
    """Random flips and a quarter-turn rotation, then resize.

    Draws are made in a fixed order regardless of outcome so a given rng
    state always consumes the same number of variates.
    """
    do_h = rng.random() < config.flip_h_prob
    do_v = rng.random() < config.flip_v_prob
    deg = int(config.rotation_choices[rng.integers(len(config.rotation_choices))])

    out = sample
    if do_h:
        out = flip_horizontal(out)
    if do_v:
        out = flip_vertical(out)
    k = (deg // 90) % 4
    if k:
        if out.size[0] != out.size[1]:
            out = resize(out, config.target_size)
        out = rotate90(out, k)
    out = resize(out, config.target_size)
    if config.ablation_contrast:
        out = apply_contrast_ablation(out)
    return out


# --------------------------------------------------------------------------
# Contrast/morphology ablation (off by default)

def erode_dilate(image: np.ndarray, size: int = 3) -> np.ndarray:
    """Grey-level 3x3 erosion followed by 3x3 dilation, per channel."""
    fp = (size, size) + (1,) * (image.ndim - 2)
    eroded = ndimage.grey_erosion(image, size=fp, mode="nearest")
    return ndimage.grey_dilation(eroded, size=fp, mode="nearest")


def apply_contrast_ablation(sample: ImageSample) -> ImageSample:
    """Local histogram equalization, erosion, then dilation on the image only."""
    image = sample.image
    if np.ptp(image) > 0:
        image = exposure.equalize_adapthist(image, clip_limit=0.01).astype(np.float32)
    image = erode_dilate(image)
    return replace(sample, image=np.clip(image, 0.0, 1.0).astype(np.float32))
