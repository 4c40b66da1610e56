"""Deterministic synthetic "bleeding" frames.

Each bleeding frame carries one rotated, red-tinted ellipse on a smooth
tissue-coloured background.  The mask is the exact rasterized ellipse
(pixel centres inside the ellipse) and the box is its tight bounding
rectangle.  Non-bleeding frames have an empty mask and no box.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from scipy import ndimage

from .dataset import ANNOTATION_HEADER, BoundingBox, ImageSample

BACKGROUND_RGB = np.array([0.62, 0.42, 0.32], dtype=np.float32)
BLOB_RGB = np.array([0.95, 0.10, 0.08], dtype=np.float32)


@dataclass
class SynthConfig:
    n_samples: int = 100
    image_size: int = 64
    bleeding_fraction: float = 0.5
    blob_radius_range: tuple[float, float] = (0.05, 0.3)
    seed: int = 0
    texture_amplitude: float = 0.06
    # minimum gap between blob and background mean red intensity
    red_margin: float = 0.15

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError(f"n_samples must be >= 2, got {self.n_samples}")
        if not 0.0 < self.bleeding_fraction < 1.0:
            raise ValueError(f"bleeding_fraction must lie in (0, 1), got {self.bleeding_fraction}")
        r_min, r_max = self.blob_radius_range
        if not 0.0 < r_min <= r_max < 0.5:
            raise ValueError(f"need 0 < r_min <= r_max < 0.5, got {self.blob_radius_range}")
        if self.image_size < 8:
            raise ValueError(f"image_size too small: {self.image_size}")


def ellipse_mask(size: int, cx: float, cy: float, a: float, b: float, theta: float) -> np.ndarray:
    """Pixels whose centres fall inside the rotated ellipse (pixel units)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    dx, dy = xx - cx, yy - cy
    c, s = np.cos(theta), np.sin(theta)
    u = dx * c + dy * s
    v = -dx * s + dy * c
    return ((u / a) ** 2 + (v / b) ** 2 <= 1.0).astype(np.uint8)


def _background(rng: np.random.Generator, size: int, amplitude: float) -> np.ndarray:
    noise = rng.standard_normal((size, size, 3)).astype(np.float32)
    smooth = ndimage.gaussian_filter(noise, sigma=(size / 12, size / 12, 0), mode="wrap")
    smooth /= np.abs(smooth).max() + 1e-8
    tint = BACKGROUND_RGB + rng.uniform(-0.05, 0.05, size=3).astype(np.float32)
    return tint + amplitude * smooth


def _quantize(image: np.ndarray) -> np.ndarray:
    # snap to the 8-bit grid so PNG round trips are exact
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)


def _make_blob(rng: np.random.Generator, cfg: SynthConfig):
    size = cfg.image_size
    r_min, r_max = cfg.blob_radius_range
    while True:
        a = rng.uniform(r_min, r_max) * size
        b = rng.uniform(r_min, r_max) * size
        theta = rng.uniform(0.0, np.pi)
        reach = max(a, b)
        cx = rng.uniform(reach, size - reach)
        cy = rng.uniform(reach, size - reach)
        mask = ellipse_mask(size, cx, cy, a, b, theta)
        if mask.sum() >= 4:
            return mask


def _make_sample(idx: int, bleeding: bool, cfg: SynthConfig, seed_seq: np.random.SeedSequence) -> ImageSample:
    rng = np.random.default_rng(seed_seq)
    size = cfg.image_size
    image = _background(rng, size, cfg.texture_amplitude)
    sid = f"synth_{idx:05d}"
    if not bleeding:
        return ImageSample(sid, _quantize(image), 0, None, np.zeros((size, size), np.uint8))
    mask = _make_blob(rng, cfg)
    shade = 1.0 + 0.05 * rng.uniform(-1.0, 1.0)
    blob = np.clip(BLOB_RGB * shade, 0.0, 1.0)
    m = mask[..., None].astype(np.float32)
    image = image * (1.0 - m) + (blob + 0.3 * (image - BACKGROUND_RGB)) * m
    return ImageSample(sid, _quantize(image), 1, BoundingBox.from_mask(mask), mask)


def generate(config: SynthConfig) -> list[ImageSample]:
    n_bleed = int(round(config.n_samples * config.bleeding_fraction))
    # own stream for label placement: must not coincide with split_dataset's shuffle
    label_rng, *_ = np.random.SeedSequence([config.seed, 1]).spawn(1)
    order = np.random.default_rng(label_rng).permutation(config.n_samples)
    bleeding = np.zeros(config.n_samples, dtype=bool)
    bleeding[order[:n_bleed]] = True
    children = np.random.SeedSequence(config.seed).spawn(config.n_samples)
    return [_make_sample(i, bool(bleeding[i]), config, children[i]) for i in range(config.n_samples)]


def write_dataset(samples: Sequence[ImageSample], root_path) -> None:
    root = Path(root_path)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        (root / "masks").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {root}: {exc}") from exc

    with open(root / "annotations.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ANNOTATION_HEADER)
        for s in samples:
            img = np.round(np.clip(s.image, 0.0, 1.0) * 255.0).astype(np.uint8)
            Image.fromarray(img, mode="RGB").save(root / "images" / f"{s.id}.png")
            if s.mask is not None:
                Image.fromarray((s.mask > 0).astype(np.uint8) * 255, mode="L").save(
                    root / "masks" / f"{s.id}.png"
                )
            coords = ["", "", "", ""] if s.bbox is None else [f"{v:.6f}" for v in s.bbox.as_tuple()]
            writer.writerow([s.id, s.label] + coords)
