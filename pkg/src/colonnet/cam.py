"""Gradient-weighted class activation maps on the final backbone feature map."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from matplotlib import colormaps

from .dataset import ImageSample, resize


@dataclass
class Heatmap:
    values: np.ndarray  # h x w, normalized
    upsampled: np.ndarray  # H x W, overlay-ready


def normalize_map(values) -> np.ndarray:
    """Min-max scale to [0, 1]; constant maps become all zeros."""
    v = np.asarray(values, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi - lo <= 0:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def gradcam_map(activations, gradients) -> np.ndarray:
    """Combine a C x h x w activation stack with its gradient into a heatmap.

    Channel weights are spatially averaged gradients; the weighted channel
    sum is rectified and normalized.
    """
    a = np.asarray(activations, dtype=np.float64)
    g = np.asarray(gradients, dtype=np.float64)
    weights = g.mean(axis=(1, 2))
    cam = np.tensordot(weights, a, axes=1)
    return normalize_map(np.maximum(cam, 0.0))


def upsample_map(values: np.ndarray, size: int) -> np.ndarray:
    t = torch.from_numpy(np.asarray(values, dtype=np.float64))[None, None]
    up = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return up[0, 0].clamp(0.0, 1.0).numpy()


def compute_cam(model, image, target: str = "bleed_class", allow_untrained: bool = False) -> Heatmap:
    """Grad-CAM of the bleeding logit with respect to the backbone output.

    ``image`` is an H x W x 3 array in [0, 1] or an ``ImageSample``; it is
    resized to the model input size.
    """
    if target != "bleed_class":
        raise ValueError(f"unsupported CAM target {target!r}")
    heads = getattr(model, "heads", None)
    if heads is None or getattr(heads, "classification", None) is None:
        raise ValueError("model has no classification head")
    if not allow_untrained and "classification" not in getattr(model, "trained_stages", []):
        raise ValueError("classification head has not been trained")

    if not isinstance(image, ImageSample):
        image = ImageSample("cam", np.asarray(image, dtype=np.float32), 0)
    size = model.input_size
    image = resize(image, size)
    x = torch.from_numpy(np.ascontiguousarray(image.image)).permute(2, 0, 1)[None]

    was_training = model.training
    model.eval()
    try:
        with torch.enable_grad():
            feats = model.backbone(x).detach().requires_grad_(True)
            logit = heads.classification(feats).sum()
            (grad,) = torch.autograd.grad(logit, feats)
    finally:
        model.train(was_training)

    values = gradcam_map(feats[0].detach().numpy(), grad[0].numpy())
    return Heatmap(values=values, upsampled=upsample_map(values, size))


def overlay(image, heatmap, alpha: float = 0.4, cmap: str = "jet") -> np.ndarray:
    """Alpha-blend a colour-mapped heatmap onto an RGB image in [0, 1]."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    img = np.asarray(image, dtype=np.float64)
    heat = heatmap.upsampled if isinstance(heatmap, Heatmap) else np.asarray(heatmap)
    if heat.shape != img.shape[:2]:
        raise ValueError(f"heatmap {heat.shape} does not match image {img.shape[:2]}")
    coloured = colormaps[cmap](np.clip(heat, 0.0, 1.0))[..., :3]
    return (1.0 - alpha) * img + alpha * coloured
