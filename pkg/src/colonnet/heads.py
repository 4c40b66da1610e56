"""ColonSeg heads: bleeding classification and single-box regression."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.utils.parametrize as parametrize

from .dataset import BoundingBox


@dataclass
class HeadConfig:
    cls_hidden_widths: Sequence[int] = field(default_factory=lambda: [512, 128])
    det_hidden_widths: Sequence[int] = field(default_factory=lambda: [512, 256, 64])

    def __post_init__(self):
        for name in ("cls_hidden_widths", "det_hidden_widths"):
            widths = list(getattr(self, name))
            if not widths:
                raise ValueError(f"{name} must not be empty")
            if any(w <= 0 for w in widths):
                raise ValueError(f"{name} must be positive, got {widths}")


@dataclass
class ColonSegOutput:
    bleed_prob: float
    bbox: BoundingBox


def _mlp(in_features: int, widths: Sequence[int], activations: Sequence[type], out_features: int):
    layers: list[nn.Module] = [nn.Flatten()]
    prev = in_features
    for i, w in enumerate(widths):
        layers += [nn.Linear(prev, w), activations[i % len(activations)]()]
        prev = w
    layers.append(nn.Linear(prev, out_features))
    return nn.Sequential(*layers)


class ClassificationHead(nn.Module):
    """Flatten -> ReLU dense stack -> one logit.

    ``forward`` returns the logit; ``prob`` applies the sigmoid.  The logit
    is kept separate for a numerically stable BCE and for the CAM.
    """

    def __init__(self, feature_shape, widths: Sequence[int]):
        super().__init__()
        h, w, c = feature_shape
        self.feature_shape = tuple(feature_shape)
        self.in_features = h * w * c
        self.mlp = _mlp(self.in_features, widths, [nn.ReLU], 1)

    def forward(self, feats):
        return self.mlp(feats).squeeze(-1)

    def prob(self, feats):
        return torch.sigmoid(self(feats))


class DetectionHead(nn.Module):
    """Flatten -> dense stack alternating ReLU and ELU -> 4 sigmoid coordinates."""

    def __init__(self, feature_shape, widths: Sequence[int]):
        super().__init__()
        h, w, c = feature_shape
        self.in_features = h * w * c
        self.mlp = _mlp(self.in_features, widths, [nn.ReLU, nn.ELU], 4)

    def forward(self, feats):
        return torch.sigmoid(self.mlp(feats))


class _MirrorTiedInput(nn.Module):
    def __init__(self, feature_shape):
        super().__init__()
        h, w, c = feature_shape
        self.chw = (c, h, w)

    def forward(self, weight):
        out = weight.shape[0]
        w4 = weight.reshape(out, *self.chw)
        return (0.5 * (w4 + w4.flip(-1))).reshape(out, -1)


def tie_head_mirror_symmetry(head: ClassificationHead) -> ClassificationHead:
    """Make the classifier blind to a left-right flip of its feature map."""
    first = head.mlp[1]
    if not parametrize.is_parametrized(first, "weight"):
        parametrize.register_parametrization(first, "weight", _MirrorTiedInput(head.feature_shape))
    return head


class ColonSegHeads(nn.Module):
    def __init__(self, config: HeadConfig, feature_shape):
        super().__init__()
        self.config = config
        self.classification = ClassificationHead(feature_shape, config.cls_hidden_widths)
        self.detection = DetectionHead(feature_shape, config.det_hidden_widths)


def build_heads(config: HeadConfig, feature_shape) -> ColonSegHeads:
    return ColonSegHeads(config, feature_shape)


def decode_outputs(probs, raw_boxes) -> list[ColonSegOutput]:
    """Pair probabilities with corner-sorted boxes."""
    probs = np.asarray(probs, dtype=np.float64).reshape(-1)
    raw = np.asarray(raw_boxes, dtype=np.float64).reshape(-1, 4)
    return [ColonSegOutput(float(p), BoundingBox.from_corners(*r)) for p, r in zip(probs, raw)]


@torch.no_grad()
def colonseg_forward(backbone, heads: ColonSegHeads, batch) -> list[ColonSegOutput]:
    """Run classification and detection on an NCHW batch."""
    feats = backbone(batch)
    probs = heads.classification.prob(feats)
    raw = heads.detection(feats)
    return decode_outputs(probs.cpu().numpy(), raw.cpu().numpy())


def classify(output: ColonSegOutput, threshold: float = 0.5) -> int:
    return int(output.bleed_prob >= threshold)
