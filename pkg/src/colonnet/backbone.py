"""Shared convolutional feature extractors.

All registered backbones reduce the input by a factor of 32 and stop before
global pooling, so both heads and the CAM see a spatial feature map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
import torch.nn.utils.parametrize as parametrize
import torchvision

log = logging.getLogger(__name__)

FEATURE_CHANNELS = {"densenet121": 1024, "vgg19": 512, "resnet50": 2048, "tiny": 64}
REDUCTION = 32


@dataclass
class BackboneSpec:
    name: str = "densenet121"
    input_size: int = 224
    pretrained: bool = False
    weights_path: Optional[str] = None
    # tiny only: tie every kernel to its left-right mirror image
    flip_equivariant: bool = False

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        side = self.input_size // REDUCTION
        return (side, side, FEATURE_CHANNELS[self.name])


class MirrorSymmetric(nn.Module):
    """Parametrization averaging a kernel with its horizontal mirror."""

    def forward(self, w):
        return 0.5 * (w + w.flip(-1))


def tie_mirror_symmetry(module: nn.Module) -> nn.Module:
    """Constrain every Conv2d kernel in ``module`` to be left-right symmetric.

    With symmetric kernels, per-channel batch norm, ReLU and non-overlapping
    pooling, the network commutes with a horizontal flip of its input.
    """
    for m in module.modules():
        if isinstance(m, nn.Conv2d) and not parametrize.is_parametrized(m, "weight"):
            parametrize.register_parametrization(m, "weight", MirrorSymmetric())
    return module


def _conv_bn_relu(cin, cout, k=3):
    return nn.Sequential(
        nn.Conv2d(cin, cout, k, padding=k // 2, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class _DenseStage(nn.Module):
    """Two densely connected 3x3 convs, a 1x1 transition and 2x2 average pooling."""

    def __init__(self, cin, growth, cout):
        super().__init__()
        self.conv1 = _conv_bn_relu(cin, growth)
        self.conv2 = _conv_bn_relu(cin + growth, growth)
        self.transition = _conv_bn_relu(cin + 2 * growth, cout, k=1)
        self.pool = nn.AvgPool2d(2)

    def forward(self, x):
        x = torch.cat([x, self.conv1(x)], dim=1)
        x = torch.cat([x, self.conv2(x)], dim=1)
        return self.pool(self.transition(x))


class TinyBackbone(nn.Module):
    """Desk-scale DenseNet-style extractor: stem plus four downsampling dense stages."""

    def __init__(self, widths=(16, 24, 32, 48, 64), growth=12):
        super().__init__()
        self.stem = nn.Sequential(_conv_bn_relu(3, widths[0]), nn.AvgPool2d(2))
        self.stages = nn.Sequential(
            *[_DenseStage(widths[i], growth, widths[i + 1]) for i in range(len(widths) - 1)]
        )
        self.out_channels = widths[-1]

    def forward(self, x):
        return self.stages(self.stem(x))


class _TorchvisionFeatures(nn.Module):
    def __init__(self, body: nn.Module, final_relu: bool):
        super().__init__()
        self.body = body
        self.final_relu = final_relu

    def forward(self, x):
        x = self.body(x)
        return F.relu(x) if self.final_relu else x


def _torchvision_body(name: str, pretrained: bool) -> nn.Module:
    ctor, weights_enum = {
        "densenet121": (torchvision.models.densenet121, torchvision.models.DenseNet121_Weights),
        "vgg19": (torchvision.models.vgg19, torchvision.models.VGG19_Weights),
        "resnet50": (torchvision.models.resnet50, torchvision.models.ResNet50_Weights),
    }[name]
    net = None
    if pretrained:
        try:
            net = ctor(weights=weights_enum.DEFAULT)
        except Exception as exc:  # offline or blocked download
            log.warning("pretrained %s weights unavailable (%s); using random init", name, exc)
    if net is None:
        net = ctor(weights=None)
    if name == "densenet121":
        # torchvision applies the last ReLU outside `features`
        return _TorchvisionFeatures(net.features, final_relu=True)
    if name == "vgg19":
        return _TorchvisionFeatures(net.features, final_relu=False)
    body = nn.Sequential(*list(net.children())[:-2])
    return _TorchvisionFeatures(body, final_relu=False)


class Backbone(nn.Module):
    """Feature extractor with a fixed (h, w, C) output contract.

    Operates on NCHW tensors; ``extract_features`` offers the channel-last view.
    """

    def __init__(self, spec: BackboneSpec):
        super().__init__()
        if spec.name not in FEATURE_CHANNELS:
            raise ValueError(
                f"unknown backbone {spec.name!r}; registry: {sorted(FEATURE_CHANNELS)}"
            )
        if spec.input_size % REDUCTION:
            raise ValueError(f"input_size must be a multiple of {REDUCTION}, got {spec.input_size}")
        self.spec = spec
        if spec.name == "tiny":
            self.net = TinyBackbone()
            if spec.pretrained and not spec.weights_path:
                log.warning("no pretrained weights exist for the tiny backbone; using random init")
            if spec.flip_equivariant:
                tie_mirror_symmetry(self.net)
        else:
            if spec.flip_equivariant:
                raise ValueError("flip_equivariant is only supported for the tiny backbone")
            self.net = _torchvision_body(spec.name, spec.pretrained and not spec.weights_path)
        if spec.weights_path:
            state = torch.load(spec.weights_path, map_location="cpu", weights_only=True)
            self.net.load_state_dict(state)
        elif not spec.pretrained:
            log.debug("backbone %s randomly initialised", spec.name)

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return self.spec.feature_shape

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        s = self.spec.input_size
        if x.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != (s, s):
            raise ValueError(f"backbone expects (B, 3, {s}, {s}) input, got {tuple(x.shape)}")
        return self.net(x)


def build_backbone(spec: BackboneSpec) -> Backbone:
    return Backbone(spec)


def extract_features(backbone: Backbone, batch) -> torch.Tensor:
    """Channel-last convenience wrapper: (B, S, S, 3) -> (B, h, w, C)."""
    x = torch.as_tensor(np.asarray(batch) if not torch.is_tensor(batch) else batch, dtype=torch.float32)
    s = backbone.spec.input_size
    if x.ndim != 4 or tuple(x.shape[1:]) != (s, s, 3):
        raise ValueError(f"expected batch of shape (B, {s}, {s}, 3), got {tuple(x.shape)}")
    return backbone(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)
