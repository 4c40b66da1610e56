"""Size-preserving U-Net producing a per-pixel bleeding probability."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn


@dataclass
class UNetConfig:
    depth: int = 4
    base_channels: int = 64
    input_size: int = 224

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.input_size % (2 ** self.depth):
            raise ValueError(
                f"input_size {self.input_size} is not divisible by 2**depth = {2 ** self.depth}"
            )

    @property
    def bottleneck_size(self) -> int:
        return self.input_size // 2 ** self.depth


def double_conv(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1, bias=False),
        nn.BatchNorm2d(cout),
        nn.ReLU(inplace=True),
    )


class UNet(nn.Module):
    def __init__(self, config: UNetConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * 2 ** i for i in range(config.depth + 1)]
        self.encoders = nn.ModuleList()
        cin = 3
        for c in chans[:-1]:
            self.encoders.append(double_conv(cin, c))
            cin = c
        self.pool = nn.MaxPool2d(2)
        self.bottleneck = double_conv(chans[-2], chans[-1])

        # decoders[i] restores level depth-1-i
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        for lvl in reversed(range(config.depth)):
            self.upsamplers.append(nn.ConvTranspose2d(chans[lvl + 1], chans[lvl], 2, stride=2))
            self.decoders.append(double_conv(2 * chans[lvl], chans[lvl]))
        self.head = nn.Conv2d(chans[0], 1, 1)

    def decoder_in_channels(self) -> list[int]:
        return [dec[0].in_channels for dec in self.decoders]

    def logits(self, x):
        s = self.config.input_size
        if x.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != (s, s):
            raise ValueError(f"unet expects (B, 3, {s}, {s}) input, got {tuple(x.shape)}")
        skips = []
        for enc in self.encoders:
            x = enc(x)
            skips.append(x)
            x = self.pool(x)
        x = self.bottleneck(x)
        for up, dec, skip in zip(self.upsamplers, self.decoders, reversed(skips)):
            x = dec(torch.cat([up(x), skip], dim=1))
        return self.head(x)

    def forward(self, x):
        return torch.sigmoid(self.logits(x))


def build_unet(config: UNetConfig) -> UNet:
    return UNet(config)


def unet_forward(unet: UNet, batch) -> torch.Tensor:
    """Channel-last wrapper: (B, S, S, 3) -> (B, S, S, 1) probabilities."""
    x = batch if torch.is_tensor(batch) else torch.as_tensor(np.asarray(batch))
    x = x.to(torch.float32)
    s = unet.config.input_size
    if x.ndim != 4 or tuple(x.shape[1:]) != (s, s, 3):
        raise ValueError(f"expected batch of shape (B, {s}, {s}, 3), got {tuple(x.shape)}")
    return unet(x.permute(0, 3, 1, 2)).permute(0, 2, 3, 1)


def binarize_mask(probs, threshold: float = 0.5) -> np.ndarray:
    p = probs.detach().cpu().numpy() if torch.is_tensor(probs) else np.asarray(probs)
    if p.ndim == 3 and p.shape[-1] == 1:
        p = p[..., 0]
    return (p >= threshold).astype(np.uint8)
