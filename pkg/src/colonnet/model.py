"""The full ColonNet bundle: backbone, ColonSeg heads and the U-Net branch."""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn

from .backbone import BackboneSpec, build_backbone
from .dataset import BoundingBox, ImageSample, resize
from .heads import HeadConfig, build_heads, decode_outputs, tie_head_mirror_symmetry
from .unet import UNetConfig, build_unet

COMPONENTS = ("backbone", "classification_head", "detection_head", "unet")


@dataclass
class Prediction:
    id: str
    bleed_prob: float
    bbox: BoundingBox
    mask_prob: np.ndarray


def images_to_tensor(samples: Sequence[ImageSample]) -> torch.Tensor:
    arr = np.stack([s.image for s in samples]).astype(np.float32)
    return torch.from_numpy(arr).permute(0, 3, 1, 2).contiguous()


class ColonNet(nn.Module):
    def __init__(self, backbone_spec: BackboneSpec, head_config: HeadConfig, unet_config: UNetConfig):
        super().__init__()
        if backbone_spec.input_size != unet_config.input_size:
            raise ValueError(
                f"backbone input {backbone_spec.input_size} != unet input {unet_config.input_size}"
            )
        self.backbone_spec = backbone_spec
        self.head_config = head_config
        self.unet_config = unet_config
        self.backbone = build_backbone(backbone_spec)
        self.heads = build_heads(head_config, backbone_spec.feature_shape)
        if backbone_spec.flip_equivariant:
            tie_head_mirror_symmetry(self.heads.classification)
        self.unet = build_unet(unet_config)
        self.trained_stages: list[str] = []

    @property
    def input_size(self) -> int:
        return self.backbone_spec.input_size

    def component(self, name: str) -> nn.Module:
        table = {
            "backbone": self.backbone,
            "classification_head": self.heads.classification,
            "detection_head": self.heads.detection,
            "unet": self.unet,
        }
        if name not in table:
            raise KeyError(f"unknown component {name!r}; expected one of {COMPONENTS}")
        return table[name]

    def colonseg(self, x: torch.Tensor):
        """Return (classification logits, raw box corners) for an NCHW batch."""
        feats = self.backbone(x)
        return self.heads.classification(feats), self.heads.detection(feats)

    @torch.no_grad()
    def predict(self, samples: Sequence[ImageSample], batch_size: int = 32) -> list[Prediction]:
        was_training = self.training
        self.eval()
        out: list[Prediction] = []
        try:
            for start in range(0, len(samples), batch_size):
                chunk = [resize(s, self.input_size) for s in samples[start:start + batch_size]]
                x = images_to_tensor(chunk)
                logits, raw = self.colonseg(x)
                masks = self.unet(x)[:, 0].numpy()
                decoded = decode_outputs(torch.sigmoid(logits).numpy(), raw.numpy())
                for s, d, m in zip(chunk, decoded, masks):
                    out.append(Prediction(s.id, d.bleed_prob, d.bbox, m))
        finally:
            self.train(was_training)
        return out

    def config_dict(self) -> dict:
        return {
            "backbone": asdict(self.backbone_spec),
            "heads": {k: list(v) for k, v in asdict(self.head_config).items()},
            "unet": asdict(self.unet_config),
        }

    @classmethod
    def from_config_dict(cls, d: dict) -> "ColonNet":
        spec = BackboneSpec(**{**d["backbone"], "pretrained": False, "weights_path": None})
        return cls(spec, HeadConfig(**d["heads"]), UNetConfig(**d["unet"]))


def parameter_checksum(module: nn.Module) -> str:
    """SHA-256 over every parameter and buffer, in state-dict order."""
    h = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def component_checksums(model: ColonNet) -> dict[str, str]:
    return {name: parameter_checksum(model.component(name)) for name in COMPONENTS}


def save_checkpoint(model: ColonNet, path, seed: int, extra: Optional[dict] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "format": "colonnet-checkpoint-v1",
            "config": model.config_dict(),
            "state_dict": model.state_dict(),
            "seed": seed,
            "trained_stages": list(model.trained_stages),
            "extra": extra or {},
        },
        path,
    )
    return path


def load_checkpoint(path) -> tuple[ColonNet, dict]:
    try:
        blob = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(blob, dict) or blob.get("format") != "colonnet-checkpoint-v1":
        raise ValueError(f"{path} is not a ColonNet checkpoint")
    model = ColonNet.from_config_dict(blob["config"])
    model.load_state_dict(blob["state_dict"])
    model.trained_stages = list(blob.get("trained_stages", []))
    model.eval()
    return model, blob
