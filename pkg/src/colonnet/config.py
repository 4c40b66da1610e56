"""Flat ``key = value`` run configuration shared by every CLI command."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping, Optional

import torch

from .backbone import BackboneSpec
from .dataset import AugmentationConfig
from .heads import HeadConfig
from .losses import FocalTverskyConfig
from .model import ColonNet
from .trainer import OptimizerConfig, TrainingSchedule, default_stages
from .unet import UNetConfig

SEED_ENV = "COLONNET_SEED"


class ConfigError(ValueError):
    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(" ", "").split(",") if x]


def _show(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, list):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Key:
    default: Any
    parse: Callable[[str], Any]
    doc: str


KEYS: dict[str, Key] = {
    "seed": Key(0, int, "global seed (overridden by $COLONNET_SEED)"),
    "dataset.root": Key("data", str, "dataset directory (images/, masks/, annotations.csv)"),
    "dataset.train_fraction": Key(0.8, float, "train share of the train/validation split"),
    "output.dir": Key("runs/colonnet", str, "where checkpoint.bin and report.json go"),
    "input_size": Key(224, int, "square network input size in pixels"),
    "aug.flip_h_prob": Key(0.5, float, "horizontal flip probability"),
    "aug.flip_v_prob": Key(0.5, float, "vertical flip probability"),
    "aug.rotations": Key([0, 90, 180, 270], _int_list, "rotation choices in degrees (multiples of 90)"),
    "aug.contrast_ablation": Key(False, _bool, "apply CLAHE + erosion + dilation to training images"),
    "backbone.name": Key("densenet121", str, "densenet121 | vgg19 | resnet50 | tiny"),
    "backbone.pretrained": Key(False, _bool, "try to load ImageNet weights"),
    "backbone.weights_path": Key("", str, "state dict for the feature extractor (empty = none)"),
    "backbone.flip_equivariant": Key(False, _bool, "tie tiny-backbone kernels to their mirror image"),
    "heads.cls_widths": Key([512, 128], _int_list, "classification head hidden widths"),
    "heads.det_widths": Key([512, 256, 64], _int_list, "detection head hidden widths"),
    "unet.depth": Key(4, int, "number of down/up levels"),
    "unet.base_channels": Key(64, int, "channels at the first level"),
    "loss.ft_alpha": Key(0.7, float, "Focal Tversky false-negative weight"),
    "loss.ft_beta": Key(0.3, float, "Focal Tversky false-positive weight"),
    "loss.ft_gamma": Key(4.0 / 3.0, float, "Focal Tversky exponent"),
    "loss.ft_epsilon": Key(1e-6, float, "Focal Tversky smoothing"),
    "train.detection_epochs": Key(10, int, "epochs for the detection stage"),
    "train.classification_epochs": Key(20, int, "epochs for the classification stage"),
    "train.segmentation_epochs": Key(40, int, "epochs for the segmentation stage"),
    "train.optimizer": Key("adam", str, "adam | sgd"),
    "train.learning_rate": Key(1e-4, float, "optimizer step size"),
    "train.batch_size": Key(16, int, "mini-batch size"),
    "train.backbone_in_detection": Key(True, _bool, "update the backbone during the detection stage"),
    "train.validate_every_epoch": Key(False, _bool, "validation metrics after every epoch, not only per stage"),
    "train.deterministic": Key(True, _bool, "force deterministic torch kernels"),
    "eval.cls_threshold": Key(0.5, float, "bleeding probability threshold"),
    "eval.mask_threshold": Key(0.5, float, "mask pixel threshold"),
    "eval.iou_threshold": Key(0.5, float, "box IoU counted as a detection hit"),
    "predict.cam_alpha": Key(0.4, float, "CAM overlay opacity"),
}

# desk-scale settings used by the synthetic acceptance run
TINY_PRESET: dict[str, Any] = {
    "input_size": 64,
    "backbone.name": "tiny",
    "unet.depth": 3,
    "unet.base_channels": 16,
    "train.learning_rate": 1e-3,
}


def describe_keys() -> str:
    width = max(map(len, KEYS))
    return "\n".join(f"  {k:<{width}} = {_show(v.default):<16} {v.doc}" for k, v in KEYS.items())


@dataclass
class RunConfig:
    values: dict = field(default_factory=lambda: {k: v.default for k, v in KEYS.items()})

    @classmethod
    def from_mapping(cls, overrides: Mapping[str, Any], env: Optional[Mapping[str, str]] = None) -> "RunConfig":
        cfg = cls()
        for key, value in overrides.items():
            cfg.set(key, value)
        cfg._apply_env(os.environ if env is None else env)
        return cfg

    @classmethod
    def from_file(cls, path, env: Optional[Mapping[str, str]] = None) -> "RunConfig":
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_text(text, env)

    @classmethod
    def from_text(cls, text: str, env: Optional[Mapping[str, str]] = None) -> "RunConfig":
        cfg = cls()
        for line_no, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {line_no}: expected 'key = value', got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            cfg.set(key, value)
        cfg._apply_env(os.environ if env is None else env)
        return cfg

    def set(self, key: str, value: Any):
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        if isinstance(value, str):
            try:
                value = KEYS[key].parse(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key!r}: {exc}", key=key) from exc
        self.values[key] = value

    def _apply_env(self, env: Mapping[str, str]):
        if env.get(SEED_ENV):
            self.set("seed", env[SEED_ENV])

    def __getitem__(self, key: str):
        return self.values[key]

    def to_text(self) -> str:
        return "\n".join(f"{k} = {_show(v)}" for k, v in self.values.items()) + "\n"

    # builders

    def backbone_spec(self) -> BackboneSpec:
        return BackboneSpec(
            name=self["backbone.name"],
            input_size=self["input_size"],
            pretrained=self["backbone.pretrained"],
            weights_path=self["backbone.weights_path"] or None,
            flip_equivariant=self["backbone.flip_equivariant"],
        )

    def build_model(self) -> ColonNet:
        torch.manual_seed(self["seed"])
        try:
            return ColonNet(
                self.backbone_spec(),
                HeadConfig(self["heads.cls_widths"], self["heads.det_widths"]),
                UNetConfig(self["unet.depth"], self["unet.base_channels"], self["input_size"]),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def build_schedule(self) -> TrainingSchedule:
        try:
            return TrainingSchedule(
                stages=default_stages(
                    self["train.detection_epochs"],
                    self["train.classification_epochs"],
                    self["train.segmentation_epochs"],
                    self["train.backbone_in_detection"],
                ),
                optimizer=OptimizerConfig(
                    self["train.optimizer"], self["train.learning_rate"],
                    self["train.batch_size"], self["seed"],
                ),
                augmentation=AugmentationConfig(
                    self["aug.flip_h_prob"], self["aug.flip_v_prob"], self["aug.rotations"],
                    self["input_size"], self["aug.contrast_ablation"],
                ),
                focal_tversky=FocalTverskyConfig(
                    self["loss.ft_alpha"], self["loss.ft_beta"],
                    self["loss.ft_gamma"], self["loss.ft_epsilon"],
                ),
                train_fraction=self["dataset.train_fraction"],
                validate_every_epoch=self["train.validate_every_epoch"],
                deterministic=self["train.deterministic"],
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
