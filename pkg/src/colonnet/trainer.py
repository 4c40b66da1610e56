"""Staged training: detection, then classification, then segmentation.

Each stage optimizes exactly one loss over one filtered view of the data
while every component outside its trainable set is frozen (no gradients,
inference-mode batch norm) so its parameters and buffers stay bit-identical.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset

from .dataset import AugmentationConfig, ImageSample, augment, resize, split_dataset
from .losses import FocalTverskyConfig, bce_loss, focal_tversky_loss, mse_loss
from .metrics import evaluate
from .model import COMPONENTS, ColonNet, component_checksums

log = logging.getLogger(__name__)

STAGE_NAMES = ("detection", "classification", "segmentation")
# components each stage's loss can reach
STAGE_REACH = {
    "detection": {"backbone", "detection_head"},
    "classification": {"backbone", "classification_head"},
    "segmentation": {"unet"},
}
STAGE_RULES = {
    "detection": ("bleeding_only", "mse"),
    "classification": ("all", "bce"),
    "segmentation": ("all", "focal_tversky"),
}


class TrainingError(RuntimeError):
    def __init__(self, message, partial_report=None):
        super().__init__(message)
        self.partial_report = partial_report


@dataclass
class StageSpec:
    name: str
    epochs: int
    sample_filter: str
    frozen_params: frozenset
    loss: str

    def __post_init__(self):
        if self.name not in STAGE_RULES:
            raise ValueError(f"unknown stage {self.name!r}; expected one of {STAGE_NAMES}")
        self.frozen_params = frozenset(self.frozen_params)
        unknown = self.frozen_params - set(COMPONENTS)
        if unknown:
            raise ValueError(f"unknown components in frozen set: {sorted(unknown)}")
        want_filter, want_loss = STAGE_RULES[self.name]
        if (self.sample_filter, self.loss) != (want_filter, want_loss):
            raise ValueError(
                f"{self.name} stage must use filter={want_filter!r} and loss={want_loss!r}"
            )
        if self.name == "classification" and not {"backbone", "detection_head"} <= self.frozen_params:
            raise ValueError("classification stage must freeze backbone and detection_head")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")

    @property
    def trainable(self) -> set:
        return STAGE_REACH[self.name] - self.frozen_params


@dataclass
class OptimizerConfig:
    method: str = "adam"
    learning_rate: float = 1e-4
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.method not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def default_stages(detection_epochs=10, classification_epochs=20, segmentation_epochs=40,
                   train_backbone_in_detection=True) -> list[StageSpec]:
    det_frozen = {"classification_head", "unet"}
    if not train_backbone_in_detection:
        det_frozen.add("backbone")
    return [
        StageSpec("detection", detection_epochs, "bleeding_only", det_frozen, "mse"),
        StageSpec("classification", classification_epochs, "all",
                  {"backbone", "detection_head", "unet"}, "bce"),
        StageSpec("segmentation", segmentation_epochs, "all",
                  {"backbone", "classification_head", "detection_head"}, "focal_tversky"),
    ]


@dataclass
class TrainingSchedule:
    stages: list = field(default_factory=default_stages)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    focal_tversky: FocalTverskyConfig = field(default_factory=FocalTverskyConfig)
    train_fraction: float = 0.8
    validate_every_epoch: bool = False
    deterministic: bool = True

    def stage(self, name: str) -> StageSpec:
        for s in self.stages:
            if s.name == name:
                return s
        raise KeyError(f"schedule has no {name!r} stage")

    @property
    def seed(self) -> int:
        return self.optimizer.seed


@dataclass
class StageReport:
    name: str
    epochs: int
    n_samples: int
    losses: list = field(default_factory=list)
    seen_ids: set = field(default_factory=set)
    seen_labels: set = field(default_factory=set)
    checksums_before: dict = field(default_factory=dict)
    checksums_after: dict = field(default_factory=dict)
    val_metrics: Optional[dict] = None
    epoch_val_metrics: list = field(default_factory=list)
    seconds: float = 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seen_ids"] = len(self.seen_ids)
        d["seen_labels"] = sorted(self.seen_labels)
        return d


@dataclass
class TrainingReport:
    seed: int
    n_train: int = 0
    n_val: int = 0
    stages: list = field(default_factory=list)
    final_metrics: Optional[dict] = None

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "n_train": self.n_train,
            "n_val": self.n_val,
            "stage_order": [s.name for s in self.stages],
            "epochs": {s.name: s.epochs for s in self.stages},
            "stages": [s.to_dict() for s in self.stages],
            "final_metrics": self.final_metrics,
        }


# --------------------------------------------------------------------------
# Data plumbing

class StageDataset(Dataset):
    """Augmented view of a sample list; augmentation is seeded per (epoch, index)."""

    def __init__(self, samples: Sequence[ImageSample], aug: AugmentationConfig, seed: int,
                 default_empty_mask: bool = False):
        self.samples = list(samples)
        self.aug = aug
        self.seed = seed
        self.epoch = 0
        self.default_empty_mask = default_empty_mask

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def __len__(self):
        return len(self.samples)

    def __getitem__(self, idx):
        s = self.samples[idx]
        rng = np.random.default_rng([self.seed, self.epoch, idx])
        if s.mask is None and self.default_empty_mask:
            s = ImageSample(s.id, s.image, s.label, s.bbox, np.zeros(s.size, np.uint8))
        s = augment(s, self.aug, rng)
        box = s.bbox.as_tuple() if s.bbox is not None else (0.0, 0.0, 0.0, 0.0)
        mask = s.mask if s.mask is not None else np.zeros(s.size, np.uint8)
        return {
            "index": idx,
            "image": torch.from_numpy(np.ascontiguousarray(s.image)).permute(2, 0, 1),
            "label": torch.tensor(float(s.label)),
            "bbox": torch.tensor(box, dtype=torch.float32),
            "mask": torch.from_numpy(mask.astype(np.float32))[None],
        }


def _filter_samples(samples: Sequence[ImageSample], stage: StageSpec) -> list[ImageSample]:
    if stage.name == "detection":
        return [s for s in samples if s.label == 1 and s.bbox is not None]
    if stage.name == "segmentation":
        kept = []
        for s in samples:
            if s.label == 1 and s.mask is None:
                log.warning("%s: bleeding sample without mask skipped in segmentation", s.id)
                continue
            kept.append(s)
        return kept
    return list(samples)


def _stage_seed(seed: int, stage_name: str) -> int:
    return seed * 1000 + STAGE_NAMES.index(stage_name)


def _set_modes(model: ColonNet, trainable: set):
    for name in COMPONENTS:
        comp = model.component(name)
        on = name in trainable
        comp.train(on)
        for p in comp.parameters():
            p.requires_grad_(on)


def _restore_grad(model: ColonNet):
    for p in model.parameters():
        p.requires_grad_(True)


def _make_optimizer(params, cfg: OptimizerConfig):
    if cfg.method == "adam":
        return torch.optim.Adam(params, lr=cfg.learning_rate)
    return torch.optim.SGD(params, lr=cfg.learning_rate, momentum=0.9)


def _stage_loss(model: ColonNet, stage: StageSpec, batch, ft_cfg: FocalTverskyConfig):
    x = batch["image"]
    if stage.name == "detection":
        feats = model.backbone(x)
        return mse_loss(model.heads.detection(feats), batch["bbox"])
    if stage.name == "classification":
        if "backbone" in stage.frozen_params:
            with torch.no_grad():
                feats = model.backbone(x)
        else:
            feats = model.backbone(x)
        return bce_loss(model.heads.classification(feats), batch["label"], from_logits=True)
    probs = model.unet(x)
    return focal_tversky_loss(probs, batch["mask"], ft_cfg, batched=True)


def _run_stage(model: ColonNet, samples: Sequence[ImageSample], schedule: TrainingSchedule,
               stage: StageSpec, val_samples=None,
               on_batch: Optional[Callable[[str, list[ImageSample]], None]] = None) -> StageReport:
    t0 = time.perf_counter()
    selected = _filter_samples(samples, stage)
    if not selected:
        if stage.name == "detection":
            raise TrainingError("detection stage needs at least one bleeding sample with a box")
        raise TrainingError(f"{stage.name} stage has no usable samples")

    opt_cfg = schedule.optimizer
    seed = _stage_seed(opt_cfg.seed, stage.name)
    torch.manual_seed(seed)
    if schedule.deterministic:
        torch.use_deterministic_algorithms(True)

    report = StageReport(stage.name, stage.epochs, len(selected))
    report.checksums_before = component_checksums(model)

    data = StageDataset(selected, schedule.augmentation, seed,
                        default_empty_mask=stage.name == "segmentation")
    loader = DataLoader(data, batch_size=opt_cfg.batch_size, shuffle=True,
                        generator=torch.Generator().manual_seed(seed), num_workers=0)

    trainable = stage.trainable
    _set_modes(model, trainable)
    params = [p for name in sorted(trainable) for p in model.component(name).parameters()]
    optimizer = _make_optimizer(params, opt_cfg) if params else None
    try:
        for epoch in range(stage.epochs):
            data.set_epoch(epoch)
            total, count = 0.0, 0
            for batch in loader:
                idx = batch["index"].tolist()
                batch_samples = [selected[i] for i in idx]
                report.seen_ids.update(s.id for s in batch_samples)
                report.seen_labels.update(s.label for s in batch_samples)
                if on_batch is not None:
                    on_batch(stage.name, batch_samples)
                loss = _stage_loss(model, stage, batch, schedule.focal_tversky)
                if optimizer is not None:
                    optimizer.zero_grad(set_to_none=True)
                    loss.backward()
                    optimizer.step()
                n = len(idx)
                total += float(loss.detach()) * n
                count += n
            report.losses.append(total / count)
            log.info("%s epoch %d/%d loss %.5f", stage.name, epoch + 1, stage.epochs, report.losses[-1])
            if schedule.validate_every_epoch and val_samples:
                report.epoch_val_metrics.append(evaluate(model, val_samples).to_dict())
                _set_modes(model, trainable)
    finally:
        model.zero_grad(set_to_none=True)
        model.eval()
        _restore_grad(model)

    report.checksums_after = component_checksums(model)
    if stage.epochs > 0 and stage.name not in model.trained_stages:
        model.trained_stages.append(stage.name)
    if val_samples:
        report.val_metrics = evaluate(model, val_samples).to_dict()
    report.seconds = time.perf_counter() - t0
    return report


def train_detection_stage(model, train_samples, schedule, val_samples=None, on_batch=None) -> StageReport:
    return _run_stage(model, train_samples, schedule, schedule.stage("detection"), val_samples, on_batch)


def train_classification_stage(model, train_samples, schedule, val_samples=None, on_batch=None) -> StageReport:
    return _run_stage(model, train_samples, schedule, schedule.stage("classification"), val_samples, on_batch)


def train_segmentation_stage(model, train_samples, schedule, val_samples=None, on_batch=None) -> StageReport:
    return _run_stage(model, train_samples, schedule, schedule.stage("segmentation"), val_samples, on_batch)


def smoothed(values: Sequence[float], window: int = 3) -> np.ndarray:
    """Trailing moving average; the first entries average what is available."""
    v = np.asarray(values, dtype=np.float64)
    c = np.cumsum(np.insert(v, 0, 0.0))
    out = np.empty_like(v)
    for i in range(len(v)):
        lo = max(0, i + 1 - window)
        out[i] = (c[i + 1] - c[lo]) / (i + 1 - lo)
    return out


def run_full_schedule(model: ColonNet, samples: Sequence[ImageSample], schedule: TrainingSchedule,
                      on_batch=None):
    """Split, then train every stage in order.

    Returns ``(report, val_samples)``.  On failure a ``TrainingError`` carries
    the stages completed so far in ``partial_report``.
    """
    if schedule.augmentation.target_size != model.input_size:
        raise ValueError(
            f"augmentation target_size {schedule.augmentation.target_size} "
            f"!= model input size {model.input_size}"
        )
    train, val = split_dataset(samples, schedule.train_fraction, schedule.seed)
    train = [resize(s, model.input_size) for s in train]
    val = [resize(s, model.input_size) for s in val]
    report = TrainingReport(seed=schedule.seed, n_train=len(train), n_val=len(val))
    try:
        for stage in schedule.stages:
            report.stages.append(_run_stage(model, train, schedule, stage, val, on_batch))
    except Exception as exc:
        raise TrainingError(f"{exc}", partial_report=report) from exc
    report.final_metrics = evaluate(model, val).to_dict()
    return report, val
