"""Classification, detection and segmentation metrics."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np

from .dataset import BoundingBox, ImageSample, resize


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @classmethod
    def from_labels(cls, preds, truths) -> "ConfusionCounts":
        p = np.asarray(preds).astype(bool).reshape(-1)
        t = np.asarray(truths).astype(bool).reshape(-1)
        if p.shape != t.shape:
            raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
        return cls(
            tp=int(np.sum(p & t)),
            fp=int(np.sum(p & ~t)),
            tn=int(np.sum(~p & ~t)),
            fn=int(np.sum(~p & t)),
        )


def metrics_from_counts(c: ConfusionCounts) -> dict[str, float]:
    accuracy = (c.tp + c.tn) / c.total
    recall = c.tp / (c.tp + c.fn) if c.tp + c.fn else 0.0
    precision = c.tp / (c.tp + c.fp) if c.tp + c.fp else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {"accuracy": accuracy, "recall": recall, "f1": f1}


def classification_metrics(preds: Sequence[int], truths: Sequence[int]) -> dict[str, float]:
    if len(preds) != len(truths):
        raise ValueError(f"length mismatch: {len(preds)} predictions vs {len(truths)} truths")
    if not len(preds):
        raise ValueError("no predictions to score")
    return metrics_from_counts(ConfusionCounts.from_labels(preds, truths))


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (
        (a.x_max - a.x_min) * (a.y_max - a.y_min)
        + (b.x_max - b.x_min) * (b.y_max - b.y_min)
        - inter
    )
    return inter / union


def average_precision(pred_boxes, true_boxes, iou_threshold: float = 0.5) -> float:
    """Hit rate: fraction of images whose single predicted box reaches the IoU threshold.

    With one unranked box per image the precision-recall curve collapses to
    a single point, so this is what "average precision" reduces to.
    """
    if len(pred_boxes) != len(true_boxes):
        raise ValueError(f"length mismatch: {len(pred_boxes)} vs {len(true_boxes)}")
    if not pred_boxes:
        raise ValueError("no boxes to score")
    hits = sum(int(box_iou(p, t) >= iou_threshold) for p, t in zip(pred_boxes, true_boxes))
    return hits / len(pred_boxes)


def _check_masks(pred_mask, true_mask):
    p = np.asarray(pred_mask).astype(bool)
    t = np.asarray(true_mask).astype(bool)
    if p.shape != t.shape:
        raise ValueError(f"mask shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def dice_coefficient(pred_mask, true_mask) -> float:
    p, t = _check_masks(pred_mask, true_mask)
    denom = int(p.sum()) + int(t.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int((p & t).sum()) / denom


def mask_iou(pred_mask, true_mask) -> float:
    p, t = _check_masks(pred_mask, true_mask)
    union = int((p | t).sum())
    if union == 0:
        return 1.0
    return int((p & t).sum()) / union


@dataclass
class MetricsReport:
    accuracy: float
    recall: float
    f1: float
    avg_precision: Optional[float]
    mean_box_iou: Optional[float]
    dice: Optional[float]
    mask_iou: Optional[float]
    n_samples: int = 0
    n_detection: int = 0
    n_segmentation: int = 0

    def to_dict(self) -> dict:
        return {
            "classification": {"accuracy": self.accuracy, "recall": self.recall, "f1": self.f1},
            "detection": {"avg_precision": self.avg_precision, "mean_box_iou": self.mean_box_iou},
            "segmentation": {"dice": self.dice, "mask_iou": self.mask_iou},
            "counts": {
                "samples": self.n_samples,
                "detection": self.n_detection,
                "segmentation": self.n_segmentation,
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        counts = d.get("counts", {})
        return cls(
            **d["classification"], **d["detection"], **d["segmentation"],
            n_samples=counts.get("samples", 0),
            n_detection=counts.get("detection", 0),
            n_segmentation=counts.get("segmentation", 0),
        )

    def values(self) -> dict[str, Optional[float]]:
        d = asdict(self)
        return {k: d[k] for k in ("accuracy", "recall", "f1", "avg_precision",
                                  "mean_box_iou", "dice", "mask_iou")}

    def render_table(self) -> str:
        rows = [
            ("Classification", "Accuracy", self.accuracy),
            ("", "Recall", self.recall),
            ("", "F1-score", self.f1),
            ("Detection", "Avg. Precision", self.avg_precision),
            ("", "IoU Score", self.mean_box_iou),
            ("Segmentation", "Dice-Coefficient", self.dice),
            ("", "IoU Score", self.mask_iou),
        ]
        lines = [f"{'Metric':<15} {'':<17} {'Value':>8}", "-" * 42]
        for group, name, value in rows:
            if group and len(lines) > 2:
                lines.append("-" * 42)
            shown = "n/a" if value is None else f"{value:.4f}"
            lines.append(f"{group:<15} {name:<17} {shown:>8}")
        return "\n".join(lines)


def evaluate(
    model,
    samples: Sequence[ImageSample],
    cls_threshold: float = 0.5,
    mask_threshold: float = 0.5,
    iou_threshold: float = 0.5,
) -> MetricsReport:
    """Score a predictor on a split.

    ``model`` needs a ``predict(samples)`` method returning objects with
    ``bleed_prob``, ``bbox`` and ``mask_prob`` (H x W at ``model.input_size``).
    Classification is scored on every sample; detection and segmentation only
    on bleeding samples carrying the relevant annotation.
    """
    if not samples:
        raise ValueError("cannot evaluate an empty split")
    size = getattr(model, "input_size", None)
    if size is not None:
        samples = [resize(s, size) for s in samples]
    preds = model.predict(samples)

    labels = [s.label for s in samples]
    cls = classification_metrics([int(p.bleed_prob >= cls_threshold) for p in preds], labels)

    det_pairs = [(p.bbox, s.bbox) for p, s in zip(preds, samples) if s.label == 1 and s.bbox is not None]
    ap = miou = None
    if det_pairs:
        pb, tb = zip(*det_pairs)
        ap = average_precision(list(pb), list(tb), iou_threshold)
        miou = float(np.mean([box_iou(a, b) for a, b in det_pairs]))

    seg = [
        (np.asarray(p.mask_prob) >= mask_threshold, s.mask)
        for p, s in zip(preds, samples)
        if s.label == 1 and s.mask is not None
    ]
    dice = iou = None
    if seg:
        dice = float(np.mean([dice_coefficient(a, b) for a, b in seg]))
        iou = float(np.mean([mask_iou(a, b) for a, b in seg]))

    return MetricsReport(
        accuracy=cls["accuracy"], recall=cls["recall"], f1=cls["f1"],
        avg_precision=ap, mean_box_iou=miou, dice=dice, mask_iou=iou,
        n_samples=len(samples), n_detection=len(det_pairs), n_segmentation=len(seg),
    )
