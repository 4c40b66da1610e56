"""Training objectives for the three branches.

Each loss is a plain torch function (autograd-compatible) paired with a
closed-form gradient with respect to its prediction argument, so the
derivative can be checked against finite differences independently of
autograd.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

BCE_EPS = 1e-7


@dataclass
class FocalTverskyConfig:
    alpha: float = 0.7  # false-negative weight
    beta: float = 0.3  # false-positive weight
    gamma: float = 4.0 / 3.0
    epsilon: float = 1e-6

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "epsilon"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")


def mse_loss(pred_bbox: torch.Tensor, true_bbox: torch.Tensor) -> torch.Tensor:
    """Mean squared coordinate error over every element."""
    return ((pred_bbox - true_bbox) ** 2).mean()


def mse_grad(pred_bbox: torch.Tensor, true_bbox: torch.Tensor) -> torch.Tensor:
    return 2.0 * (pred_bbox - true_bbox) / pred_bbox.numel()


def bce_loss(pred: torch.Tensor, target: torch.Tensor, from_logits: bool = False) -> torch.Tensor:
    """Mean binary cross-entropy.

    Probabilities are clipped to [1e-7, 1 - 1e-7].  With ``from_logits`` the
    sigmoid is fused into the log terms; the trainer uses that form.
    """
    target = target.to(pred.dtype)
    if from_logits:
        return F.binary_cross_entropy_with_logits(pred, target)
    p = pred.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(target * torch.log(p) + (1.0 - target) * torch.log1p(-p)).mean()


def bce_grad(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """d(bce)/d(prob); zero where the clip is active."""
    target = target.to(pred.dtype)
    inside = (pred > BCE_EPS) & (pred < 1.0 - BCE_EPS)
    g = (-target / pred + (1.0 - target) / (1.0 - pred)) / pred.numel()
    return torch.where(inside, g, torch.zeros_like(g))


def _tversky_terms(pred, true, cfg: FocalTverskyConfig, dims):
    tp = (pred * true).sum(dim=dims)
    fn = ((1.0 - pred) * true).sum(dim=dims)
    fp = (pred * (1.0 - true)).sum(dim=dims)
    num = tp + cfg.epsilon
    den = tp + cfg.alpha * fn + cfg.beta * fp + cfg.epsilon
    return num, den


def tversky_index(pred, true, config: FocalTverskyConfig | None = None):
    cfg = config or FocalTverskyConfig()
    num, den = _tversky_terms(pred, true.to(pred.dtype), cfg, tuple(range(pred.ndim)))
    return num / den


def focal_tversky_loss(
    pred_mask: torch.Tensor,
    true_mask: torch.Tensor,
    config: FocalTverskyConfig | None = None,
    batched: bool = False,
) -> torch.Tensor:
    """(1 - Tversky index) ** gamma on soft counts.

    With ``batched`` the leading dimension indexes images; the loss is
    computed per image and averaged.
    """
    cfg = config or FocalTverskyConfig()
    if pred_mask.shape != true_mask.shape:
        raise ValueError(f"shape mismatch: {tuple(pred_mask.shape)} vs {tuple(true_mask.shape)}")
    true = true_mask.to(pred_mask.dtype)
    dims = tuple(range(1 if batched else 0, pred_mask.ndim))
    num, den = _tversky_terms(pred_mask, true, cfg, dims)
    loss = (1.0 - num / den).clamp_min(0.0) ** cfg.gamma
    return loss.mean() if batched else loss


def focal_tversky_grad(pred_mask: torch.Tensor, true_mask: torch.Tensor,
                       config: FocalTverskyConfig | None = None) -> torch.Tensor:
    """Closed-form d(loss)/d(pred) for a single image."""
    cfg = config or FocalTverskyConfig()
    y = true_mask.to(pred_mask.dtype)
    num, den = _tversky_terms(pred_mask, y, cfg, tuple(range(pred_mask.ndim)))
    ti = num / den
    d_num = y
    d_den = y * (1.0 - cfg.alpha) + cfg.beta * (1.0 - y)
    d_ti = (d_num * den - num * d_den) / den ** 2
    return -cfg.gamma * (1.0 - ti).clamp_min(0.0) ** (cfg.gamma - 1.0) * d_ti
