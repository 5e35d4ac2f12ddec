"""Detection loss (objectness cross-entropy + weighted box regression) and its gradient."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .detection import AnchorSet, BBox, HeadMap, sigmoid

LOGIT_CLAMP = 30.0


@dataclass(frozen=True)
class LossConfig:
    lam: float = 1.0
    n_cls: float = 256.0
    n_reg: float = 4.0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


@dataclass(frozen=True)
class TargetMap:
    """Per-slot labels ``(H, W, A)`` and regression targets ``(H, W, A, 4)``."""

    labels: np.ndarray
    boxes: np.ndarray

    def __post_init__(self):
        if self.boxes.shape != self.labels.shape + (4,):
            raise ValueError("target boxes must be labels.shape + (4,)")
        if not np.all(np.isfinite(self.boxes[self.labels == 1])):
            raise ValueError("regression targets must be finite on positive slots")


def anchor_grid(anchors: AnchorSet, height: int, width: int, stride: float) -> np.ndarray:
    """``(H, W, A, 4)`` center-format anchor boxes placed at every cell center."""
    xs = (np.arange(width) + 0.5) * stride
    ys = (np.arange(height) + 0.5) * stride
    sizes = anchors.sizes
    grid = np.empty((height, width, len(anchors), 4))
    grid[..., 0] = xs[None, :, None]
    grid[..., 1] = ys[:, None, None]
    grid[..., 2] = sizes[None, None, :, 0]
    grid[..., 3] = sizes[None, None, :, 1]
    return grid


def _iou_with_grid(box: BBox, grid: np.ndarray) -> np.ndarray:
    x1, y1, x2, y2 = box.corners()
    gx1 = grid[..., 0] - grid[..., 2] / 2
    gy1 = grid[..., 1] - grid[..., 3] / 2
    gx2 = grid[..., 0] + grid[..., 2] / 2
    gy2 = grid[..., 1] + grid[..., 3] / 2
    iw = np.clip(np.minimum(x2, gx2) - np.maximum(x1, gx1), 0, None)
    ih = np.clip(np.minimum(y2, gy2) - np.maximum(y1, gy1), 0, None)
    inter = iw * ih
    return inter / ((x2 - x1) * (y2 - y1) + (gx2 - gx1) * (gy2 - gy1) - inter)


def assign_targets(gt: Sequence[BBox], anchors: AnchorSet, grid: tuple[int, int, float]) -> TargetMap:
    """Mark, for each ground-truth box, the one slot whose placed anchor overlaps it most.

    Ties go to the lowest ``(row, col, anchor)``. A later box claiming an
    already positive slot overwrites its regression target.
    """
    height, width, stride = grid
    boxes = anchor_grid(anchors, height, width, stride)
    labels = np.zeros((height, width, len(anchors)), dtype=np.int64)
    targets = np.zeros((height, width, len(anchors), 4))
    for b in gt:
        overlap = _iou_with_grid(b, boxes)
        r, c, k = np.unravel_index(int(np.argmax(overlap)), overlap.shape)
        xa, ya, wa, ha = boxes[r, c, k]
        labels[r, c, k] = 1
        targets[r, c, k] = ((b.cx - xa) / wa, (b.cy - ya) / ha, np.log(b.w / wa), np.log(b.h / ha))
    return TargetMap(labels, targets)


def _split(pred, target: TargetMap):
    grid = pred.grid if isinstance(pred, HeadMap) else np.asarray(pred, dtype=np.float64)
    h, w, c = grid.shape
    a = target.labels.shape[2] if target.labels.ndim == 3 else -1
    if target.labels.shape != (h, w, a) or c != 5 * a:
        raise ValueError(f"prediction {grid.shape} does not match targets {target.labels.shape}")
    slots = grid.reshape(h, w, a, 5)
    return slots[..., 0], slots[..., 1:]


def loss_terms(pred, target: TargetMap, cfg: LossConfig = LossConfig()) -> tuple[float, float]:
    """``(classification, regression)`` parts, regression not yet scaled by lambda."""
    logits, b = _split(pred, target)
    p_star = target.labels.astype(np.float64)
    z = np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)
    # log(sigmoid(z)) = -log1p(exp(-z)), stable for both signs
    log_p = -np.logaddexp(0.0, -z)
    log_1mp = -np.logaddexp(0.0, z)
    ce = -(p_star * log_p + (1.0 - p_star) * log_1mp)
    mse = np.mean((b - target.boxes) ** 2, axis=-1)
    return float(ce.sum() / cfg.n_cls), float((p_star * mse).sum() / cfg.n_reg)


def detection_loss(pred, target: TargetMap, cfg: LossConfig = LossConfig()) -> float:
    cls, reg = loss_terms(pred, target, cfg)
    return cls + cfg.lam * reg


def loss_gradient(pred, target: TargetMap, cfg: LossConfig = LossConfig()) -> np.ndarray:
    """Analytic derivative of :func:`detection_loss` w.r.t. every head channel."""
    logits, b = _split(pred, target)
    p_star = target.labels.astype(np.float64)
    h, w, a = logits.shape
    grad = np.zeros((h, w, a, 5))
    grad[..., 0] = (sigmoid(np.clip(logits, -LOGIT_CLAMP, LOGIT_CLAMP)) - p_star) / cfg.n_cls
    grad[..., 1:] = p_star[..., None] * cfg.lam * 2.0 * (b - target.boxes) / (4.0 * cfg.n_reg)
    return grad.reshape(h, w, 5 * a)
