"""Training objective: BCE matching, GIoU box loss, DFL, grid cross-entropy, balance term."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractViolation, NumericalFailure
from .numerics import F, Tensor

COMPONENTS = ("cls", "box", "dfl", "region", "lb")


@dataclass(frozen=True)
class LossWeights:
    region: float = 1.0
    box: float = 7.5
    cls: float = 0.5
    dfl: float = 1.5
    lb: float = 1.5

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ContractViolation(f"loss weight {k}={v} is negative")


@dataclass
class LossReport:
    components: dict[str, float]
    total: float
    routing: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {**{f"loss_{k}": v for k, v in self.components.items()}, "loss_total": self.total, **self.routing}


def cls_loss(logits, targets: np.ndarray, pos_weights: np.ndarray | None = None) -> Tensor:
    """Mean BCE over all cells; positive cells weighted by ``pos_weights`` (negatives by 1)."""
    logits = F.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != logits.shape:
        raise ContractViolation(f"target shape {targets.shape} != logit shape {logits.shape}")
    if not np.all((targets == 0) | (targets == 1)):
        raise ContractViolation("classification targets must be 0 or 1")
    w = np.ones_like(targets)
    if pos_weights is not None:
        w = np.where(targets == 1, pos_weights, 1.0)
    return F.bce_with_logits(logits, targets, w).mean()


def box_iou_giou(pred: Tensor, gt: np.ndarray) -> tuple[Tensor, Tensor]:
    """IoU and GIoU between n predicted boxes (Tensor n×4) and gt boxes (n×4 or 4)."""
    gt = np.broadcast_to(np.asarray(gt, dtype=np.float64), pred.shape)
    px0, py0, px1, py1 = (pred[:, i] for i in range(4))
    gx0, gy0, gx1, gy1 = (gt[:, i] for i in range(4))
    iw = F.relu(F.minimum(px1, gx1) - F.maximum(px0, gx0))
    ih = F.relu(F.minimum(py1, gy1) - F.maximum(py0, gy0))
    inter = iw * ih
    area_p = F.relu(px1 - px0) * F.relu(py1 - py0)
    area_g = (gx1 - gx0) * (gy1 - gy0)
    union = area_p + area_g - inter
    iou = inter / (union + 1e-9)
    cw = F.maximum(px1, gx1) - F.minimum(px0, gx0)
    ch = F.maximum(py1, gy1) - F.minimum(py0, gy0)
    hull = cw * ch + 1e-9
    giou = iou - (hull - union) / hull
    return iou, giou


def box_loss(pred, gt) -> Tensor:
    """Mean of (1 - GIoU) over the positive set; ``pred`` is n×4, ``gt`` 4 or n×4."""
    pred = F.as_tensor(pred)
    if pred.shape[0] == 0:
        raise ContractViolation("box_loss needs at least one positive")
    _, giou = box_iou_giou(pred, gt)
    return (1.0 - giou).mean()


def dfl_loss(logits, targets: np.ndarray) -> Tensor:
    """Distribution focal loss; ``logits`` is n×4×(R+1), ``targets`` n×4 in [0, R]."""
    logits = F.as_tensor(logits)
    targets = np.asarray(targets, dtype=np.float64)
    R = logits.shape[-1] - 1
    if np.any(targets < 0) or np.any(targets > R):
        raise ContractViolation(f"DFL targets must lie in [0, {R}]")
    logp = F.log_softmax(logits, axis=-1)
    left = np.floor(targets).astype(int)
    right = np.minimum(left + 1, R)
    w_right = targets - left  # 0 for integer targets, leaving the single -log p_y term
    w_left = 1.0 - w_right
    flat = logp.reshape(-1, R + 1)
    rows = np.arange(flat.shape[0])
    lp_left = flat[rows, left.reshape(-1)]
    lp_right = flat[rows, right.reshape(-1)]
    per = -(lp_left * w_left.reshape(-1) + lp_right * w_right.reshape(-1))
    return per.mean()


def region_loss(logits, labels: np.ndarray) -> Tensor:
    """Pixel-wise cross-entropy of B×G×H×W logits against H×W (or B×H×W) grid labels."""
    logits = F.as_tensor(logits)
    B, G, H, W = logits.shape
    labels = np.broadcast_to(np.asarray(labels), (B, H, W))
    if labels.min() < 0 or labels.max() >= G:
        raise ContractViolation(f"grid labels must lie in [0, {G - 1}]")
    logp = F.log_softmax(logits, axis=1)
    flat = F.transpose(logp, (0, 2, 3, 1)).reshape(-1, G)
    picked = flat[np.arange(flat.shape[0]), labels.reshape(-1)]
    return -picked.mean()


def total_loss(components: dict[str, Tensor], weights: LossWeights = LossWeights()) -> tuple[Tensor, LossReport]:
    """Weighted sum over the five components; aborts on any non-finite term."""
    total = None
    values = {}
    for name in COMPONENTS:
        term = F.as_tensor(components[name])
        v = float(term.data)
        if not math.isfinite(v):
            raise NumericalFailure(f"loss component {name!r} is not finite ({v})")
        values[name] = v
        weighted = term * getattr(weights, name)
        total = weighted if total is None else total + weighted
    return total, LossReport(values, float(total.data))
