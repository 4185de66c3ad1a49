"""Forward values of the detector training objective.

The objective sums, for the coarse (``h``) and refinement (``l``) heads,
focal classification loss over all points plus IoU loss over positive
points, each normalized by that head's positive count, and adds a
``lambda``-weighted quality focal loss on the predicted NoCo values.
No gradients are computed here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

import numpy as np

from .assign import AssignmentResult
from .core import BBox, iou

EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    qfl_beta: float = 2.0
    # weight of the NoCo term; 1e3 is a common stronger setting
    lam: float = 1.0

    def __post_init__(self):
        for name in ("focal_alpha", "focal_gamma", "qfl_beta", "lam"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {v}")


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def focal_loss(pred, label, cfg: LossConfig = LossConfig()):
    """Binary focal loss; works elementwise on arrays."""
    p = _clamp(np.asarray(pred, dtype=np.float64))
    y = np.asarray(label)
    a, g = cfg.focal_alpha, cfg.focal_gamma
    pos = -a * (1.0 - p) ** g * np.log(p)
    neg = -(1.0 - a) * p ** g * np.log1p(-p)
    out = np.where(y > 0, pos, neg)
    return float(out) if out.ndim == 0 else out


def iou_loss(pred: BBox, gt: BBox) -> float:
    return 1.0 - iou(pred, gt)


def iou_loss_array(pred: np.ndarray, gt: np.ndarray) -> np.ndarray:
    """Row-wise ``1 - IoU`` for ``(n, 4)`` corner arrays."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(pred[:, 2], gt[:, 2]) - np.maximum(pred[:, 0], gt[:, 0])
    ih = np.minimum(pred[:, 3], gt[:, 3]) - np.maximum(pred[:, 1], gt[:, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    union = (pred[:, 2] - pred[:, 0]) * (pred[:, 3] - pred[:, 1]) + (gt[:, 2] - gt[:, 0]) * (gt[:, 3] - gt[:, 1]) - inter
    ratio = np.zeros_like(inter)
    np.divide(inter, union, out=ratio, where=union > 0)
    return 1.0 - np.clip(ratio, 0.0, 1.0)


def quality_focal_loss(pred, target, cfg: LossConfig = LossConfig()):
    """``-|y - p|**beta * (y ln p + (1 - y) ln(1 - p))``, elementwise."""
    p = _clamp(np.asarray(pred, dtype=np.float64))
    y = np.asarray(target, dtype=np.float64)
    out = -np.abs(y - p) ** cfg.qfl_beta * (y * np.log(p) + (1.0 - y) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


@dataclass
class LossBreakdown:
    terms: Dict[str, float]
    total: float
    warnings: List[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms), "warnings": list(self.warnings)}


def _head_terms(name: str, cls_pred, box_pred, assignment: AssignmentResult, cfg: LossConfig, warnings):
    cls_pred = np.asarray(cls_pred, dtype=np.float64)
    box_pred = np.asarray(box_pred, dtype=np.float64)
    if cls_pred.shape != assignment.shape or box_pred.shape != assignment.shape + (4,):
        raise ValueError(
            f"head {name}: prediction grids {cls_pred.shape}/{box_pred.shape} "
            f"do not match assignment grid {assignment.shape}"
        )
    pos = assignment.positive_mask
    n_pos = int(pos.sum())
    norm = n_pos
    if n_pos == 0:
        norm = 1
        warnings.append(f"head {name}: no positive points, normalizer set to 1")
    cls = focal_loss(cls_pred, pos.astype(np.int64), cfg)
    reg = iou_loss_array(box_pred[pos], assignment.gt_boxes[pos])
    return math.fsum(np.ravel(cls)) / norm, math.fsum(reg) / norm


def total_loss(
    head_h: Tuple[Tuple[np.ndarray, np.ndarray], AssignmentResult],
    head_l: Tuple[Tuple[np.ndarray, np.ndarray], AssignmentResult],
    noco: Tuple[np.ndarray, np.ndarray],
    cfg: LossConfig = LossConfig(),
) -> LossBreakdown:
    """Evaluate the objective.

    Each head is ``((cls_scores (ny, nx), boxes (ny, nx, 4)), assignment)``
    with boxes as decoded image-space corners. ``noco`` is
    ``(predicted, target)`` on the refinement grid; its quality focal loss is
    averaged over that head's positive points before weighting.
    """
    warnings: List[str] = []
    (cls_h, box_h), asg_h = head_h
    (cls_l, box_l), asg_l = head_l
    t = {}
    t["cls_h"], t["reg_h"] = _head_terms("h", cls_h, box_h, asg_h, cfg, warnings)
    t["cls_l"], t["reg_l"] = _head_terms("l", cls_l, box_l, asg_l, cfg, warnings)

    n_pred = np.asarray(noco[0], dtype=np.float64)
    n_tgt = np.asarray(noco[1], dtype=np.float64)
    if n_pred.shape != asg_l.shape or n_tgt.shape != asg_l.shape:
        raise ValueError(f"NoCo grids {n_pred.shape}/{n_tgt.shape} do not match assignment grid {asg_l.shape}")
    pos = asg_l.positive_mask
    norm = max(int(pos.sum()), 1)
    q = quality_focal_loss(n_pred[pos], n_tgt[pos], cfg) if pos.any() else np.zeros(0)
    t["noco"] = cfg.lam * math.fsum(np.ravel(q)) / norm

    total = math.fsum(t.values())
    return LossBreakdown(terms=t, total=total, warnings=warnings)
