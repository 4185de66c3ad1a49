"""Box regression encodings, coarse-box upsampling, score fusion and NMS.

Two encodings are provided:

* point-to-box: stride-normalized distances ``(l, t, r, b)`` from a feature
  point to the four box edges (the proposal head);
* cascade: stride-normalized corner offsets of a ground-truth box relative
  to an upsampled coarse prediction, which acts as a per-point anchor (the
  refinement head).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from .core import BBox, Detection, iou_matrix

LTRB = "ltrb"
DELTA = "delta"


@dataclass(frozen=True)
class RegressionTarget:
    values: Tuple[float, float, float, float]
    kind: str = LTRB

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) != 4 or not all(math.isfinite(v) for v in vals):
            raise ValueError(f"regression target needs 4 finite values, got {self.values}")
        if self.kind not in (LTRB, DELTA):
            raise ValueError(f"unknown regression target kind {self.kind!r}")
        object.__setattr__(self, "values", vals)

    def as_array(self) -> np.ndarray:
        return np.array(self.values)


def encode_point_box(point: Tuple[float, float], gt: BBox, stride: float) -> RegressionTarget:
    x, y = point
    s = float(stride)
    return RegressionTarget(((x - gt.x0) / s, (y - gt.y0) / s, (gt.x1 - x) / s, (gt.y1 - y) / s), LTRB)


def decode_point_box(point: Tuple[float, float], target: RegressionTarget, stride: float) -> BBox:
    x, y = point
    l, t, r, b = target.values
    s = float(stride)
    return BBox(x - l * s, y - t * s, x + r * s, y + b * s)


def encode_points(points: np.ndarray, boxes: np.ndarray, stride: float) -> np.ndarray:
    """Vectorized ``encode_point_box`` over ``(n, 2)`` points and ``(n, 4)`` boxes."""
    p = np.asarray(points, dtype=np.float64)
    b = np.asarray(boxes, dtype=np.float64)
    return np.stack(
        [p[:, 0] - b[:, 0], p[:, 1] - b[:, 1], b[:, 2] - p[:, 0], b[:, 3] - p[:, 1]], axis=1
    ) / float(stride)


def upsample_boxes(coarse: np.ndarray, fine_shape: Tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour replication of a ``(h, w, 4)`` box grid at stride
    ``2s`` onto a stride-``s`` grid of ``fine_shape``.

    Boxes are image-space corners, so values are copied unchanged.
    """
    coarse = np.asarray(coarse, dtype=np.float64)
    if coarse.ndim != 3 or coarse.shape[2] != 4:
        raise ValueError(f"coarse grid must have shape (h, w, 4), got {coarse.shape}")
    fh, fw = fine_shape
    ch, cw = coarse.shape[:2]
    if math.ceil(fh / 2) != ch or math.ceil(fw / 2) != cw:
        raise ValueError(f"fine grid {fine_shape} does not match coarse grid {(ch, cw)} at 2x")
    rows = np.arange(fh) // 2
    cols = np.arange(fw) // 2
    return coarse[rows[:, None], cols[None, :]].copy()


def cascade_encode(gt: BBox, coarse: BBox, stride: float) -> RegressionTarget:
    s = float(stride)
    return RegressionTarget(
        ((gt.x0 - coarse.x0) / s, (gt.y0 - coarse.y0) / s, (gt.x1 - coarse.x1) / s, (gt.y1 - coarse.y1) / s),
        DELTA,
    )


def cascade_decode(coarse: BBox, delta: RegressionTarget, stride: float) -> Tuple[BBox, bool]:
    """Apply corner offsets to a coarse box.

    Returns ``(box, clamped)``. An inverted axis collapses to zero width at
    its midpoint and sets ``clamped``.
    """
    s = float(stride)
    dx0, dy0, dx1, dy1 = delta.values
    x0, y0 = coarse.x0 + dx0 * s, coarse.y0 + dy0 * s
    x1, y1 = coarse.x1 + dx1 * s, coarse.y1 + dy1 * s
    clamped = False
    if x0 > x1:
        x0 = x1 = (x0 + x1) / 2.0
        clamped = True
    if y0 > y1:
        y0 = y1 = (y0 + y1) / 2.0
        clamped = True
    return BBox(x0, y0, x1, y1), clamped


def fuse_scores(cls_h: float, cls_l: float, noco_pred: float) -> float:
    """Final detection score: product of both head scores and predicted NoCo."""
    for v in (cls_h, cls_l, noco_pred):
        if not (0.0 <= v <= 1.0):
            raise ValueError(f"scores must lie in [0, 1], got {(cls_h, cls_l, noco_pred)}")
    return cls_h * cls_l * noco_pred


def nms(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """Greedy NMS; a box is dropped when IoU with a kept box exceeds the
    threshold. Ties in score keep input order."""
    if not (0.0 <= iou_thresh <= 1.0):
        raise ValueError(f"iou_thresh must be in [0, 1], got {iou_thresh}")
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, i))
    if not order:
        return []
    boxes = np.array([dets[i].box.as_tuple() for i in order])
    overlaps = iou_matrix(boxes, boxes)
    alive = np.ones(len(order), dtype=bool)
    keep = []
    for k in range(len(order)):
        if not alive[k]:
            continue
        keep.append(order[k])
        alive[k + 1:] &= overlaps[k, k + 1:] <= iou_thresh
    return [dets[i] for i in keep]
