"""Label assignment for anchor-free heads.

``center_assign`` labels a feature point positive when it falls inside a
ground-truth box. Boxes smaller than the stride can slip between lattice
points and end up with no positive at all. ``aspb_assign`` fixes this by
swapping tiny boxes for ``p x p`` pseudo-boxes (``p = pseudo_factor *
stride``) during the spatial test only, at every pyramid level. Regression
targets are always taken against the original box.

``simplegrid_assign`` is a coarse grid scheme: a patch is positive when it
holds a target centroid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .codec import encode_points
from .core import BBox, GtTarget, boxes_to_array, feature_lattice, lattice_shape

NEGATIVE = -1


@dataclass(frozen=True)
class LevelSpec:
    stride: float
    pseudo_factor: float = 1.5

    def __post_init__(self):
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.pseudo_factor < 1:
            raise ValueError(f"pseudo_factor must be >= 1, got {self.pseudo_factor}")

    @property
    def pseudo_size(self) -> float:
        return self.pseudo_factor * self.stride


@dataclass(frozen=True)
class AssignmentResult:
    """Labels and regression targets of one level, on an ``(ny, nx)`` grid.

    labels : target index per point, ``NEGATIVE`` (-1) for background.
    targets : ``(ny, nx, 4)`` stride-normalized ``(l, t, r, b)`` distances to
        the original GT box; zero at negatives.
    gt_boxes : ``(ny, nx, 4)`` original GT corners per point; zero at negatives.
    """

    stride: float
    labels: np.ndarray
    targets: np.ndarray
    gt_boxes: np.ndarray

    @property
    def shape(self) -> Tuple[int, int]:
        return self.labels.shape

    @property
    def positive_mask(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def num_pos(self) -> int:
        return int(np.count_nonzero(self.labels >= 0))

    @property
    def num_neg(self) -> int:
        return int(self.labels.size - self.num_pos)


def pseudo_box(gt: BBox, level: LevelSpec) -> BBox:
    """Keep ``gt`` if its area exceeds ``p**2``, else a ``p x p`` box with the
    same center. ``hw == p**2`` is replaced."""
    p = level.pseudo_size
    if gt.width * gt.height > p * p:
        return gt
    cx, cy = gt.center
    return BBox.from_center(cx, cy, p, p)


def _assign_boxes(
    spatial: np.ndarray,
    original: np.ndarray,
    priority: np.ndarray,
    stride: float,
    img_h: int,
    img_w: int,
) -> AssignmentResult:
    ny, nx = lattice_shape(stride, img_h, img_w)
    pts = feature_lattice(stride, img_h, img_w)
    grid = np.full((ny, nx), NEGATIVE, dtype=np.int64)
    if len(spatial):
        # each box covers a block of lattice rows/columns; searchsorted on the
        # exact point coordinates gives the half-open membership
        xs = pts[:nx, 0]
        ys = pts[::nx, 1]
        c0 = np.searchsorted(xs, spatial[:, 0], side="left")
        c1 = np.searchsorted(xs, spatial[:, 2], side="left")
        r0 = np.searchsorted(ys, spatial[:, 1], side="left")
        r1 = np.searchsorted(ys, spatial[:, 3], side="left")
        # paint lowest priority first so the winner (smallest area, then
        # lowest index) is written last
        rank = np.lexsort((np.arange(len(spatial)), priority))
        for k in rank[::-1]:
            grid[r0[k]: r1[k], c0[k]: c1[k]] = k
    labels = grid.ravel()
    targets = np.zeros((ny * nx, 4))
    gt_boxes = np.zeros((ny * nx, 4))
    pos = labels >= 0
    if pos.any():
        gt_boxes[pos] = original[labels[pos]]
        targets[pos] = encode_points(pts[pos], gt_boxes[pos], stride)
    return AssignmentResult(
        stride=float(stride),
        labels=labels.reshape(ny, nx),
        targets=targets.reshape(ny, nx, 4),
        gt_boxes=gt_boxes.reshape(ny, nx, 4),
    )


def _boxes(gts: Sequence) -> List[BBox]:
    return [g.box if isinstance(g, GtTarget) else g for g in gts]


def center_assign(gts: Sequence, level: LevelSpec, img_h: int, img_w: int) -> AssignmentResult:
    """A lattice point is positive for a GT when it lies inside the GT box
    (half-open). Overlaps go to the smaller box, then the lower index."""
    boxes = boxes_to_array(_boxes(gts))
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    return _assign_boxes(boxes, boxes, areas, level.stride, img_h, img_w)


def aspb_assign(gts: Sequence, levels: Sequence[LevelSpec], img_h: int, img_w: int) -> List[AssignmentResult]:
    """All-scale pseudo-box assignment: every GT is labelled on every level.

    Conflict priority uses the original GT area, so the smaller real target
    still wins when several pseudo-boxes cover one point.
    """
    if not levels:
        raise ValueError("at least one level is required")
    originals = _boxes(gts)
    boxes = boxes_to_array(originals)
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    out = []
    for lv in levels:
        spatial = boxes_to_array([pseudo_box(b, lv) for b in originals])
        out.append(_assign_boxes(spatial, boxes, areas, lv.stride, img_h, img_w))
    return out


def simplegrid_assign(gts: Sequence[GtTarget], patch: int, img_h: int, img_w: int) -> AssignmentResult:
    """Patch ``(i, j)`` covers ``[j*patch, (j+1)*patch) x [i*patch, (i+1)*patch)``
    and is positive when a target centroid falls in it (lowest index wins)."""
    if patch < 1:
        raise ValueError(f"patch must be >= 1, got {patch}")
    ny, nx = lattice_shape(patch, img_h, img_w)
    labels = np.full((ny, nx), NEGATIVE, dtype=np.int64)
    for k in reversed(range(len(gts))):
        cx, cy = gts[k].centroid
        i, j = int(np.floor(cy / patch)), int(np.floor(cx / patch))
        if 0 <= i < ny and 0 <= j < nx:
            labels[i, j] = k
    targets = np.zeros((ny, nx, 4))
    gt_boxes = np.zeros((ny, nx, 4))
    pos = labels >= 0
    if pos.any():
        pts = feature_lattice(patch, img_h, img_w).reshape(ny, nx, 2)
        boxes = boxes_to_array([g.box for g in gts])
        gt_boxes[pos] = boxes[labels[pos]]
        targets[pos] = encode_points(pts[pos], gt_boxes[pos], patch)
    return AssignmentResult(stride=float(patch), labels=labels, targets=targets, gt_boxes=gt_boxes)


def coverage_stats(gts: Sequence, results) -> Dict[str, int]:
    """Count targets left without any positive point across ``results``."""
    if isinstance(results, AssignmentResult):
        results = [results]
    covered = set()
    pos = neg = 0
    for res in results:
        lab = res.labels
        covered.update(int(v) for v in np.unique(lab[lab >= 0]))
        pos += res.num_pos
        neg += res.num_neg
    return {
        "targets_total": len(gts),
        "targets_with_zero_positives": sum(1 for k in range(len(gts)) if k not in covered),
        "positives_total": pos,
        "negatives_total": neg,
    }
