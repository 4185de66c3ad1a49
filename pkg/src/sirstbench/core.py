"""Geometry, rasters and annotation records shared by every module.

Coordinate convention
---------------------
Boxes are continuous rectangles ``(x0, y0, x1, y1)``. Pixel ``(r, c)``
occupies ``[c, c + 1) x [r, r + 1)``, so its center sits at
``(c + 0.5, r + 0.5)`` and an ``n x n`` pixel box spans ``n`` units.
Whether annotated boxes include their right/bottom edge is not defined by
the source data; this convention is a choice.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np

Point = Tuple[float, float]


@dataclass(frozen=True)
class GrayImage:
    """2-D grayscale raster, row-major, real valued.

    Intensities loaded from 8/16-bit files are normalized to [0, 1].
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"GrayImage needs a 2-D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("GrayImage must be at least 1x1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("GrayImage values must be finite")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.data.shape


ImageLike = Union[GrayImage, np.ndarray]


def as_array(img: ImageLike) -> np.ndarray:
    """Return the float64 pixel array behind ``img``."""
    if isinstance(img, GrayImage):
        return img.data
    return GrayImage(img).data


@dataclass(frozen=True)
class BBox:
    x0: float
    y0: float
    x1: float
    y1: float

    def __post_init__(self):
        vals = (self.x0, self.y0, self.x1, self.y1)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite box coordinates {vals}")
        if self.x0 > self.x1 or self.y0 > self.y1:
            raise ValueError(f"invalid box {vals}: need x0 <= x1 and y0 <= y1")

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BBox":
        return cls(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> Point:
        return ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.x0, self.y0, self.x1, self.y1)

    def shifted(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)

    def contains(self, x: float, y: float) -> bool:
        """Half-open membership test ``x0 <= x < x1``, ``y0 <= y < y1``."""
        return self.x0 <= x < self.x1 and self.y0 <= y < self.y1


@dataclass(frozen=True)
class GtTarget:
    """Annotated target. ``centroid`` defaults to the box center."""

    box: BBox
    centroid: Optional[Point] = None

    def __post_init__(self):
        if self.centroid is None:
            object.__setattr__(self, "centroid", self.box.center)
        else:
            x, y = (float(v) for v in self.centroid)
            b = self.box
            if not (b.x0 <= x <= b.x1 and b.y0 <= y <= b.y1):
                raise ValueError(f"centroid {(x, y)} lies outside box {b.as_tuple()}")
            object.__setattr__(self, "centroid", (x, y))


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    image_id: str = ""

    def __post_init__(self):
        s = float(self.score)
        if not math.isfinite(s) or s < 0.0 or s > 1.0:
            raise ValueError(f"detection score must be finite and in [0, 1], got {self.score}")
        object.__setattr__(self, "score", s)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two continuous rectangles.

    Returns 0 for disjoint boxes and when the union has zero area.
    """
    iw = min(a.x1, b.x1) - max(a.x0, b.x0)
    ih = min(a.y1, b.y1) - max(a.y0, b.y0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, inter / union)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between ``(n, 4)`` and ``(m, 4)`` corner arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return np.clip(out, 0.0, 1.0)


def lattice_shape(stride: float, img_h: int, img_w: int) -> Tuple[int, int]:
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return math.ceil(img_h / stride), math.ceil(img_w / stride)


def feature_lattice(stride: float, img_h: int, img_w: int) -> np.ndarray:
    """Feature-point centers of a stride-``stride`` map over an image.

    Returns an ``(ny * nx, 2)`` array of ``(x, y)`` points, row-major
    (y varies slowest). Points sit at cell centers ``(i + 0.5) * stride``.
    """
    return _lattice(float(stride), int(img_h), int(img_w))


@functools.lru_cache(maxsize=64)
def _lattice(stride: float, img_h: int, img_w: int) -> np.ndarray:
    ny, nx = lattice_shape(stride, img_h, img_w)
    xs = (np.arange(nx) + 0.5) * stride
    ys = (np.arange(ny) + 0.5) * stride
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    pts.flags.writeable = False  # shared between callers
    return pts


def boxes_to_array(boxes: Sequence[BBox]) -> np.ndarray:
    if not boxes:
        return np.zeros((0, 4))
    return np.array([b.as_tuple() for b in boxes], dtype=np.float64)
