"""Normalized-contrast (NoCo) maps.

For every annotated target the box is grown into a surrounding region, the
local contrast ``C = R - min(R)`` is weighted by a Gaussian centered on the
target centroid, and the product is min-max normalized to [0, 1]. Pixels
outside every region are 0. The per-image map is then used as a lookup
table: the value under a predicted box center rates its centroid accuracy.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence, Tuple

import numpy as np

from .core import BBox, GtTarget, ImageLike, as_array

RAW_HEADER = struct.Struct("<II")


class NoCoError(ValueError):
    pass


@dataclass(frozen=True)
class NoCoConfig:
    """Parameters of the region extension and the central Gaussian.

    gamma : target/border ratio, ``h_t = gamma * h_b``; in (0, 1].
    sigma_scale : Gaussian sigma as a fraction of the region half-extent.
    min_border : lower bound on the border in pixels.
    """

    gamma: float = 1.0
    sigma_scale: float = 0.5
    min_border: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0):
            raise ValueError(f"gamma must be in (0, 1], got {self.gamma}")
        if not (self.sigma_scale > 0.0):
            raise ValueError(f"sigma_scale must be > 0, got {self.sigma_scale}")
        if not (self.min_border >= 1.0):
            raise ValueError(f"min_border must be >= 1, got {self.min_border}")

    def to_dict(self) -> dict:
        return {"gamma": self.gamma, "sigma_scale": self.sigma_scale, "min_border": self.min_border}


@dataclass(frozen=True)
class TargetPatch:
    """NoCo values of one target over the pixels of its (clipped) region."""

    row0: int
    col0: int
    values: np.ndarray
    region: BBox

    @property
    def rows(self) -> slice:
        return slice(self.row0, self.row0 + self.values.shape[0])

    @property
    def cols(self) -> slice:
        return slice(self.col0, self.col0 + self.values.shape[1])


@dataclass(frozen=True)
class NoCoMap:
    """Per-image NoCo raster plus the index of the target owning each pixel.

    ``owner`` is -1 outside every extended region.
    """

    values: np.ndarray
    owner: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def _unclipped_region(target: GtTarget, cfg: NoCoConfig) -> BBox:
    box = target.box
    h_t, w_t = box.height, box.width
    h_b = max(h_t / cfg.gamma, cfg.min_border)
    w_b = max(w_t / cfg.gamma, cfg.min_border)
    cx, cy = box.center
    return BBox.from_center(cx, cy, w_t + 2.0 * w_b, h_t + 2.0 * h_b)


def extend_region(target: GtTarget, cfg: NoCoConfig, img_h: int, img_w: int) -> BBox:
    """Grow the target box by ``h_b = max(h_t / gamma, min_border)`` (and the
    same along x) on every side, clipped to the image."""
    box = target.box
    if box.area <= 0:
        raise NoCoError(f"target box {box.as_tuple()} has zero area")
    if box.x1 <= 0 or box.y1 <= 0 or box.x0 >= img_w or box.y0 >= img_h:
        raise NoCoError(f"target outside image: box {box.as_tuple()} vs image {img_w}x{img_h}")
    r = _unclipped_region(target, cfg)
    return BBox(max(r.x0, 0.0), max(r.y0, 0.0), min(r.x1, float(img_w)), min(r.y1, float(img_h)))


def _pixel_span(lo: float, hi: float, n: int) -> Tuple[int, int]:
    """Indices ``[a, b)`` of the pixels overlapping the interval ``[lo, hi)``."""
    a = max(int(math.floor(lo)), 0)
    b = min(int(math.ceil(hi)), n)
    return a, max(b, a + 1)


def min_max_normalize(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if not hi > lo:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def target_noco(img: ImageLike, target: GtTarget, cfg: NoCoConfig = NoCoConfig()) -> TargetPatch:
    data = as_array(img)
    h, w = data.shape
    region = extend_region(target, cfg, h, w)
    r0, r1 = _pixel_span(region.y0, region.y1, h)
    c0, c1 = _pixel_span(region.x0, region.x1, w)
    patch = data[r0:r1, c0:c1]
    contrast = patch - patch.min()

    # Gaussian built on the clipped support; sigma and center come from the
    # unclipped region so clipping only trims the window.
    full = _unclipped_region(target, cfg)
    sx = cfg.sigma_scale * full.width / 2.0
    sy = cfg.sigma_scale * full.height / 2.0
    cx, cy = target.centroid
    xs = np.arange(c0, c1) + 0.5
    ys = np.arange(r0, r1) + 0.5
    gauss = np.exp(-0.5 * ((ys[:, None] - cy) / sy) ** 2) * np.exp(-0.5 * ((xs[None, :] - cx) / sx) ** 2)

    values = min_max_normalize(contrast * gauss)
    values.flags.writeable = False
    return TargetPatch(row0=r0, col0=c0, values=values, region=region)


def image_noco_map(img: ImageLike, targets: Sequence[GtTarget], cfg: NoCoConfig = NoCoConfig()) -> NoCoMap:
    """Pointwise maximum of all target patches; ties in ownership go to the
    lowest target index."""
    data = as_array(img)
    values = np.zeros(data.shape, dtype=np.float64)
    owner = np.full(data.shape, -1, dtype=np.int64)
    for i, t in enumerate(targets):
        try:
            p = target_noco(data, t, cfg)
        except NoCoError as exc:
            raise NoCoError(f"target {i}: {exc}") from exc
        cur = values[p.rows, p.cols]
        own = owner[p.rows, p.cols]
        take = (own < 0) | (p.values > cur)
        cur[take] = p.values[take]
        own[take] = i
    values.flags.writeable = False
    owner.flags.writeable = False
    return NoCoMap(values=values, owner=owner)


def pixel_index(x: float, y: float) -> Tuple[int, int]:
    """``(row, col)`` of the pixel whose center is nearest to ``(x, y)``.

    Pixel centers sit at half-integers, so this is the containing pixel;
    points on a shared edge go to the pixel with the larger index.
    """
    return int(math.floor(y)), int(math.floor(x))


def noco_lookup(nmap: NoCoMap, point: Tuple[float, float]) -> float:
    x, y = point
    if not (math.isfinite(x) and math.isfinite(y)):
        return 0.0
    r, c = pixel_index(x, y)
    if 0 <= r < nmap.height and 0 <= c < nmap.width:
        return float(nmap.values[r, c])
    return 0.0


def noco_owner(nmap: NoCoMap, point: Tuple[float, float]) -> int:
    x, y = point
    if not (math.isfinite(x) and math.isfinite(y)):
        return -1
    r, c = pixel_index(x, y)
    if 0 <= r < nmap.height and 0 <= c < nmap.width:
        return int(nmap.owner[r, c])
    return -1


# -- export -----------------------------------------------------------------

def noco_to_bytes(values: np.ndarray) -> bytes:
    """8-byte little-endian ``(height, width)`` header then float32 values."""
    h, w = values.shape
    return RAW_HEADER.pack(h, w) + np.ascontiguousarray(values, dtype="<f4").tobytes()


def noco_from_bytes(buf: bytes) -> np.ndarray:
    if len(buf) < RAW_HEADER.size:
        raise ValueError("truncated NoCo raster header")
    h, w = RAW_HEADER.unpack_from(buf)
    body = buf[RAW_HEADER.size:]
    if len(body) != 4 * h * w:
        raise ValueError(f"NoCo raster body has {len(body)} bytes, expected {4 * h * w}")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def write_noco_raw(path, values: np.ndarray) -> None:
    Path(path).write_bytes(noco_to_bytes(values))


def read_noco_raw(path) -> np.ndarray:
    return noco_from_bytes(Path(path).read_bytes())


def write_noco_pgm(path, values: np.ndarray) -> None:
    q = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    h, w = q.shape
    Path(path).write_bytes(b"P5\n%d %d\n255\n" % (w, h) + q.tobytes())
