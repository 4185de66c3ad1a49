"""Classical single-frame small-target detectors.

LCM (local contrast measure)
    For each pixel, a 3x3 arrangement of ``cell x cell`` cells is centered on
    it. With ``L`` the maximum of the center cell and ``m_i`` the mean of the
    i-th surrounding cell, ``C = min_i L**2 / m_i = L**2 / max_i m_i``.

MPCM (multiscale patch-based contrast measure)
    Per scale ``N``, cell means are taken over ``N x N`` windows,
    ``d_i = m_T - m_i`` for the 8 neighbours, and the patch contrast is
    ``min_{i=1..4} d_i * d_{i+4}`` over opposing pairs. The map is the
    maximum over scales, clamped at 0.

IPI (infrared patch-image)
    Sliding patches are stacked as columns of ``D`` and split into low-rank
    background ``B`` plus sparse target ``T`` by solving
    ``min ||B||_* + lambda ||T||_1  s.t.  D = B + T`` with the inexact
    augmented Lagrange multiplier method. ``T`` is folded back to the image.

All maps are turned into detections by ``scoremap_to_detections``: keep
pixels above ``mean + k * std`` and report every 8-connected component.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .core import BBox, Detection, ImageLike, as_array

log = logging.getLogger(__name__)

GUARD = 1e-12

# 8 neighbour offsets in cell units; entry i and i + 4 are opposite
NEIGHBOURS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))

MPCM_SCALES = (1, 3, 5, 7, 9)

# threshold factors for mean + k * std
DEFAULT_K = {"lcm": 3.0, "mpcm": 13.0, "ipi": 3.0}


def _neighbour_means(img: np.ndarray, cell: int) -> Tuple[np.ndarray, List[np.ndarray], np.ndarray]:
    """Center-cell max, the 8 neighbour-cell means and the center-cell mean.

    Borders are edge-replicated before filtering.
    """
    if cell < 1 or cell % 2 == 0:
        raise ValueError(f"cell size must be a positive odd integer, got {cell}")
    h, w = img.shape
    pad = cell + cell // 2
    padded = np.pad(img, pad, mode="edge")
    means = ndimage.uniform_filter(padded, size=cell, mode="nearest")
    maxes = ndimage.maximum_filter(padded, size=cell, mode="nearest")
    crop = lambda a, dy=0, dx=0: a[pad + dy: pad + dy + h, pad + dx: pad + dx + w]
    nbr = [crop(means, dy * cell, dx * cell) for dy, dx in NEIGHBOURS]
    return crop(maxes), nbr, crop(means)


def lcm(img: ImageLike, cell: int = 3) -> np.ndarray:
    data = as_array(img)
    center_max, nbr, _ = _neighbour_means(data, cell)
    denom = np.maximum(np.max(np.stack(nbr), axis=0), GUARD)
    return center_max ** 2 / denom


def mpcm(img: ImageLike, scales: Sequence[int] = MPCM_SCALES) -> np.ndarray:
    data = as_array(img)
    out = None
    for n in scales:
        _, nbr, center = _neighbour_means(data, n)
        d = [center - m for m in nbr]
        contrast = np.min(np.stack([d[i] * d[i + 4] for i in range(4)]), axis=0)
        out = contrast if out is None else np.maximum(out, contrast)
    return np.maximum(out, 0.0)


# -- IPI -------------------------------------------------------------------

@dataclass(frozen=True)
class IpiConfig:
    patch: int = 50
    stride: int = 20
    L: float = 2.5
    eps: float = 1e-7
    max_iters: int = 500
    mu0: Optional[float] = None  # None -> 1.25 / sigma_1(D)
    rho: float = 1.5
    fold: str = "mean"

    def __post_init__(self):
        if not (self.patch >= self.stride >= 1):
            raise ValueError(f"need patch >= stride >= 1, got patch={self.patch} stride={self.stride}")
        if not self.L > 0:
            raise ValueError("L must be > 0")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.rho <= 1:
            raise ValueError("rho must be > 1")
        if self.fold not in ("mean", "median"):
            raise ValueError(f"fold must be 'mean' or 'median', got {self.fold!r}")


@dataclass
class RpcaResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    converged: bool
    residuals: List[float] = field(default_factory=list)


@dataclass
class IpiResult:
    score_map: np.ndarray
    background: np.ndarray
    target: np.ndarray
    rpca: RpcaResult

    @property
    def converged(self) -> bool:
        return self.rpca.converged


def soft_threshold(x: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def svt(x: np.ndarray, tau: float) -> np.ndarray:
    """Singular-value thresholding: shrink every singular value by ``tau``."""
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (u[:, :k] * s[:k]) @ vt[:k]


def rpca_ialm(
    d: np.ndarray,
    lam: float,
    eps: float = 1e-7,
    max_iters: int = 500,
    mu0: Optional[float] = None,
    rho: float = 1.5,
) -> RpcaResult:
    """Robust PCA by inexact ALM.

    Stops when ``||D - B - T||_F / ||D||_F <= eps``. If ``max_iters`` is hit
    first, the iterate with the smallest residual is returned with
    ``converged=False``.
    """
    d = np.asarray(d, dtype=np.float64)
    d_norm = np.linalg.norm(d, "fro")
    if d_norm == 0:
        z = np.zeros_like(d)
        return RpcaResult(z, z.copy(), 0, True, [0.0])
    norm2 = np.linalg.norm(d, 2)
    y = d / max(norm2, np.abs(d).max() / lam)
    mu = 1.25 / norm2 if mu0 is None else float(mu0)
    mu_bar = mu * 1e7
    a = np.zeros_like(d)
    e = np.zeros_like(d)
    residuals = []
    best = (np.inf, a, e)
    for it in range(1, max_iters + 1):
        e = soft_threshold(d - a + y / mu, lam / mu)
        a = svt(d - e + y / mu, 1.0 / mu)
        z = d - a - e
        y = y + mu * z
        mu = min(mu * rho, mu_bar)
        res = np.linalg.norm(z, "fro") / d_norm
        residuals.append(float(res))
        if res < best[0]:
            best = (res, a, e)
        if res <= eps:
            return RpcaResult(a, e, it, True, residuals)
    log.warning("inexact ALM stopped at max_iters=%d, residual %.3g", max_iters, best[0])
    return RpcaResult(best[1], best[2], max_iters, False, residuals)


def patch_positions(size: int, patch: int, stride: int) -> List[int]:
    if size < patch:
        raise ValueError(f"image dimension {size} smaller than patch {patch}")
    pos = list(range(0, size - patch + 1, stride))
    if pos[-1] != size - patch:
        pos.append(size - patch)
    return pos


def patch_image(img: np.ndarray, patch: int, stride: int) -> Tuple[np.ndarray, List[Tuple[int, int]]]:
    """Stack every ``patch x patch`` window (sliding by ``stride``) as a column."""
    h, w = img.shape
    corners = [(r, c) for c in patch_positions(w, patch, stride) for r in patch_positions(h, patch, stride)]
    cols = [img[r: r + patch, c: c + patch].reshape(-1) for r, c in corners]
    return np.stack(cols, axis=1), corners


def fold_patches(
    cols: np.ndarray, corners: Sequence[Tuple[int, int]], shape: Tuple[int, int], patch: int, how: str = "mean"
) -> np.ndarray:
    """Inverse of ``patch_image``: combine overlapping patch values per pixel."""
    if how == "mean":
        acc = np.zeros(shape)
        cnt = np.zeros(shape)
        for k, (r, c) in enumerate(corners):
            acc[r: r + patch, c: c + patch] += cols[:, k].reshape(patch, patch)
            cnt[r: r + patch, c: c + patch] += 1
        return acc / np.maximum(cnt, 1)
    stack = np.full((len(corners),) + tuple(shape), np.nan)
    for k, (r, c) in enumerate(corners):
        stack[k, r: r + patch, c: c + patch] = cols[:, k].reshape(patch, patch)
    out = np.nanmedian(stack, axis=0)
    return np.nan_to_num(out)


def ipi(img: ImageLike, cfg: IpiConfig = IpiConfig()) -> IpiResult:
    data = as_array(img)
    d, corners = patch_image(data, cfg.patch, cfg.stride)
    lam = cfg.L / np.sqrt(min(d.shape))
    res = rpca_ialm(d, lam, eps=cfg.eps, max_iters=cfg.max_iters, mu0=cfg.mu0, rho=cfg.rho)
    target = fold_patches(res.sparse, corners, data.shape, cfg.patch, cfg.fold)
    background = fold_patches(res.low_rank, corners, data.shape, cfg.patch, cfg.fold)
    return IpiResult(score_map=np.maximum(target, 0.0), background=background, target=target, rpca=res)


# -- detections ------------------------------------------------------------

def scoremap_to_detections(score_map: np.ndarray, k: float, image_id: str = "") -> List[Detection]:
    """Threshold at ``mean + k * std`` and box each 8-connected component.

    Scores are component maxima divided by the global maximum. Components
    are ordered by score, then by position of their first pixel.
    """
    m = np.asarray(score_map, dtype=np.float64)
    if not np.isfinite(k):
        raise ValueError("k must be finite")
    peak = m.max() if m.size else 0.0
    if peak <= 0:
        return []
    thresh = m.mean() + k * m.std()
    labels, n = ndimage.label(m > thresh, structure=np.ones((3, 3), dtype=int))
    if n == 0:
        return []
    slices = ndimage.find_objects(labels)
    maxima = ndimage.maximum(m, labels, index=np.arange(1, n + 1))
    dets = []
    for idx, (sl, mx) in enumerate(zip(slices, np.atleast_1d(maxima))):
        rs, cs = sl
        box = BBox(float(cs.start), float(rs.start), float(cs.stop), float(rs.stop))
        dets.append((-(mx / peak), rs.start, cs.start, Detection(box, float(min(mx / peak, 1.0)), image_id)))
    dets.sort(key=lambda t: t[:3])
    return [t[3] for t in dets]


def score_map(img: ImageLike, method: str, ipi_cfg: IpiConfig = IpiConfig()) -> np.ndarray:
    if method == "lcm":
        return lcm(img)
    if method == "mpcm":
        return mpcm(img)
    if method == "ipi":
        return ipi(img, ipi_cfg).score_map
    raise ValueError(f"unknown method {method!r}; choose from lcm, mpcm, ipi")


def detect(img: ImageLike, method: str, k: Optional[float] = None, image_id: str = "",
           ipi_cfg: IpiConfig = IpiConfig()) -> List[Detection]:
    kk = DEFAULT_K[method] if k is None else k
    return scoremap_to_detections(score_map(img, method, ipi_cfg), kk, image_id)
