"""Synthetic infrared scenes: Gaussian point targets on simple backgrounds.

Targets are isotropic Gaussian blobs centered on pixel centers; the
annotated box is the blob's 3-sigma extent and the centroid is the blob
center. Everything is driven by a single seeded ``numpy`` generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from .core import BBox, GrayImage, GtTarget

BACKGROUNDS = ("flat", "gradient", "clouds")


class SynthError(RuntimeError):
    pass


@dataclass(frozen=True)
class SceneSpec:
    height: int = 128
    width: int = 128
    n_targets: int = 2
    sigma_range: Tuple[float, float] = (0.5, 2.0)
    amplitude: float = 0.5
    snr: float = 20.0
    background: str = "flat"
    level: float = 0.2
    clutter: float = 0.0
    cloud_amp: float = 0.08
    seed: int = 0
    max_retries: int = 1000

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("scene dimensions must be positive")
        if self.n_targets < 0:
            raise ValueError("n_targets must be >= 0")
        lo, hi = self.sigma_range
        if not (0 < lo <= hi):
            raise ValueError(f"invalid sigma_range {self.sigma_range}")
        if self.amplitude < 0 or self.snr <= 0:
            raise ValueError("amplitude must be >= 0 and snr > 0")
        if self.background not in BACKGROUNDS:
            raise ValueError(f"background must be one of {BACKGROUNDS}, got {self.background!r}")

    @property
    def noise_std(self) -> float:
        return self.amplitude / self.snr


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    bg = np.full((h, w), spec.level)
    if spec.background == "gradient":
        theta = rng.uniform(0, 2 * np.pi)
        ys, xs = np.mgrid[0:h, 0:w]
        ramp = np.cos(theta) * xs / max(w - 1, 1) + np.sin(theta) * ys / max(h - 1, 1)
        ramp -= ramp.min()
        if ramp.max() > 0:
            ramp /= ramp.max()
        bg = bg + 0.2 * ramp
    elif spec.background == "clouds":
        field = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=max(min(h, w) / 16.0, 1.0), mode="wrap")
        field -= field.mean()
        sd = field.std()
        if sd > 0:
            field /= sd
        # fine-grained clutter on top of the smooth field
        speckle = ndimage.gaussian_filter(rng.standard_normal((h, w)), sigma=1.0)
        sd = speckle.std()
        if sd > 0:
            speckle /= sd
        bg = bg + spec.cloud_amp * field + spec.clutter * speckle
    return bg


def synth_scene(spec: SceneSpec) -> Tuple[GrayImage, List[GtTarget]]:
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    img = _background(spec, rng)
    targets: List[GtTarget] = []
    ys = np.arange(h)[:, None] + 0.5
    xs = np.arange(w)[None, :] + 0.5
    tries = 0
    while len(targets) < spec.n_targets:
        tries += 1
        if tries > spec.max_retries:
            raise SynthError(
                f"could not place {spec.n_targets} non-overlapping targets in "
                f"{w}x{h} after {spec.max_retries} attempts"
            )
        sigma = float(rng.uniform(*spec.sigma_range))
        # keep the box plus its NoCo surround inside the frame
        margin = int(math.ceil(9 * sigma)) + 1
        if 2 * margin >= min(h, w):
            raise SynthError(f"scene {w}x{h} too small for sigma {sigma:.2f}")
        cx = int(rng.integers(margin, w - margin)) + 0.5
        cy = int(rng.integers(margin, h - margin)) + 0.5
        box = BBox.from_center(cx, cy, 6 * sigma, 6 * sigma)
        grown = BBox(box.x0 - 1, box.y0 - 1, box.x1 + 1, box.y1 + 1)
        if any(_overlaps(grown, t.box) for t in targets):
            continue
        img = img + spec.amplitude * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))
        targets.append(GtTarget(box, (cx, cy)))
    if spec.noise_std > 0:
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
    return GrayImage(np.clip(img, 0.0, 1.0)), targets


def _overlaps(a: BBox, b: BBox) -> bool:
    return a.x0 < b.x1 and b.x0 < a.x1 and a.y0 < b.y1 and b.y0 < a.y1


SUITES = {
    # bright targets, smooth backgrounds, little noise
    "easy": dict(amplitude=0.5, snr=25.0, level=0.2, cloud_amp=0.0, clutter=0.0, backgrounds=("flat", "gradient")),
    # faint targets under strong cloud structure: signal-to-clutter below 1
    "hard": dict(amplitude=0.1, snr=20.0, level=0.4, cloud_amp=0.15, clutter=0.0, backgrounds=("clouds",)),
}


def suite_specs(name: str, n_images: int = 20, seed: int = 0, height: int = 256, width: int = 256) -> List[SceneSpec]:
    """Scene specs of a named suite; image ``i`` is seeded with ``seed * 100003 + i``."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    cfg = dict(SUITES[name])
    backgrounds = cfg.pop("backgrounds")
    rng = np.random.default_rng(seed)
    return [
        SceneSpec(
            height=height,
            width=width,
            n_targets=int(rng.integers(1, 4)),
            background=backgrounds[i % len(backgrounds)],
            seed=seed * 100003 + i,
            **cfg,
        )
        for i in range(n_images)
    ]


def make_suite(name: str, n_images: int = 20, seed: int = 0, **kw):
    """List of ``(image_id, image, targets)`` for a named suite."""
    return [(f"{name}_{i:04d}",) + synth_scene(s) for i, s in enumerate(suite_specs(name, n_images, seed, **kw))]
