import math

import numpy as np
import pytest

from sirstbench.core import BBox, GtTarget
from sirstbench.noco import (
    NoCoConfig,
    NoCoError,
    extend_region,
    image_noco_map,
    noco_from_bytes,
    noco_lookup,
    noco_to_bytes,
    read_noco_raw,
    target_noco,
    write_noco_pgm,
    write_noco_raw,
)
from sirstbench.synth import SceneSpec, synth_scene


def dense_noco(img, target, gamma=1.0, sigma_scale=0.5, min_border=1.0):
    """Full-image loop evaluation of the normalized contrast of one target.

    Returns an image-sized array, NaN outside the (clipped) region.
    """
    h, w = img.shape
    b = target.box
    hb = max(b.height / gamma, min_border)
    wb = max(b.width / gamma, min_border)
    cx, cy = (b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2
    ext_w, ext_h = b.width + 2 * wb, b.height + 2 * hb
    rx0, rx1 = max(cx - ext_w / 2, 0), min(cx + ext_w / 2, w)
    ry0, ry1 = max(cy - ext_h / 2, 0), min(cy + ext_h / 2, h)
    inside = [(r, c) for r in range(h) for c in range(w) if c + 1 > rx0 and c < rx1 and r + 1 > ry0 and r < ry1]
    lo = min(img[r, c] for r, c in inside)
    sx, sy = sigma_scale * ext_w / 2, sigma_scale * ext_h / 2
    gx, gy = target.centroid
    prod = {}
    for r, c in inside:
        g = math.exp(-((c + 0.5 - gx) ** 2) / (2 * sx * sx) - ((r + 0.5 - gy) ** 2) / (2 * sy * sy))
        prod[(r, c)] = (img[r, c] - lo) * g
    pmin, pmax = min(prod.values()), max(prod.values())
    out = np.full((h, w), np.nan)
    for k, v in prod.items():
        out[k] = 0.0 if pmax == pmin else (v - pmin) / (pmax - pmin)
    return out


def blob_image(h, w, cx, cy, sigma, amp=1.0, bg=0.1):
    ys, xs = np.mgrid[0:h, 0:w] + 0.5
    return bg + amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma ** 2))


def patch_as_image(p, shape):
    out = np.full(shape, np.nan)
    out[p.rows, p.cols] = p.values
    return out


# -- extend_region -------------------------------------------------------------

def test_extend_region_gamma_one():
    t = GtTarget(BBox.from_center(50, 50, 4, 4))
    r = extend_region(t, NoCoConfig(gamma=1.0, min_border=1), 100, 100)
    assert (r.width, r.height, r.center) == (12, 12, (50, 50))


def test_extend_region_gamma_half():
    t = GtTarget(BBox.from_center(50, 50, 4, 6))  # h=6, w=4
    r = extend_region(t, NoCoConfig(gamma=0.5), 200, 200)
    assert (r.height, r.width) == (30, 20)


def test_extend_region_clipped_at_corner():
    t = GtTarget(BBox(0, 0, 2, 2))
    r = extend_region(t, NoCoConfig(), 50, 50)
    assert (r.x0, r.y0) == (0, 0)
    assert r.x1 >= 2 and r.y1 >= 2


def test_extend_region_min_border():
    t = GtTarget(BBox.from_center(20, 20, 0.5, 0.5))
    r = extend_region(t, NoCoConfig(min_border=3), 40, 40)
    assert r.width == pytest.approx(6.5)


def test_extend_region_outside_image():
    with pytest.raises(NoCoError, match="outside"):
        extend_region(GtTarget(BBox(60, 60, 63, 63)), NoCoConfig(), 50, 50)


def test_config_validation():
    for kw in (dict(gamma=0), dict(gamma=1.2), dict(sigma_scale=0), dict(min_border=0.5)):
        with pytest.raises(ValueError):
            NoCoConfig(**kw)


# -- target_noco ---------------------------------------------------------------

def test_delta_target():
    img = np.zeros((40, 40))
    img[20, 20] = 1.0
    t = GtTarget(BBox(19, 19, 22, 22), (20.5, 20.5))
    full = patch_as_image(target_noco(img, t), img.shape)
    assert full[20, 20] == 1.0
    others = np.delete(full[~np.isnan(full)], np.flatnonzero(np.isclose(full[~np.isnan(full)], 1.0)))
    assert np.all(others < 1.0)


def test_uniform_region_is_zero():
    p = target_noco(np.full((30, 30), 0.4), GtTarget(BBox(10, 10, 14, 14)))
    assert np.all(p.values == 0.0)


def test_gaussian_blob_argmax_is_center_pixel():
    img = blob_image(64, 64, 30.5, 25.5, 1.5)
    t = GtTarget(BBox.from_center(30.5, 25.5, 9, 9), (30.5, 25.5))
    full = patch_as_image(target_noco(img, t), img.shape)
    oracle = dense_noco(img, t)
    np.testing.assert_allclose(full, oracle, atol=1e-12, equal_nan=True)
    assert np.unravel_index(np.nanargmax(oracle), img.shape) == (25, 30)
    assert np.unravel_index(np.nanargmax(full), img.shape) == (25, 30)


@pytest.mark.parametrize("gamma,sigma_scale", [(1.0, 0.5), (0.5, 0.3), (0.8, 1.0)])
def test_matches_dense_oracle_random(rng, gamma, sigma_scale):
    for _ in range(10):
        img = rng.uniform(0, 1, (48, 48))
        x0, y0 = rng.uniform(-2, 40, 2)
        w, h = rng.uniform(1, 8, 2)
        box = BBox(x0, y0, x0 + w, y0 + h)
        cen = (rng.uniform(box.x0, box.x1), rng.uniform(box.y0, box.y1))
        t = GtTarget(box, cen)
        cfg = NoCoConfig(gamma=gamma, sigma_scale=sigma_scale)
        full = patch_as_image(target_noco(img, t, cfg), img.shape)
        np.testing.assert_allclose(full, dense_noco(img, t, gamma, sigma_scale), atol=1e-12, equal_nan=True)


def test_patch_spans_zero_to_one(rng):
    for _ in range(20):
        img = rng.uniform(0, 1, (40, 40))
        p = target_noco(img, GtTarget(BBox(15, 15, 19, 18)))
        assert p.values.max() == 1.0 and p.values.min() == 0.0


# -- image maps ----------------------------------------------------------------

def test_no_targets_gives_zero_map():
    m = image_noco_map(np.ones((10, 12)), [])
    assert m.values.shape == (10, 12) and not m.values.any()
    assert np.all(m.owner == -1)


def test_disjoint_targets_equal_their_patches():
    img = blob_image(80, 80, 20.5, 20.5, 1.2) + blob_image(80, 80, 60.5, 55.5, 1.0, bg=0)
    ts = [GtTarget(BBox.from_center(20.5, 20.5, 7, 7), (20.5, 20.5)),
          GtTarget(BBox.from_center(60.5, 55.5, 6, 6), (60.5, 55.5))]
    m = image_noco_map(img, ts)
    for k, t in enumerate(ts):
        p = target_noco(img, t)
        np.testing.assert_array_equal(m.values[p.rows, p.cols], p.values)
        assert np.all(m.owner[p.rows, p.cols] == k)


def test_overlapping_regions_take_pointwise_max(rng):
    img = blob_image(60, 60, 25.5, 25.5, 1.5) + blob_image(60, 60, 31.5, 28.5, 1.0, bg=0)
    img += rng.normal(0, 0.01, img.shape)
    ts = [GtTarget(BBox.from_center(25.5, 25.5, 6, 6), (25.5, 25.5)),
          GtTarget(BBox.from_center(31.5, 28.5, 5, 5), (31.5, 28.5))]
    m = image_noco_map(img, ts)
    # two-pass oracle over dense per-target rasters
    dense = [dense_noco(img, t) for t in ts]
    stack = np.stack([np.nan_to_num(d, nan=-1.0) for d in dense])
    expected = np.clip(stack.max(axis=0), 0, None)
    np.testing.assert_allclose(m.values, expected, atol=1e-12)
    in_any = ~np.all(np.isnan(np.stack(dense)), axis=0)
    expected_owner = np.where(in_any, np.argmax(stack, axis=0), -1)
    np.testing.assert_array_equal(m.owner, expected_owner)


def test_merge_is_order_independent(rng):
    img = rng.uniform(0, 1, (50, 50))
    ts = [GtTarget(BBox(10, 10, 14, 13)), GtTarget(BBox(13, 12, 17, 16)), GtTarget(BBox(30, 30, 33, 34))]
    a = image_noco_map(img, ts)
    b = image_noco_map(img, ts[::-1])
    np.testing.assert_array_equal(a.values, b.values)


def test_map_zero_outside_regions(rng):
    img = rng.uniform(0, 1, (64, 64))
    ts = [GtTarget(BBox(10, 10, 13, 14)), GtTarget(BBox(40, 20, 45, 24))]
    m = image_noco_map(img, ts)
    mask = np.zeros(img.shape, bool)
    for t in ts:
        p = target_noco(img, t)
        mask[p.rows, p.cols] = True
    assert not m.values[~mask].any()
    assert np.all(m.owner[~mask] == -1)
    assert np.all((m.values >= 0) & (m.values <= 1))


def test_map_error_names_target_index():
    with pytest.raises(NoCoError, match="target 1"):
        image_noco_map(np.zeros((20, 20)), [GtTarget(BBox(1, 1, 3, 3)), GtTarget(BBox(30, 30, 32, 32))])


def test_affine_intensity_invariance(rng):
    for _ in range(100):
        img = rng.uniform(0, 1, (40, 40))
        ts = [GtTarget(BBox(*rng.uniform(5, 15, 2), *rng.uniform(20, 30, 2)))]
        a, b = rng.uniform(0.1, 10), rng.uniform(-5, 5)
        base = image_noco_map(img, ts).values
        np.testing.assert_allclose(image_noco_map(a * img + b, ts).values, base, atol=1e-12, rtol=0)
        # power-of-two gains are exact in floating point
        k = int(rng.integers(-4, 5))
        np.testing.assert_array_equal(image_noco_map(img * 2.0 ** k, ts).values, base)


def test_translation_equivariance(rng):
    img = rng.uniform(0, 1, (80, 80))
    t = GtTarget(BBox(30, 32, 34, 35), (31.5, 33.5))
    dy, dx = 7, -5
    shifted_img = np.roll(img, (dy, dx), axis=(0, 1))
    t2 = GtTarget(t.box.shifted(dx, dy), (31.5 + dx, 33.5 + dy))
    m1 = image_noco_map(img, [t]).values
    m2 = image_noco_map(shifted_img, [t2]).values
    np.testing.assert_allclose(np.roll(m1, (dy, dx), axis=(0, 1)), m2, atol=1e-12)


def test_box_perturbation_robustness():
    worst = 0.0
    rng = np.random.default_rng(7)
    for seed in range(40):
        img, ts = synth_scene(SceneSpec(height=96, width=96, n_targets=1, seed=seed))
        t = ts[0]
        base = noco_lookup(image_noco_map(img, [t]), t.centroid)
        for _ in range(4):
            d = rng.choice([-1.0, 0.0, 1.0], 4)
            b = t.box
            nb = BBox(b.x0 + d[0], b.y0 + d[1], max(b.x1 + d[2], b.x0 + d[0] + 0.5), max(b.y1 + d[3], b.y0 + d[1] + 0.5))
            cen = (min(max(t.centroid[0], nb.x0), nb.x1), min(max(t.centroid[1], nb.y0), nb.y1))
            v = noco_lookup(image_noco_map(img, [GtTarget(nb, cen)]), t.centroid)
            worst = max(worst, abs(v - base))
    assert worst <= 0.05


# -- lookup ----------------------------------------------------------------------

def test_lookup_hits_pixel_with_one():
    img = np.zeros((20, 20))
    img[8, 5] = 1.0
    m = image_noco_map(img, [GtTarget(BBox(4, 7, 7, 10), (5.5, 8.5))])
    assert noco_lookup(m, (5.5, 8.5)) == 1.0


def test_lookup_outside_raster():
    m = image_noco_map(np.ones((8, 8)), [])
    assert noco_lookup(m, (-5, -5)) == 0.0
    assert noco_lookup(m, (8.0, 2.0)) == 0.0
    assert noco_lookup(m, (float("nan"), 1.0)) == 0.0


def test_lookup_picks_nearest_pixel_center():
    # pixel (r, c) covers [c, c+1) x [r, r+1); its center is (c + .5, r + .5)
    vals = np.arange(400, dtype=float).reshape(20, 20) / 400
    from sirstbench.noco import NoCoMap
    m = NoCoMap(vals, np.zeros_like(vals, dtype=int))
    assert noco_lookup(m, (10.4, 10.6)) == vals[10, 10]
    assert noco_lookup(m, (10.99, 11.0)) == vals[11, 10]


# -- export ------------------------------------------------------------------------

def test_raw_roundtrip(tmp_path, rng):
    vals = rng.uniform(0, 1, (7, 11)).astype(np.float32).astype(np.float64)
    buf = noco_to_bytes(vals)
    assert buf[:8] == (7).to_bytes(4, "little") + (11).to_bytes(4, "little")
    assert len(buf) == 8 + 4 * 77
    np.testing.assert_array_equal(noco_from_bytes(buf), vals)
    write_noco_raw(tmp_path / "m.noco", vals)
    np.testing.assert_array_equal(read_noco_raw(tmp_path / "m.noco"), vals)
    with pytest.raises(ValueError):
        noco_from_bytes(buf[:-1])


def test_pgm_export(tmp_path):
    vals = np.array([[0.0, 0.5], [1.0, 0.25]])
    write_noco_pgm(tmp_path / "m.pgm", vals)
    data = (tmp_path / "m.pgm").read_bytes()
    assert data.startswith(b"P5\n2 2\n255\n")
    assert list(data[-4:]) == [0, 128, 255, 64]
