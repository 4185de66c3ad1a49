import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sirstbench.baselines import (
    IpiConfig,
    fold_patches,
    ipi,
    lcm,
    mpcm,
    patch_image,
    patch_positions,
    rpca_ialm,
    scoremap_to_detections,
    soft_threshold,
    svt,
)


def padded_cell(img, r, c, n):
    """Cell of size n centered at (r, c) on the edge-replicated image."""
    h, w = img.shape
    rows = np.clip(np.arange(r - n // 2, r + n // 2 + 1), 0, h - 1)
    cols = np.clip(np.arange(c - n // 2, c + n // 2 + 1), 0, w - 1)
    return img[np.ix_(rows, cols)]


OFFS = [(-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1)]


def dense_lcm(img, n=3):
    out = np.zeros_like(img)
    for r in range(img.shape[0]):
        for c in range(img.shape[1]):
            big = padded_cell(img, r, c, n).max()
            m = max(padded_cell(img, r + dy * n, c + dx * n, n).mean() for dy, dx in OFFS)
            out[r, c] = big ** 2 / max(m, 1e-12)
    return out


def dense_mpcm(img, scales=(1, 3, 5, 7, 9)):
    out = np.full(img.shape, -np.inf)
    for n in scales:
        for r in range(img.shape[0]):
            for c in range(img.shape[1]):
                mt = padded_cell(img, r, c, n).mean()
                d = [mt - padded_cell(img, r + dy * n, c + dx * n, n).mean() for dy, dx in OFFS]
                out[r, c] = max(out[r, c], min(d[i] * d[i + 4] for i in range(4)))
    return np.maximum(out, 0)


def blob(h=40, w=40, r=20, c=20, amp=0.5, base=0.2, sigma=1.0):
    ys, xs = np.mgrid[0:h, 0:w]
    return base + amp * np.exp(-((ys - r) ** 2 + (xs - c) ** 2) / (2 * sigma ** 2))


# -- LCM / MPCM ------------------------------------------------------------------

def test_lcm_matches_dense_oracle(rng):
    img = rng.uniform(0.05, 1, (17, 23))
    np.testing.assert_allclose(lcm(img), dense_lcm(img), rtol=1e-10)
    np.testing.assert_allclose(lcm(img, cell=5), dense_lcm(img, 5), rtol=1e-10)


def test_lcm_constant_image():
    np.testing.assert_allclose(lcm(np.full((12, 12), 0.3)), 0.3, rtol=1e-12)


def test_lcm_peak_on_blob_not_edge():
    img = blob()
    img[:, 30:] += 0.3
    out = lcm(img)
    assert np.unravel_index(np.argmax(out), out.shape) == (20, 20)


def test_lcm_rejects_even_cell():
    with pytest.raises(ValueError):
        lcm(np.ones((9, 9)), cell=2)


def test_mpcm_matches_dense_oracle(rng):
    img = rng.uniform(0, 1, (21, 19))
    np.testing.assert_allclose(mpcm(img, (1, 3, 5)), dense_mpcm(img, (1, 3, 5)), atol=1e-12)


def test_mpcm_flat_is_zero():
    np.testing.assert_allclose(mpcm(np.full((30, 30), 0.6)), 0.0, atol=1e-15)


def test_mpcm_detects_bright_and_dark_targets():
    for sign in (1, -1):
        img = blob(amp=0.3 * sign, base=0.5)
        out = mpcm(img)
        assert np.unravel_index(np.argmax(out), out.shape) == (20, 20)
        assert out[20, 20] > 0


@settings(max_examples=25, deadline=None)
@given(st.floats(-5, 5), st.integers(0, 2 ** 31 - 1))
def test_mpcm_offset_invariant(offset, seed):
    img = np.random.default_rng(seed).uniform(0, 1, (16, 16))
    np.testing.assert_allclose(mpcm(img + offset), mpcm(img), atol=1e-9)


# -- IPI -------------------------------------------------------------------------

def test_soft_threshold():
    x = np.array([-2.0, -0.5, 0.0, 0.3, 1.5])
    np.testing.assert_array_equal(soft_threshold(x, 0.5), [-1.5, 0.0, 0.0, 0.0, 1.0])


def eigh_svt(x, tau):
    """Thresholding through the eigendecomposition of x^T x."""
    evals, v = np.linalg.eigh(x.T @ x)
    s = np.sqrt(np.clip(evals, 0, None))
    keep = s > tau
    u = x @ v[:, keep] / s[keep]
    return (u * (s[keep] - tau)) @ v[:, keep].T


def test_svt_matches_eigh_reference(rng):
    for _ in range(5):
        x = rng.standard_normal((60, 40))
        tau = float(rng.uniform(1, 8))
        np.testing.assert_allclose(svt(x, tau), eigh_svt(x, tau), atol=1e-8)


def test_svt_zero_threshold_is_identity(rng):
    x = rng.standard_normal((10, 7))
    np.testing.assert_allclose(svt(x, 0.0), x, atol=1e-12)


def test_patch_positions_cover_edge():
    assert patch_positions(100, 50, 20) == [0, 20, 40, 50]
    assert patch_positions(50, 50, 20) == [0]
    with pytest.raises(ValueError):
        patch_positions(40, 50, 20)


@pytest.mark.parametrize("how", ["mean", "median"])
def test_fold_inverts_patching(rng, how):
    img = rng.uniform(size=(73, 91))
    cols, corners = patch_image(img, 25, 10)
    np.testing.assert_allclose(fold_patches(cols, corners, img.shape, 25, how), img, atol=1e-15)


def rank_one_scene():
    r = np.arange(100)[:, None]
    c = np.arange(100)[None, :]
    bg = 0.3 * np.exp(0.004 * r) * np.exp(-0.003 * c)
    img = bg.copy()
    spikes = [(20, 30), (55, 70), (80, 15)]
    for y, x in spikes:
        img[y, x] += 0.5
    return bg, img, spikes


def test_ipi_rank_one_background_has_empty_target():
    bg, _, _ = rank_one_scene()
    res = ipi(bg)
    assert res.converged
    assert np.abs(res.target).max() <= 1e-6


def test_ipi_separates_spikes():
    bg, img, spikes = rank_one_scene()
    res = ipi(img)
    top = np.argsort(res.score_map.ravel())[::-1][:3]
    assert {tuple(int(v) for v in np.unravel_index(i, img.shape)) for i in top} == set(spikes)
    rel = np.linalg.norm(res.background - bg) / np.linalg.norm(bg)
    assert rel <= 1e-3


def test_rpca_looser_tolerance_stops_no_later(rng):
    d = np.outer(rng.uniform(1, 2, 80), rng.uniform(1, 2, 30))
    d[rng.integers(0, 80, 10), rng.integers(0, 30, 10)] += 3
    lam = 1 / np.sqrt(30)
    tight = rpca_ialm(d, lam, eps=1e-7)
    loose = rpca_ialm(d, lam, eps=1e-2)
    assert loose.iterations <= tight.iterations
    assert tight.converged and loose.converged


def test_rpca_residual_monotone_on_rank_one_scene():
    _, img, _ = rank_one_scene()
    res = ipi(img).rpca
    assert np.all(np.diff(res.residuals) <= 1e-10)


def test_rpca_reports_non_convergence(rng, caplog):
    d = rng.standard_normal((40, 30))
    res = rpca_ialm(d, 1 / np.sqrt(30), eps=1e-14, max_iters=3)
    assert not res.converged
    assert res.iterations == 3
    best = int(np.argmin(res.residuals))
    assert np.linalg.norm(d - res.low_rank - res.sparse) / np.linalg.norm(d) == pytest.approx(res.residuals[best])
    assert "max_iters" in caplog.text


def test_rpca_zero_matrix():
    res = rpca_ialm(np.zeros((5, 4)), 0.5)
    assert res.converged and not res.sparse.any()


def test_ipi_config_validation():
    with pytest.raises(ValueError):
        IpiConfig(patch=10, stride=20)
    with pytest.raises(ValueError):
        IpiConfig(fold="max")


# -- detections ------------------------------------------------------------------

def test_scoremap_components():
    m = np.zeros((20, 20))
    m[2:4, 3:6] = 1.0
    m[10, 10] = 0.5
    m[11, 11] = 0.4  # diagonal neighbour joins the component
    dets = scoremap_to_detections(m, k=1.0, image_id="a")
    assert [d.box.as_tuple() for d in dets] == [(3, 2, 6, 4), (10, 10, 12, 12)]
    assert [d.score for d in dets] == [1.0, 0.5]
    assert all(d.image_id == "a" for d in dets)


def test_scoremap_empty_cases():
    assert scoremap_to_detections(np.zeros((5, 5)), 3.0) == []
    assert scoremap_to_detections(np.ones((5, 5)), 3.0) == []
    with pytest.raises(ValueError):
        scoremap_to_detections(np.ones((5, 5)), float("nan"))
