"""The numba and numpy kernel paths must agree."""

import numpy as np
import pytest
from scipy import ndimage

from voxelvio import kernels


needs_numba = pytest.mark.skipif(not kernels.HAVE_NUMBA, reason="numba missing")


def _problem(seed=0, n=30):
    rng = np.random.default_rng(seed)
    img = ndimage.gaussian_filter(rng.random((100, 140)), 2.0)
    cur = np.roll(img, (1, 3), axis=(0, 1))
    gy, gx = np.gradient(img)
    pts = np.column_stack([rng.uniform(5, 135, n), rng.uniform(5, 95, n)])
    d0 = rng.normal(scale=0.5, size=(n, 2))
    return img, gx, gy, cur, pts, d0


@needs_numba
def test_klt_paths_agree():
    img, gx, gy, cur, pts, d0 = _problem()
    d_a, s_a = kernels._klt_align_level_numpy(img, gx, gy, cur, pts, d0, 7, 25, 0.01)
    d_b, s_b = kernels._klt_align_level_numba(img, gx, gy, cur, pts, d0, 7, 25, 0.01)
    assert np.array_equal(s_a, s_b)
    assert np.allclose(d_a, d_b, atol=1e-9)


@needs_numba
def test_fire_step_paths_agree():
    rng = np.random.default_rng(1)
    npx = 500
    for trial in range(20):
        level_a = rng.uniform(-1, 1, npx)
        ref_a = rng.uniform(-1, 1, npx)
        cmap = rng.uniform(0.3, 0.7, npx)
        old_idx = rng.integers(0, npx, 40)
        new_idx = rng.integers(0, npx, 40)
        new_val = rng.uniform(-1, 1, 40)
        level_b, ref_b = level_a.copy(), ref_a.copy()
        stamp = np.zeros(npx, dtype=np.int64)
        px_a, pol_a = kernels._fire_step_numpy(
            level_a, ref_a, cmap, old_idx, new_idx, new_val, stamp, trial + 1)
        stamp_b = np.zeros(npx, dtype=np.int64)
        px_b, pol_b = kernels._fire_step_numba(
            level_b, ref_b, cmap, old_idx, new_idx, new_val, stamp_b, trial + 1)
        assert np.array_equal(px_a, px_b)
        assert np.array_equal(pol_a, pol_b)
        assert np.allclose(level_a, level_b)
        assert np.allclose(ref_a, ref_b)


def test_fire_step_thresholding():
    # a change just below the threshold stays silent; above fires once
    level = np.zeros(4)
    ref = np.zeros(4)
    cmap = np.full(4, 0.5)
    stamp = np.zeros(4, dtype=np.int64)
    px, pol = kernels.fire_step(level, ref, cmap, np.empty(0, np.int64),
                                np.array([1], dtype=np.int64), np.array([0.4]),
                                stamp, 1)
    assert len(px) == 0
    px, pol = kernels.fire_step(level, ref, cmap, np.empty(0, np.int64),
                                np.array([2], dtype=np.int64), np.array([0.8]),
                                stamp, 2)
    assert list(px) == [2] and list(pol) == [1]
    assert ref[2] == pytest.approx(0.5)
    # removing the edge later fires the opposite polarity
    px, pol = kernels.fire_step(level, ref, cmap, np.array([2], dtype=np.int64),
                                np.empty(0, np.int64), np.empty(0), stamp, 3)
    assert list(px) == [2] and list(pol) == [-1]


def test_klt_status_codes():
    img = np.zeros((40, 40))
    pts = np.array([[2.0, 2.0], [20.0, 20.0]])
    d0 = np.zeros((2, 2))
    gy, gx = np.gradient(img)
    _, status = kernels.klt_align_level(img, gx, gy, img, pts, d0, 5, 10, 0.01)
    assert status[0] == kernels.KLT_OOB      # patch exceeds the border
    assert status[1] == kernels.KLT_SINGULAR  # no gradient anywhere
