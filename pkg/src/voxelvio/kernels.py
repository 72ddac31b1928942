"""Hot numeric kernels: numba fast path with a pure-numpy fallback.

The numba path is used when numba imports and the environment variable
``VOXELVIO_NUMBA`` is not set to ``0``.  Both paths implement the same
math; ``tests/test_kernels.py`` asserts agreement and
``benchmarks/bench_kernels.py`` compares their speed.

Kernels here are the two inner loops that dominate runtime:

* ``klt_align_level`` — inverse-compositional translational patch
  alignment for a batch of features on one pyramid level.
* ``fire_step`` — per-pixel integrate-and-fire brightness bookkeeping
  for the event simulator's raster steps.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - mirror env always has numba
    njit = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("VOXELVIO_NUMBA", "1") != "0"

# klt_align_level status codes
KLT_CONVERGED = 0
KLT_OOB = 1
KLT_MAXITER = 2
KLT_SINGULAR = 3

_DET_EPS = 1e-10


def _patch_ok(x, y, half, width, height):
    m = 1e-6
    return (x - half >= 0.0) & (x + half <= width - 1 - m) \
        & (y - half >= 0.0) & (y + half <= height - 1 - m)


def _bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    x0 = np.floor(xs).astype(np.int64)
    y0 = np.floor(ys).astype(np.int64)
    wx = xs - x0
    wy = ys - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return (1 - wy) * ((1 - wx) * v00 + wx * v01) + wy * ((1 - wx) * v10 + wx * v11)


def _klt_align_level_numpy(prev, gx, gy, cur, pts, d0, half, max_iters, eps):
    n = pts.shape[0]
    d = np.ascontiguousarray(d0, dtype=np.float64).copy()
    status = np.full(n, KLT_MAXITER, dtype=np.int8)
    if n == 0:
        return d, status
    height, width = prev.shape

    offs = np.arange(-half, half + 1, dtype=np.float64)
    oyy, oxx = np.meshgrid(offs, offs, indexing="ij")
    ox = oxx.ravel()
    oy = oyy.ravel()

    ok = _patch_ok(pts[:, 0], pts[:, 1], half, width, height)
    status[~ok] = KLT_OOB
    valid = np.nonzero(ok)[0]
    if valid.size == 0:
        return d, status

    px = pts[valid, 0][:, None] + ox[None, :]
    py = pts[valid, 1][:, None] + oy[None, :]
    tmpl = _bilinear(prev, px, py)
    tgx = _bilinear(gx, px, py)
    tgy = _bilinear(gy, px, py)
    h00 = np.sum(tgx * tgx, axis=1)
    h01 = np.sum(tgx * tgy, axis=1)
    h11 = np.sum(tgy * tgy, axis=1)
    det = h00 * h11 - h01 * h01

    sing = det < _DET_EPS
    status[valid[sing]] = KLT_SINGULAR
    active = ~sing

    for _ in range(max_iters):
        if not active.any():
            break
        ia = np.nonzero(active)[0]
        cx = pts[valid[ia], 0] + d[valid[ia], 0]
        cy = pts[valid[ia], 1] + d[valid[ia], 1]
        inb = _patch_ok(cx, cy, half, width, height)
        oob = ia[~inb]
        status[valid[oob]] = KLT_OOB
        active[oob] = False
        ia = ia[inb]
        if ia.size == 0:
            continue
        qx = cx[inb][:, None] + ox[None, :]
        qy = cy[inb][:, None] + oy[None, :]
        patch = _bilinear(cur, qx, qy)
        err = patch - tmpl[ia]
        b0 = np.sum(tgx[ia] * err, axis=1)
        b1 = np.sum(tgy[ia] * err, axis=1)
        dd0 = (h11[ia] * b0 - h01[ia] * b1) / det[ia]
        dd1 = (h00[ia] * b1 - h01[ia] * b0) / det[ia]
        d[valid[ia], 0] -= dd0
        d[valid[ia], 1] -= dd1
        conv = np.hypot(dd0, dd1) < eps
        status[valid[ia[conv]]] = KLT_CONVERGED
        active[ia[conv]] = False
    return d, status


def _fire_step_numpy(level, ref, cmap, old_idx, new_idx, new_val, stamp, stamp_id):
    level[old_idx] = 0.0
    level[new_idx] = new_val
    cand = np.unique(np.concatenate((old_idx, new_idx)))
    if cand.size == 0:
        return cand, cand.astype(np.int8)
    diff = level[cand] - ref[cand]
    n = np.floor(np.abs(diff) / cmap[cand]).astype(np.int64)
    mask = n > 0
    px = cand[mask]
    cnt = n[mask]
    pol = np.where(diff[mask] > 0, 1, -1).astype(np.int8)
    ref[px] += pol * cnt * cmap[px]
    return np.repeat(px, cnt), np.repeat(pol, cnt)


if HAVE_NUMBA:

    @njit(cache=True)
    def _klt_align_level_numba(prev, gx, gy, cur, pts, d0, half, max_iters, eps):
        n = pts.shape[0]
        d = d0.copy()
        status = np.full(n, KLT_MAXITER, dtype=np.int8)
        height, width = prev.shape
        side = 2 * half + 1
        npx = side * side
        m = 1e-6

        tmpl = np.empty(npx)
        tgx = np.empty(npx)
        tgy = np.empty(npx)

        for i in range(n):
            x = pts[i, 0]
            y = pts[i, 1]
            if not (x - half >= 0.0 and x + half <= width - 1 - m
                    and y - half >= 0.0 and y + half <= height - 1 - m):
                status[i] = KLT_OOB
                continue
            h00 = 0.0
            h01 = 0.0
            h11 = 0.0
            k = 0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    sx = x + dx
                    sy = y + dy
                    x0 = int(np.floor(sx))
                    y0 = int(np.floor(sy))
                    wx = sx - x0
                    wy = sy - y0
                    w00 = (1 - wy) * (1 - wx)
                    w01 = (1 - wy) * wx
                    w10 = wy * (1 - wx)
                    w11 = wy * wx
                    tmpl[k] = (w00 * prev[y0, x0] + w01 * prev[y0, x0 + 1]
                               + w10 * prev[y0 + 1, x0] + w11 * prev[y0 + 1, x0 + 1])
                    gxv = (w00 * gx[y0, x0] + w01 * gx[y0, x0 + 1]
                           + w10 * gx[y0 + 1, x0] + w11 * gx[y0 + 1, x0 + 1])
                    gyv = (w00 * gy[y0, x0] + w01 * gy[y0, x0 + 1]
                           + w10 * gy[y0 + 1, x0] + w11 * gy[y0 + 1, x0 + 1])
                    tgx[k] = gxv
                    tgy[k] = gyv
                    h00 += gxv * gxv
                    h01 += gxv * gyv
                    h11 += gyv * gyv
                    k += 1
            det = h00 * h11 - h01 * h01
            if det < _DET_EPS:
                status[i] = KLT_SINGULAR
                continue
            for _ in range(max_iters):
                cx = x + d[i, 0]
                cy = y + d[i, 1]
                if not (cx - half >= 0.0 and cx + half <= width - 1 - m
                        and cy - half >= 0.0 and cy + half <= height - 1 - m):
                    status[i] = KLT_OOB
                    break
                b0 = 0.0
                b1 = 0.0
                k = 0
                for dy in range(-half, half + 1):
                    for dx in range(-half, half + 1):
                        sx = cx + dx
                        sy = cy + dy
                        x0 = int(np.floor(sx))
                        y0 = int(np.floor(sy))
                        wx = sx - x0
                        wy = sy - y0
                        val = ((1 - wy) * ((1 - wx) * cur[y0, x0] + wx * cur[y0, x0 + 1])
                               + wy * ((1 - wx) * cur[y0 + 1, x0] + wx * cur[y0 + 1, x0 + 1]))
                        err = val - tmpl[k]
                        b0 += tgx[k] * err
                        b1 += tgy[k] * err
                        k += 1
                dd0 = (h11 * b0 - h01 * b1) / det
                dd1 = (h00 * b1 - h01 * b0) / det
                d[i, 0] -= dd0
                d[i, 1] -= dd1
                if np.hypot(dd0, dd1) < eps:
                    status[i] = KLT_CONVERGED
                    break
        return d, status

    @njit(cache=True)
    def _fire_step_numba(level, ref, cmap, old_idx, new_idx, new_val, stamp, stamp_id):
        for k in range(old_idx.size):
            level[old_idx[k]] = 0.0
        for k in range(new_idx.size):
            level[new_idx[k]] = new_val[k]

        cand = np.empty(old_idx.size + new_idx.size, dtype=np.int64)
        n_cand = 0
        for k in range(old_idx.size):
            px = old_idx[k]
            if stamp[px] != stamp_id:
                stamp[px] = stamp_id
                cand[n_cand] = px
                n_cand += 1
        for k in range(new_idx.size):
            px = new_idx[k]
            if stamp[px] != stamp_id:
                stamp[px] = stamp_id
                cand[n_cand] = px
                n_cand += 1
        cand = np.sort(cand[:n_cand])

        total = 0
        for k in range(n_cand):
            px = cand[k]
            total += int(np.floor(abs(level[px] - ref[px]) / cmap[px]))
        out_px = np.empty(total, dtype=np.int64)
        out_pol = np.empty(total, dtype=np.int8)
        j = 0
        for k in range(n_cand):
            px = cand[k]
            diff = level[px] - ref[px]
            cnt = int(np.floor(abs(diff) / cmap[px]))
            if cnt == 0:
                continue
            pol = 1 if diff > 0 else -1
            ref[px] += pol * cnt * cmap[px]
            for _ in range(cnt):
                out_px[j] = px
                out_pol[j] = pol
                j += 1
        return out_px, out_pol


if USE_NUMBA:
    klt_align_level = _klt_align_level_numba
    fire_step = _fire_step_numba
else:
    klt_align_level = _klt_align_level_numpy
    fire_step = _fire_step_numpy


def warmup() -> None:
    """Trigger JIT compilation so timed sections measure steady state."""
    img = np.zeros((32, 32))
    pts = np.array([[16.0, 16.0]])
    d0 = np.zeros((1, 2))
    klt_align_level(img, img, img, img, pts, d0, 3, 2, 0.1)
    level = np.zeros(16)
    ref = np.zeros(16)
    cmap = np.ones(16)
    stamp = np.zeros(16, dtype=np.int64)
    idx = np.array([1, 2], dtype=np.int64)
    fire_step(level, ref, cmap, idx, idx, np.ones(2), stamp, 1)
