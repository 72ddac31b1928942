"""Corner detection and KLT tracking on time surfaces.

Temporal tracking runs pyramidal inverse-compositional alignment between
the previous and current left surfaces; stereo matching reuses the same
alignment left-to-right with an epipolar sanity check.  Corner detection
is a minimum-eigenvalue score over 3x3 Sobel gradients with masking of
already-tracked features.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import kernels
from .events import StereoEventFrame, TimeSurface


@dataclass
class TrackerConfig:
    max_features: int = 120
    pyramid_levels: int = 3
    patch_half_width: int = 10
    klt_max_iters: int = 30
    klt_eps: float = 0.03
    min_corner_quality: float = 0.01
    mask_radius: int = 12
    max_stereo_vertical_disparity: float = 2.0
    ransac: bool = True
    ransac_threshold: float = 1.0
    ransac_iters: int = 60
    fb_check: bool = True
    fb_tol: float = 0.5
    max_residual: float = 0.8  # patch rms residual over template std; <=0 disables

    def validate(self) -> None:
        for name in ("max_features", "pyramid_levels", "patch_half_width",
                     "klt_max_iters", "klt_eps", "min_corner_quality",
                     "mask_radius", "max_stereo_vertical_disparity"):
            if getattr(self, name) <= 0:
                raise ValueError(f"tracker config field {name} must be positive")
        if self.pyramid_levels < 1:
            raise ValueError("pyramid_levels must be >= 1")


@dataclass
class FeatureTrack:
    feature_id: int
    obs: dict = field(default_factory=dict)  # (frame_id, cam_id) -> (2,) pixel
    alive: bool = True

    def add(self, frame_id: int, cam_id: int, uv: np.ndarray) -> None:
        key = (frame_id, cam_id)
        if key in self.obs:
            raise ValueError(f"duplicate observation for feature "
                             f"{self.feature_id} at {key}")
        self.obs[key] = np.asarray(uv, dtype=float)

    def position(self, frame_id: int, cam_id: int):
        return self.obs.get((frame_id, cam_id))

    @property
    def track_length(self) -> int:
        return len({fid for fid, _ in self.obs})


class TsPyramid:
    """Image pyramid with per-level central-difference gradients."""

    def __init__(self, surface: TimeSurface, levels: int):
        img = np.ascontiguousarray(surface.values, dtype=np.float64)
        self.levels = []
        for _ in range(levels):
            gy, gx = np.gradient(img)
            self.levels.append((img, gx, gy))
            img = _decimate(img)

    def __len__(self) -> int:
        return len(self.levels)


def _decimate(img: np.ndarray) -> np.ndarray:
    # binomial [1 2 1]/4 blur, then take every other pixel
    k = np.array([0.25, 0.5, 0.25])
    sm = ndimage.convolve1d(img, k, axis=0, mode="nearest")
    sm = ndimage.convolve1d(sm, k, axis=1, mode="nearest")
    return np.ascontiguousarray(sm[::2, ::2])


def as_pyramid(surface, cfg: TrackerConfig) -> TsPyramid:
    if isinstance(surface, TsPyramid):
        return surface
    return TsPyramid(surface, cfg.pyramid_levels)


def pyramid_track(prev_pyr: TsPyramid, cur_pyr: TsPyramid, pts: np.ndarray,
                  cfg: TrackerConfig, init_d: np.ndarray | None = None):
    """Track points from the previous to the current pyramid.

    Returns (new positions, displacement, status) where status comes from
    the finest level; coarse-level failures fall through with their best
    displacement so far.  The patch half-width is the same at every level
    (features whose patch does not fit a coarse level skip that level).
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    n = pts.shape[0]
    if n == 0:
        z = np.zeros((0, 2))
        return z, z, np.zeros(0, dtype=np.int8)
    nl = len(prev_pyr)
    d = (np.zeros((n, 2)) if init_d is None
         else np.asarray(init_d, dtype=np.float64).reshape(-1, 2).copy())
    d /= 2.0 ** (nl - 1)
    status = np.zeros(n, dtype=np.int8)
    for lvl in range(nl - 1, -1, -1):
        prev_img, pgx, pgy = prev_pyr.levels[lvl]
        cur_img, _, _ = cur_pyr.levels[lvl]
        pts_l = pts / (2.0 ** lvl)
        d, status = kernels.klt_align_level(
            prev_img, pgx, pgy, cur_img, pts_l, d,
            cfg.patch_half_width, cfg.klt_max_iters, cfg.klt_eps)
        if lvl > 0:
            d = d * 2.0
    return pts + d, d, status


def _patch_residual(prev_img, cur_img, pts, new_pts, half):
    """Patch rms residual after alignment, normalized by template spread."""
    offs = np.arange(-half, half + 1, dtype=np.float64)
    oy, ox = np.meshgrid(offs, offs, indexing="ij")
    ox, oy = ox.ravel(), oy.ravel()
    t = kernels._bilinear(prev_img, pts[:, 0][:, None] + ox,
                          pts[:, 1][:, None] + oy)
    c = kernels._bilinear(cur_img, new_pts[:, 0][:, None] + ox,
                          new_pts[:, 1][:, None] + oy)
    rms = np.sqrt(np.mean((c - t) ** 2, axis=1))
    return rms / (np.std(t, axis=1) + 1e-9)


def pyramid_track_fb(prev_pyr: TsPyramid, cur_pyr: TsPyramid, pts: np.ndarray,
                     cfg: TrackerConfig, init_d: np.ndarray | None = None):
    """pyramid_track plus forward-backward and appearance checks.

    Matches whose reverse alignment does not return to the start within
    ``fb_tol`` px, or whose aligned patches still disagree grossly, are
    downgraded to non-converged; texture that aliases under the forward
    shift rarely survives both.
    """
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
    new_pts, d, status = pyramid_track(prev_pyr, cur_pyr, pts, cfg, init_d)
    if not cfg.fb_check:
        return new_pts, d, status
    ok = status == kernels.KLT_CONVERGED
    if not ok.any():
        return new_pts, d, status
    idx = np.nonzero(ok)[0]
    back_pts, _, back_status = pyramid_track(cur_pyr, prev_pyr, new_pts[idx],
                                             cfg, -d[idx])
    gap = np.linalg.norm(back_pts - pts[idx], axis=1)
    bad = (back_status != kernels.KLT_CONVERGED) | (gap > cfg.fb_tol)
    if cfg.max_residual > 0:
        res = _patch_residual(prev_pyr.levels[0][0], cur_pyr.levels[0][0],
                              pts[idx], new_pts[idx], cfg.patch_half_width)
        bad |= res > cfg.max_residual
    status = status.copy()
    status[idx[bad]] = kernels.KLT_MAXITER
    return new_pts, d, status


def detect_features(surface, existing, cfg: TrackerConfig) -> np.ndarray:
    """Strongest masked min-eigenvalue corners, at most the remaining budget."""
    cfg.validate()
    pyr = as_pyramid(surface, cfg)
    img = pyr.levels[0][0]
    existing = np.asarray(existing, dtype=float).reshape(-1, 2)
    budget = cfg.max_features - existing.shape[0]
    if budget <= 0:
        return np.zeros((0, 2))

    gx = ndimage.sobel(img, axis=1, mode="nearest")
    gy = ndimage.sobel(img, axis=0, mode="nearest")
    sxx = ndimage.uniform_filter(gx * gx, 3, mode="nearest")
    syy = ndimage.uniform_filter(gy * gy, 3, mode="nearest")
    sxy = ndimage.uniform_filter(gx * gy, 3, mode="nearest")
    response = 0.5 * ((sxx + syy) - np.sqrt((sxx - syy) ** 2 + 4 * sxy * sxy))

    margin = cfg.patch_half_width + 2
    response[:margin, :] = 0
    response[-margin:, :] = 0
    response[:, :margin] = 0
    response[:, -margin:] = 0

    peak = response.max()
    if peak <= 0:
        return np.zeros((0, 2))
    thresh = cfg.min_corner_quality * peak
    local_max = response == ndimage.maximum_filter(response, 3, mode="nearest")
    ys, xs = np.nonzero(local_max & (response >= thresh))
    order = np.argsort(-response[ys, xs], kind="stable")
    ys, xs = ys[order], xs[order]

    taken: list[np.ndarray] = []
    r2 = float(cfg.mask_radius) ** 2
    for x, y in zip(xs, ys):
        cand = np.array([float(x), float(y)])
        if existing.size and np.min(np.sum((existing - cand) ** 2, axis=1)) < r2:
            continue
        if taken and min(float(np.sum((q - cand) ** 2)) for q in taken) < r2:
            continue
        taken.append(cand)
        if len(taken) == budget:
            break
    return np.array(taken) if taken else np.zeros((0, 2))


def _normalize_pts(pts):
    mean = pts.mean(axis=0)
    centered = pts - mean
    scale = np.sqrt(2.0) / max(np.mean(np.linalg.norm(centered, axis=1)), 1e-12)
    T = np.array([[scale, 0, -scale * mean[0]],
                  [0, scale, -scale * mean[1]],
                  [0, 0, 1.0]])
    return centered * scale, T


def _eight_point(a, b):
    an, Ta = _normalize_pts(a)
    bn, Tb = _normalize_pts(b)
    m = np.column_stack([
        bn[:, 0] * an[:, 0], bn[:, 0] * an[:, 1], bn[:, 0],
        bn[:, 1] * an[:, 0], bn[:, 1] * an[:, 1], bn[:, 1],
        an[:, 0], an[:, 1], np.ones(len(an))])
    _, _, vt = np.linalg.svd(m)
    f = vt[-1].reshape(3, 3)
    u, s, vt2 = np.linalg.svd(f)
    f = u @ np.diag([s[0], s[1], 0.0]) @ vt2
    return Tb.T @ f @ Ta


def _sampson(f, a, b):
    ah = np.column_stack([a, np.ones(len(a))])
    bh = np.column_stack([b, np.ones(len(b))])
    fa = ah @ f.T
    ftb = bh @ f
    num = np.sum(bh * fa, axis=1) ** 2
    den = fa[:, 0] ** 2 + fa[:, 1] ** 2 + ftb[:, 0] ** 2 + ftb[:, 1] ** 2
    return num / np.maximum(den, 1e-18)


def fundamental_ransac(a: np.ndarray, b: np.ndarray, thresh: float,
                       iters: int, rng: np.random.Generator) -> np.ndarray:
    """Inlier mask of temporal matches under an epipolar model."""
    n = len(a)
    if n < 8:
        return np.ones(n, dtype=bool)
    # nothing to reject without parallax, and F is degenerate there
    if np.median(np.linalg.norm(a - b, axis=1)) < 0.5:
        return np.ones(n, dtype=bool)
    best = np.zeros(n, dtype=bool)
    t2 = thresh * thresh
    for _ in range(iters):
        idx = rng.choice(n, size=8, replace=False)
        try:
            f = _eight_point(a[idx], b[idx])
        except np.linalg.LinAlgError:
            continue
        inl = _sampson(f, a, b) < t2
        if inl.sum() > best.sum():
            best = inl
    if best.sum() >= 8:
        f = _eight_point(a[best], b[best])
        best = _sampson(f, a, b) < t2
    return best if best.any() else np.ones(n, dtype=bool)


def track_temporal(prev_left, cur_left, tracks: dict, cfg: TrackerConfig,
                   prev_frame_id: int, cur_frame_id: int,
                   rng: np.random.Generator | None = None) -> dict:
    """Carry alive tracks from the previous left surface to the current one.

    Non-converged or out-of-bounds alignments kill the track.  An optional
    epipolar RANSAC gate rejects inconsistent temporal matches.
    """
    prev_pyr = as_pyramid(prev_left, cfg)
    cur_pyr = as_pyramid(cur_left, cfg)
    ids, pts = [], []
    for tr in tracks.values():
        if not tr.alive:
            continue
        p = tr.position(prev_frame_id, 0)
        if p is None:
            tr.alive = False
            continue
        ids.append(tr.feature_id)
        pts.append(p)
    if not ids:
        return tracks
    pts = np.array(pts)
    new_pts, _, status = pyramid_track_fb(prev_pyr, cur_pyr, pts, cfg)
    ok = status == kernels.KLT_CONVERGED
    for i, fid in enumerate(ids):
        if ok[i]:
            tracks[fid].add(cur_frame_id, 0, new_pts[i])
        else:
            tracks[fid].alive = False
    if cfg.ransac and ok.sum() >= 8:
        if rng is None:
            rng = np.random.default_rng(0)
        sel = np.nonzero(ok)[0]
        inl = fundamental_ransac(pts[sel], new_pts[sel],
                                 cfg.ransac_threshold, cfg.ransac_iters, rng)
        for i, keep in zip(sel, inl):
            if not keep:
                fid = ids[i]
                tracks[fid].alive = False
                del tracks[fid].obs[(cur_frame_id, 0)]
    return tracks


def match_stereo(cur_left, cur_right, left_points: np.ndarray,
                 cfg: TrackerConfig):
    """Left-to-right alignment seeded at the left coordinates.

    Returns (indices into left_points, right positions) for pairs that
    converged and pass the rectified vertical-disparity check.
    """
    left_pyr = as_pyramid(cur_left, cfg)
    right_pyr = as_pyramid(cur_right, cfg)
    left_points = np.asarray(left_points, dtype=float).reshape(-1, 2)
    if left_points.shape[0] == 0:
        return np.zeros(0, dtype=int), np.zeros((0, 2))
    right_pts, _, status = pyramid_track_fb(left_pyr, right_pyr, left_points, cfg)
    dv = np.abs(right_pts[:, 1] - left_points[:, 1])
    ok = (status == kernels.KLT_CONVERGED) & (dv <= cfg.max_stereo_vertical_disparity)
    idx = np.nonzero(ok)[0]
    return idx, right_pts[idx]


def replenish(tracks: dict, frame: StereoEventFrame, cfg: TrackerConfig,
              next_feature_id: int,
              left_pyr: TsPyramid | None = None,
              right_pyr: TsPyramid | None = None) -> int:
    """Top up the track set with fresh detections and stereo-match everyone.

    Tracks must already carry their current-frame left observation (from
    track_temporal).  Returns the next unused feature id.
    """
    left_pyr = left_pyr or as_pyramid(frame.left, cfg)
    right_pyr = right_pyr or as_pyramid(frame.right, cfg)
    fid_cur = frame.frame_id

    alive_ids, alive_pts = [], []
    for tr in tracks.values():
        if not tr.alive:
            continue
        p = tr.position(fid_cur, 0)
        if p is not None:
            alive_ids.append(tr.feature_id)
            alive_pts.append(p)
    existing = np.array(alive_pts) if alive_pts else np.zeros((0, 2))

    new_pts = detect_features(left_pyr, existing, cfg)
    for p in new_pts:
        tr = FeatureTrack(feature_id=next_feature_id)
        tr.add(fid_cur, 0, p)
        tracks[next_feature_id] = tr
        alive_ids.append(next_feature_id)
        next_feature_id += 1
    all_pts = np.vstack([existing, new_pts]) if len(new_pts) else existing

    if len(all_pts):
        idx, right_pts = match_stereo(left_pyr, right_pyr, all_pts, cfg)
        for k, i in enumerate(idx):
            tracks[alive_ids[i]].add(fid_cur, 1, right_pts[k])
    return next_feature_id
