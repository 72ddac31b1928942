"""Rotation and manifold helpers shared by the whole package.

Conventions, fixed once here and used everywhere:

* Quaternions are Hamilton, stored as ``(w, x, y, z)``, unit norm.
* ``quat_to_rot`` satisfies ``quat_to_rot(quat_mult(a, b)) ==
  quat_to_rot(a) @ quat_to_rot(b)``.
* Rotations compose increments on the right: ``R boxplus r = R @ Exp(r)``
  and ``R1 boxminus R2 = Log(R2.T @ R1)``.  Plain vectors add/subtract.
* ``log_so3`` returns the principal branch; callers must keep increments
  below pi for invertibility.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix such that skew(a) @ b == cross(a, b)."""
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if n < _EPS:
        raise ValueError("cannot normalize near-zero quaternion")
    return q / n


def quat_mult(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(r: np.ndarray) -> np.ndarray:
    """Matrix to unit quaternion, w kept non-negative."""
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2
        q = np.array([0.25 * s,
                      (r[2, 1] - r[1, 2]) / s,
                      (r[0, 2] - r[2, 0]) / s,
                      (r[1, 0] - r[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(r[i, i] - r[j, j] - r[k, k] + 1.0, 0.0)) * 2
        q = np.empty(4)
        q[0] = (r[k, j] - r[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (r[j, i] + r[i, j]) / s
        q[1 + k] = (r[k, i] + r[i, k]) / s
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def exp_so3(r: np.ndarray) -> np.ndarray:
    """Rotation vector to rotation matrix (Rodrigues)."""
    angle = np.linalg.norm(r)
    if angle < 1e-9:
        k = skew(r)
        return np.eye(3) + k + 0.5 * (k @ k)
    axis = r / angle
    k = skew(axis)
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


def log_so3(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to rotation vector, principal branch (angle in [0, pi])."""
    cos_angle = np.clip((np.trace(r) - 1.0) * 0.5, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle < 1e-9:
        # first-order: vee of the skew part
        return 0.5 * np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    if angle > np.pi - 1e-6:
        # near pi the skew part degenerates; recover the axis from R + I
        m = 0.5 * (r + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(m), 0.0, None))
        # fix signs using the largest component
        i = int(np.argmax(axis))
        if axis[i] < _EPS:
            raise ValueError("degenerate rotation near pi")
        axis[(i + 1) % 3] = m[i, (i + 1) % 3] / axis[i] if axis[i] > _EPS else axis[(i + 1) % 3]
        axis[(i + 2) % 3] = m[i, (i + 2) % 3] / axis[i] if axis[i] > _EPS else axis[(i + 2) % 3]
        axis = axis / np.linalg.norm(axis)
        # choose the sign consistent with the skew part
        vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if np.dot(axis, vee) < 0:
            axis = -axis
        return axis * angle
    vee = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
    return vee * (angle / (2.0 * np.sin(angle)))


def quat_exp(r: np.ndarray) -> np.ndarray:
    """Rotation vector to quaternion; quat_to_rot(quat_exp(r)) == exp_so3(r)."""
    angle = np.linalg.norm(r)
    if angle < 1e-9:
        q = np.array([1.0, 0.5 * r[0], 0.5 * r[1], 0.5 * r[2]])
        return quat_normalize(q)
    half = 0.5 * angle
    axis = r / angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_boxplus(q: np.ndarray, delta: np.ndarray) -> np.ndarray:
    """Right-increment a quaternion by a rotation vector."""
    return quat_normalize(quat_mult(q, quat_exp(delta)))


def quat_boxminus(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    """Rotation vector d with quat_boxplus(q2, d) == q1 (up to sign)."""
    return log_so3(quat_to_rot(q2).T @ quat_to_rot(q1))


def rot_boxplus(r: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return r @ exp_so3(delta)


def rot_boxminus(r1: np.ndarray, r2: np.ndarray) -> np.ndarray:
    return log_so3(r2.T @ r1)


def random_quat(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    return q
