"""Quaternion and frame algebra.

Quaternions are scalar-first ``(q0, q1, q2, q3)`` and describe the attitude of
the body frame with respect to the inertial frame.  ``quaternion_to_dcm``
returns the matrix that maps body-frame vectors into the inertial frame, and
the kinematics are ``q_dot = 0.5 * omega_matrix(w) @ q`` with ``w`` expressed
in the body frame.  Axis 1 (index 0 of a 3-vector) is the vertical axis.
"""

from __future__ import annotations

import numpy as np


def axis_quaternion(axis: int, angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about coordinate axis ``axis`` (0, 1, 2)."""
    q = np.zeros(4)
    q[0] = np.cos(0.5 * angle)
    q[1 + axis] = np.sin(0.5 * angle)
    return q


def quaternion_multiply(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Hamilton product ``p * q`` (broadcasts over leading dimensions)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    p0, pv = p[..., :1], p[..., 1:]
    q0, qv = q[..., :1], q[..., 1:]
    scalar = p0 * q0 - np.sum(pv * qv, axis=-1, keepdims=True)
    vector = p0 * qv + q0 * pv + np.cross(pv, qv)
    return np.concatenate([scalar, vector], axis=-1)


def euler_to_quaternion(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic Z-Y-X (yaw, pitch, roll) rotation, angles in degrees.

    Roll turns about axis 1, pitch about axis 2 and yaw about axis 3, composed
    as ``q_yaw * q_pitch * q_roll``.
    """
    r, p, y = np.deg2rad([roll, pitch, yaw])
    q = quaternion_multiply(axis_quaternion(2, y), axis_quaternion(1, p))
    q = quaternion_multiply(q, axis_quaternion(0, r))
    return q / np.linalg.norm(q)


def quaternion_to_dcm(q: np.ndarray) -> np.ndarray:
    """Body-to-inertial rotation matrix of a (re-normalized) quaternion."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError("cannot build a rotation from a zero quaternion")
    return rotation_matrix(q / norm)


def rotation_matrix(q: np.ndarray) -> np.ndarray:
    """Homogeneous quadratic form of the rotation matrix, no normalization.

    Equals ``quaternion_to_dcm`` for unit quaternions and scales with
    ``|q|^2`` otherwise; this is the form the dynamics differentiate.
    Broadcasts over leading dimensions of ``q``.
    """
    q = np.asarray(q, dtype=float)
    q0, q1, q2, q3 = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    out = np.empty(q.shape[:-1] + (3, 3))
    out[..., 0, 0] = q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3
    out[..., 0, 1] = 2 * (q1 * q2 - q0 * q3)
    out[..., 0, 2] = 2 * (q1 * q3 + q0 * q2)
    out[..., 1, 0] = 2 * (q1 * q2 + q0 * q3)
    out[..., 1, 1] = q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3
    out[..., 1, 2] = 2 * (q2 * q3 - q0 * q1)
    out[..., 2, 0] = 2 * (q1 * q3 - q0 * q2)
    out[..., 2, 1] = 2 * (q2 * q3 + q0 * q1)
    out[..., 2, 2] = q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3
    return out


def omega_matrix(w: np.ndarray) -> np.ndarray:
    """4x4 skew matrix with ``q_dot = 0.5 * omega_matrix(w) @ q``."""
    w = np.asarray(w, dtype=float)
    w1, w2, w3 = w[..., 0], w[..., 1], w[..., 2]
    out = np.zeros(w.shape[:-1] + (4, 4))
    out[..., 0, 1], out[..., 0, 2], out[..., 0, 3] = -w1, -w2, -w3
    out[..., 1, 0], out[..., 1, 2], out[..., 1, 3] = w1, w3, -w2
    out[..., 2, 0], out[..., 2, 1], out[..., 2, 3] = w2, -w3, w1
    out[..., 3, 0], out[..., 3, 1], out[..., 3, 2] = w3, w2, -w1
    return out


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix, ``skew(a) @ b == cross(a, b)``."""
    v = np.asarray(v, dtype=float)
    v1, v2, v3 = v[..., 0], v[..., 1], v[..., 2]
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v3, v2
    out[..., 1, 0], out[..., 1, 2] = v3, -v1
    out[..., 2, 0], out[..., 2, 1] = -v2, v1
    return out


def cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Broadcasting cross product over the last axis (cheaper than np.cross for small batches)."""
    a1, a2, a3 = a[..., 0], a[..., 1], a[..., 2]
    b1, b2, b3 = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([a2 * b3 - a3 * b2, a3 * b1 - a1 * b3, a1 * b2 - a2 * b1], axis=-1)


def slerp(q_start: np.ndarray, q_end: np.ndarray, fractions: np.ndarray) -> np.ndarray:
    """Spherical interpolation, one quaternion per entry of ``fractions``."""
    a = np.asarray(q_start, dtype=float) / np.linalg.norm(q_start)
    b = np.asarray(q_end, dtype=float) / np.linalg.norm(q_end)
    dot = float(a @ b)
    if dot < 0.0:
        b, dot = -b, -dot
    s = np.asarray(fractions, dtype=float)[:, None]
    if dot > 1.0 - 1e-10:
        out = (1 - s) * a + s * b
    else:
        theta = np.arccos(dot)
        out = (np.sin((1 - s) * theta) * a + np.sin(s * theta) * b) / np.sin(theta)
    return out / np.linalg.norm(out, axis=1, keepdims=True)
