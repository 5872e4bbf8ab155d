"""Skew operators, quaternions, Euler angles and direction-cosine matrices.

Conventions, locked here and relied on everywhere else:

* Quaternions are stored ``[q0, q1, q2, q3]`` with the scalar part first and
  composed with the Hamilton product.
* ``rotation_from_quat(q)`` returns the direction-cosine matrix ``T`` that
  maps inertial-frame components into body-frame components.  The transpose
  maps body components back to inertial.  Consequently
  ``rotation_from_quat(quat_multiply(a, b)) ==
  rotation_from_quat(b) @ rotation_from_quat(a)`` (checked in the tests).
* Euler angles are the aerospace yaw-pitch-roll set: starting from the
  reference frame, rotate about z by yaw, about the new y by pitch, about
  the newest x by roll.  ``EulerZYX`` stores ``(roll, pitch, yaw)``.
* ``quat_derivative`` expects the angular velocity in body-frame components;
  callers holding inertial components must rotate first.
"""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np

from .errors import GimbalLockNear

# Pitch this close to +/- pi/2 triggers the gimbal-lock warning.
GIMBAL_LOCK_MARGIN = 1e-4


class EulerZYX(NamedTuple):
    roll: float
    pitch: float
    yaw: float


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix S with S @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y],
                     [z, 0.0, -x],
                     [-y, x, 0.0]])


def quat_normalize(q) -> np.ndarray:
    """Rescale to unit norm; raises on a near-zero quaternion."""
    q = np.asarray(q, dtype=float)
    n = np.sqrt(float(q @ q))
    if n < 1e-12:
        raise ValueError("cannot normalize a near-zero quaternion")
    return q / n


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product a (x) b."""
    a0, a1, a2, a3 = np.asarray(a, dtype=float)
    b0, b1, b2, b3 = np.asarray(b, dtype=float)
    return np.array([
        a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3,
        a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
        a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1,
        a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0,
    ])


def quat_conjugate(q) -> np.ndarray:
    """Conjugate (inverse for unit quaternions)."""
    q0, q1, q2, q3 = np.asarray(q, dtype=float)
    return np.array([q0, -q1, -q2, -q3])


def quat_derivative(q, omega_body) -> np.ndarray:
    """Quaternion rate 0.5 * Omega4(p, q, r) @ q for body-frame rates.

    Equivalent to the Hamilton product 0.5 * q (x) (0, omega_body); the
    result is always orthogonal to q, so the norm is preserved to first
    order.
    """
    q0, q1, q2, q3 = np.asarray(q, dtype=float)
    p, r_, s_ = np.asarray(omega_body, dtype=float)
    return 0.5 * np.array([
        -p * q1 - r_ * q2 - s_ * q3,
        p * q0 + s_ * q2 - r_ * q3,
        r_ * q0 - s_ * q1 + p * q3,
        s_ * q0 + r_ * q1 - p * q2,
    ])


def quat_from_euler(e) -> np.ndarray:
    """Unit quaternion for a (roll, pitch, yaw) triple."""
    roll, pitch, yaw = (float(x) for x in e)
    cf, sf = np.cos(roll / 2), np.sin(roll / 2)
    ct, st = np.cos(pitch / 2), np.sin(pitch / 2)
    cp, sp = np.cos(yaw / 2), np.sin(yaw / 2)
    return np.array([
        cp * ct * cf + sp * st * sf,
        cp * ct * sf - sp * st * cf,
        cp * st * cf + sp * ct * sf,
        sp * ct * cf - cp * st * sf,
    ])


def euler_from_quat(q) -> EulerZYX:
    """Recover (roll, pitch, yaw); warns and clamps near pitch = +/- pi/2."""
    q0, q1, q2, q3 = np.asarray(q, dtype=float)
    sin_pitch = -2.0 * (q1 * q3 - q0 * q2)
    if abs(sin_pitch) > np.cos(GIMBAL_LOCK_MARGIN):
        # soft flag: clamp and keep the caller usable
        warnings.warn(GimbalLockNear(
            f"pitch within {GIMBAL_LOCK_MARGIN:g} rad of +/-pi/2"))
    roll = np.arctan2(2.0 * (q2 * q3 + q0 * q1),
                      q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3)
    pitch = np.arcsin(np.clip(sin_pitch, -1.0, 1.0))
    yaw = np.arctan2(2.0 * (q1 * q2 + q0 * q3),
                     q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3)
    return EulerZYX(float(roll), float(pitch), float(yaw))


def rotation_from_quat(q) -> np.ndarray:
    """Direction-cosine matrix mapping inertial components to body components."""
    q0, q1, q2, q3 = np.asarray(q, dtype=float)
    return np.array([
        [q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3,
         2.0 * (q1 * q2 + q0 * q3),
         2.0 * (q1 * q3 - q0 * q2)],
        [2.0 * (q1 * q2 - q0 * q3),
         q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3,
         2.0 * (q2 * q3 + q0 * q1)],
        [2.0 * (q1 * q3 + q0 * q2),
         2.0 * (q2 * q3 - q0 * q1),
         q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3],
    ])


def rotations_from_quats(quats: np.ndarray) -> np.ndarray:
    """Vectorized ``rotation_from_quat`` for an (N, 4) array -> (N, 3, 3)."""
    q = np.asarray(quats, dtype=float)
    q0, q1, q2, q3 = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    T = np.empty((q.shape[0], 3, 3))
    T[:, 0, 0] = q0 * q0 + q1 * q1 - q2 * q2 - q3 * q3
    T[:, 0, 1] = 2.0 * (q1 * q2 + q0 * q3)
    T[:, 0, 2] = 2.0 * (q1 * q3 - q0 * q2)
    T[:, 1, 0] = 2.0 * (q1 * q2 - q0 * q3)
    T[:, 1, 1] = q0 * q0 - q1 * q1 + q2 * q2 - q3 * q3
    T[:, 1, 2] = 2.0 * (q2 * q3 + q0 * q1)
    T[:, 2, 0] = 2.0 * (q1 * q3 + q0 * q2)
    T[:, 2, 1] = 2.0 * (q2 * q3 - q0 * q1)
    T[:, 2, 2] = q0 * q0 - q1 * q1 - q2 * q2 + q3 * q3
    return T


def quat_derivatives_batch(quats: np.ndarray,
                           omega_body: np.ndarray) -> np.ndarray:
    """Vectorized ``quat_derivative`` for (N, 4) quaternions, (N, 3) rates."""
    q0, q1, q2, q3 = (quats[:, k] for k in range(4))
    p, r_, s_ = (omega_body[:, k] for k in range(3))
    out = np.empty_like(quats)
    out[:, 0] = -p * q1 - r_ * q2 - s_ * q3
    out[:, 1] = p * q0 + s_ * q2 - r_ * q3
    out[:, 2] = r_ * q0 - s_ * q1 + p * q3
    out[:, 3] = s_ * q0 + r_ * q1 - p * q2
    out *= 0.5
    return out


def euler_rotation_matrix(e) -> np.ndarray:
    """Frame-transformation matrix R1(roll) @ R2(pitch) @ R3(yaw).

    Maps components in the reference frame to components in the rotated
    frame, matching ``rotation_from_quat(quat_from_euler(e))``.
    """
    roll, pitch, yaw = (float(x) for x in e)
    cf, sf = np.cos(roll), np.sin(roll)
    ct, st = np.cos(pitch), np.sin(pitch)
    cp, sp = np.cos(yaw), np.sin(yaw)
    r1 = np.array([[1.0, 0.0, 0.0], [0.0, cf, sf], [0.0, -sf, cf]])
    r2 = np.array([[ct, 0.0, -st], [0.0, 1.0, 0.0], [st, 0.0, ct]])
    r3 = np.array([[cp, sp, 0.0], [-sp, cp, 0.0], [0.0, 0.0, 1.0]])
    return r1 @ r2 @ r3


def euler_from_matrix(T) -> EulerZYX:
    """Extract (roll, pitch, yaw) from a frame-transformation matrix.

    Inverse of ``euler_rotation_matrix``; warns and clamps at gimbal lock
    exactly like ``euler_from_quat``.
    """
    T = np.asarray(T, dtype=float)
    sin_pitch = -T[0, 2]
    if abs(sin_pitch) > np.cos(GIMBAL_LOCK_MARGIN):
        warnings.warn(GimbalLockNear(
            f"pitch within {GIMBAL_LOCK_MARGIN:g} rad of +/-pi/2"))
    roll = np.arctan2(T[1, 2], T[2, 2])
    pitch = np.arcsin(np.clip(sin_pitch, -1.0, 1.0))
    yaw = np.arctan2(T[0, 1], T[0, 0])
    return EulerZYX(float(roll), float(pitch), float(yaw))
