"""Rigid-body transforms, planes, camera intrinsics and pinhole projection.

Conventions used throughout the package:

  Frames:
    - A ``RigidTransform`` T maps points from its source frame into its
      destination frame: ``x_dst = R @ x_src + t``.
    - ``compose(a, b)`` applies ``b`` first, then ``a``.
    - Camera frames are x-right, y-down, z-forward (optical axis = +z).

  Twists:
    - A twist is a plain 6-vector ``(rx, ry, rz, tx, ty, tz)``: rotation
      part first (radians), translation part second (meters).
    - ``exp_twist`` / ``log_transform`` use the SE(3) exponential with the
      left Jacobian coupling rotation and translation.

  Planes:
    - ``a*x + b*y + c*z + d = 0`` with unit normal ``[a, b, c]``.
    - Canonical sign: ``c >= 0``; if ``c == 0`` then ``b >= 0``; if both
      are zero then ``a >= 0``. Construction always canonicalizes, which
      makes plane equality testable.

All types are immutable values and every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Orthonormality drift past this triggers re-orthonormalization in compose.
_ORTHO_DRIFT = 1e-12


class AmbiguousRotationError(ValueError):
    """Rotation angle too close to pi for a unique logarithm."""


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    return v


def skew(v) -> np.ndarray:
    """Skew-symmetric (hat) matrix of a 3-vector."""
    x, y, z = _as_vec3(v)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def so3_exp(omega) -> np.ndarray:
    """Rodrigues' formula: rotation vector -> rotation matrix."""
    omega = _as_vec3(omega)
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-10:
        # second-order Taylor; error O(angle^4)
        return np.eye(3) + K + 0.5 * (K @ K)
    A = math.sin(angle) / angle
    B = (1.0 - math.cos(angle)) / (angle * angle)
    return np.eye(3) + A * K + B * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Principal rotation vector of a rotation matrix (angle < pi)."""
    trace = float(np.trace(R))
    cos_angle = min(1.0, max(-1.0, 0.5 * (trace - 1.0)))
    angle = math.acos(cos_angle)
    if angle >= math.pi - 1e-6:
        raise AmbiguousRotationError(
            f"rotation angle {angle:.9f} rad is within 1e-6 of pi; logarithm is ambiguous"
        )
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-10:
        return 0.5 * w
    return (angle / (2.0 * math.sin(angle))) * w


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-10:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    B = (1.0 - math.cos(angle)) / a2
    C = (angle - math.sin(angle)) / (a2 * angle)
    return np.eye(3) + B * K + C * (K @ K)


def _left_jacobian_inv(omega: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(omega))
    K = skew(omega)
    if angle < 1e-10:
        return np.eye(3) - 0.5 * K + (K @ K) / 12.0
    half = 0.5 * angle
    cot_term = 1.0 / (angle * angle) - (1.0 + math.cos(angle)) / (2.0 * angle * math.sin(angle))
    return np.eye(3) - 0.5 * K + cot_term * (K @ K)


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) pose: ``x_dst = rotation @ x_src + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6 or np.linalg.det(R) < 0.0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -(Rt @ self.translation))

    def apply(self, points) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        p = np.asarray(points, dtype=float)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    @staticmethod
    def from_matrix(M) -> "RigidTransform":
        M = np.asarray(M, dtype=float).reshape(4, 4)
        if np.max(np.abs(M[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise ValueError("expected homogeneous last row [0, 0, 0, 1]")
        return RigidTransform(M[:3, :3], M[:3, 3])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Composition a*b: the result applies ``b`` first, then ``a``."""
    R = a.rotation @ b.rotation
    t = a.rotation @ b.translation + a.translation
    if np.max(np.abs(R @ R.T - np.eye(3))) > _ORTHO_DRIFT:
        U, _, Vt = np.linalg.svd(R)
        R = U @ Vt
        if np.linalg.det(R) < 0.0:
            R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return RigidTransform(R, t)


def exp_twist(xi) -> RigidTransform:
    """SE(3) exponential of a twist ``(rx, ry, rz, tx, ty, tz)``."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    omega, rho = xi[:3], xi[3:]
    R = so3_exp(omega)
    t = _left_jacobian(omega) @ rho
    return RigidTransform(R, t)


def log_transform(T: RigidTransform) -> np.ndarray:
    """Principal twist of a transform; raises for rotation angle near pi."""
    omega = so3_log(T.rotation)
    rho = _left_jacobian_inv(omega) @ T.translation
    return np.concatenate([omega, rho])


@dataclass(frozen=True)
class Plane:
    """Plane ``a*x + b*y + c*z + d = 0`` in canonical sign form."""

    normal: np.ndarray
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = float(np.linalg.norm(n))
        if norm < 1e-12:
            raise ValueError("plane normal must be nonzero")
        n = n / norm
        d = float(self.offset) / norm
        # canonical sign: c >= 0, ties broken by b then a
        flip = False
        if n[2] < 0.0:
            flip = True
        elif n[2] == 0.0:
            if n[1] < 0.0:
                flip = True
            elif n[1] == 0.0 and n[0] < 0.0:
                flip = True
        if flip:
            n = -n
            d = -d
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", d)

    def distance(self, points) -> np.ndarray | float:
        """Signed point-plane distance for a 3-vector or (N, 3) array."""
        p = np.asarray(points, dtype=float)
        return p @ self.normal + self.offset

    def transformed(self, T: RigidTransform) -> "Plane":
        """The plane in the destination frame of ``T`` (points map by ``T``)."""
        n = T.rotation @ self.normal
        d = self.offset - float(n @ T.translation)
        return Plane(n, d)


def point_plane_distance(plane: Plane, x) -> float:
    """Signed distance ``a*x + b*y + c*z + d`` from a point to a plane."""
    return float(plane.distance(_as_vec3(x)))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole intrinsics; distortion-free images are assumed."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if not (0.0 < self.cx < self.width) or not (0.0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def project(k: CameraIntrinsics, t: RigidTransform, x_src) -> np.ndarray | None:
    """Project a 3D point through ``t`` into pixels.

    Returns the (u, v) pixel, or None when the camera-frame depth is
    <= 1e-6 (behind-camera outcome, not a fault).
    """
    xc = t.apply(_as_vec3(x_src))
    if xc[2] <= 1e-6:
        return None
    return np.array([k.fx * xc[0] / xc[2] + k.cx, k.fy * xc[1] / xc[2] + k.cy])


def project_points(k: CameraIntrinsics, t: RigidTransform, points):
    """Vectorized projection.

    Returns ``(uv, depth, valid)`` where ``uv`` is (N, 2), ``depth`` the
    camera-frame z, and ``valid`` marks depth > 1e-6. Pixels for invalid
    rows are NaN.
    """
    pc = t.apply(np.asarray(points, dtype=float).reshape(-1, 3))
    z = pc[:, 2]
    valid = z > 1e-6
    uv = np.full((pc.shape[0], 2), np.nan)
    zs = np.where(valid, z, 1.0)
    uv[:, 0] = np.where(valid, k.fx * pc[:, 0] / zs + k.cx, np.nan)
    uv[:, 1] = np.where(valid, k.fy * pc[:, 1] / zs + k.cy, np.nan)
    return uv, z, valid


def euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """(roll, pitch, yaw) of ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``."""
    pitch = math.asin(min(1.0, max(-1.0, -float(R[2, 0]))))
    if abs(R[2, 0]) > 1.0 - 1e-12:
        # gimbal lock: fold yaw into roll
        roll = math.atan2(-R[1, 2], R[1, 1])
        yaw = 0.0
    else:
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
    return roll, pitch, yaw
