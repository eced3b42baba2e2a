"""Rigid-body math and BEV/body/world coordinate transforms.

Conventions used throughout the package:

* Quaternions are Hamilton, scalar-first ``[w, x, y, z]``.
* A ``Pose`` maps points from its child frame into its parent frame,
  ``p_parent = R @ p_child + t``.
* Body frame: +x forward, +y left, +z up. Its origin sits on the ground plane,
  so parking-slot markings have ``z = 0`` in body and world frames.
* Camera frame: +z along the optical axis, +x right, +y down. Normalized image
  coordinates are ``(x / z, y / z)``.
* BEV image: pixel ``(0, 0)`` is the top-left corner, ``u`` grows to the right,
  ``v`` grows downwards; the top of the image points along body +x.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_SMALL_ANGLE = 1e-8


def skew(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def skew_batch(w):
    """Skew matrices for an ``(n, 3)`` array of vectors."""
    w = np.asarray(w, dtype=float)
    out = np.zeros(w.shape[:-1] + (3, 3))
    out[..., 0, 1] = -w[..., 2]
    out[..., 0, 2] = w[..., 1]
    out[..., 1, 0] = w[..., 2]
    out[..., 1, 2] = -w[..., 0]
    out[..., 2, 0] = -w[..., 1]
    out[..., 2, 1] = w[..., 0]
    return out


# --- quaternions -----------------------------------------------------------

def quat_identity():
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n < 1e-12:
        raise ValueError(f"cannot normalize quaternion {q}")
    q = q / n
    # canonical hemisphere keeps comparisons and serialization stable
    return -q if q[0] < 0 else q


def quat_mul(a, b):
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_rot(q):
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def rot_to_quat(R):
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def quat_exp(phi):
    """Quaternion of the rotation vector ``phi``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    if theta < _SMALL_ANGLE:
        q = np.array([1.0, 0.5 * phi[0], 0.5 * phi[1], 0.5 * phi[2]])
        return q / np.linalg.norm(q)
    half = 0.5 * theta
    return np.concatenate([[np.cos(half)], np.sin(half) * phi / theta])


def quat_log(q):
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    v = q[1:]
    n = np.linalg.norm(v)
    if n < _SMALL_ANGLE:
        return 2.0 * v / q[0]
    return 2.0 * np.arctan2(n, q[0]) * v / n


def yaw_quat(yaw):
    return np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)])


def yaw_of(R):
    return float(np.arctan2(R[1, 0], R[0, 0]))


# --- SO(3) -----------------------------------------------------------------

def so3_exp(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-5:
        return np.eye(3) + K + 0.5 * K @ K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta ** 2 * K @ K


def so3_log(R):
    return quat_log(rot_to_quat(R))


def right_jacobian(phi):
    """Right Jacobian of SO(3): ``Exp(phi + d) ~= Exp(phi) Exp(Jr(phi) d)``."""
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * K + K @ K / 6.0
    return (np.eye(3) - (1 - np.cos(theta)) / theta ** 2 * K
            + (theta - np.sin(theta)) / theta ** 3 * K @ K)


def right_jacobian_inv(phi):
    phi = np.asarray(phi, dtype=float)
    theta = np.linalg.norm(phi)
    K = skew(phi)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * K + K @ K / 12.0
    coef = 1.0 / theta ** 2 - (1 + np.cos(theta)) / (2 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * K + coef * K @ K


# --- Pose ------------------------------------------------------------------

def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Pose:
    """Rigid transform ``[R | t]``; rotation stored as a unit quaternion (w, x, y, z)."""

    q: np.ndarray = field(default_factory=quat_identity)
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(-1)
        t = np.asarray(self.t, dtype=float).reshape(-1)
        if q.shape != (4,) or t.shape != (3,):
            raise ValueError("Pose needs a 4-vector quaternion and a 3-vector translation")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise ValueError("Pose components must be finite")
        object.__setattr__(self, "q", _frozen(quat_normalize(q)))
        object.__setattr__(self, "t", _frozen(t))

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_rt(cls, R, t):
        return cls(rot_to_quat(R), t)

    @classmethod
    def from_yaw(cls, yaw, t=(0.0, 0.0, 0.0)):
        return cls(yaw_quat(yaw), t)

    @cached_property
    def R(self):
        return _frozen(quat_to_rot(self.q))

    @property
    def yaw(self):
        return yaw_of(self.R)

    def matrix(self):
        T = np.eye(4)
        T[:3, :3] = self.R
        T[:3, 3] = self.t
        return T

    def apply(self, p):
        """Transform points (``(3,)`` or ``(n, 3)``) from child to parent frame."""
        p = np.asarray(p, dtype=float)
        return p @ self.R.T + self.t

    def __matmul__(self, other):
        return compose(self, other)


def compose(a: Pose, b: Pose) -> Pose:
    """Transform applying ``b`` first, then ``a``."""
    return Pose(quat_mul(a.q, b.q), a.R @ b.t + a.t)


def inverse(p: Pose) -> Pose:
    qi = quat_conj(p.q)
    return Pose(qi, -(quat_to_rot(qi) @ p.t))


def body_to_world(p, pose: Pose):
    return pose.apply(p)


def world_to_body(p, pose: Pose):
    return inverse(pose).apply(p)


def rotation_angle(a: Pose, b: Pose) -> float:
    return float(np.linalg.norm(quat_log(quat_mul(quat_conj(a.q), b.q))))


# --- BEV calibration ---------------------------------------------------------

# camera axes expressed in the body frame: cam x -> body -y, cam y -> body -z, cam z -> body x
R_BODY_CAM = np.array([[0.0, 0.0, 1.0],
                       [-1.0, 0.0, 0.0],
                       [0.0, -1.0, 0.0]])


class BevBoundsError(ValueError):
    pass


@dataclass(frozen=True)
class BevCalibration:
    """Square BEV image geometry plus the front camera mounting.

    The BEV-to-body map is a 2D similarity: pixel ``(u, v)`` maps to
    ``x = (cv - v) * mpp``, ``y = (cu - u) * mpp`` where ``(cu, cv)`` is the pixel
    under the body origin.
    """

    image_size: int = 576
    coverage: float = 11.32
    center_px: tuple = (288.0, 288.0)
    cam_extrinsic: Pose = field(default_factory=lambda: Pose.from_rt(R_BODY_CAM, [1.5, 0.0, 1.0]))

    def __post_init__(self):
        if self.image_size <= 0 or not self.coverage > 0:
            raise ValueError("image_size and coverage must be positive")

    @property
    def meters_per_pixel(self) -> float:
        return self.coverage / self.image_size

    @property
    def half_size(self) -> float:
        return 0.5 * self.image_size

    def bev_to_body_matrix(self):
        """Homogeneous 3x3 matrix taking ``[u, v, 1]`` to ``[x, y, 1]``."""
        s = self.meters_per_pixel
        cu, cv = self.center_px
        return np.array([[0.0, -s, s * cv],
                         [-s, 0.0, s * cu],
                         [0.0, 0.0, 1.0]])

    def in_bounds(self, px) -> np.ndarray:
        px = np.asarray(px, dtype=float)
        return np.all((px >= 0.0) & (px <= self.image_size), axis=-1)


def bev_to_body(px, calib: BevCalibration, strict: bool = True):
    """Map BEV pixel(s) to metric body-frame (x, y).

    With ``strict=False`` the affine map is extrapolated beyond the image, which
    is how regressed corners of partially visible slots are handled.
    """
    px = np.asarray(px, dtype=float)
    if strict and not np.all(calib.in_bounds(px)):
        raise BevBoundsError(f"pixel outside the {calib.image_size}px BEV image: {px}")
    s = calib.meters_per_pixel
    cu, cv = calib.center_px
    out = np.empty(px.shape)
    out[..., 0] = (cv - px[..., 1]) * s
    out[..., 1] = (cu - px[..., 0]) * s
    return out


def body_to_bev(xy, calib: BevCalibration):
    xy = np.asarray(xy, dtype=float)[..., :2]
    s = calib.meters_per_pixel
    cu, cv = calib.center_px
    out = np.empty(xy.shape)
    out[..., 0] = cu - xy[..., 1] / s
    out[..., 1] = cv - xy[..., 0] / s
    return out


def bev_center_distance(px, calib: BevCalibration):
    """Pixel distance from the BEV image center, divided by half the image size."""
    px = np.asarray(px, dtype=float)
    c = np.array([calib.half_size, calib.half_size])
    return np.linalg.norm(px - c, axis=-1) / calib.half_size


def body_to_camera(p_body, calib: BevCalibration):
    return world_to_body(p_body, calib.cam_extrinsic)


def project_normalized(p_cam):
    """Pinhole projection onto the normalized image plane; returns (uv, depth)."""
    p_cam = np.asarray(p_cam, dtype=float)
    z = p_cam[..., 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = p_cam[..., :2] / z[..., None]
    return uv, z


def normalized_to_ground(uv, calib: BevCalibration):
    """Intersect the camera ray through ``uv`` with the body ground plane ``z = 0``."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    cam = calib.cam_extrinsic
    rays = np.column_stack([uv, np.ones(len(uv))]) @ cam.R.T
    scale = -cam.t[2] / rays[:, 2]
    pts = cam.t + scale[:, None] * rays
    return pts[:, :2]
