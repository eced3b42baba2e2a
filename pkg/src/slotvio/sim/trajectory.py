"""Ground-truth vehicle trajectories for the eight parking manoeuvre families.

Each family is a planar path made of clothoid pieces (curvature linear in arc
length), driven forward at constant speed. Heading is always tangent to the
path, so the vehicle never slips sideways.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from slotvio.geom import Pose, yaw_quat

KINDS = ("straight0", "left45", "right45", "left90", "right90",
         "left_parallel", "right_parallel", "round")

# Lot #1 lengths in meters.
DEFAULT_LENGTHS = {
    "straight0": 4.94,
    "left45": 5.95,
    "right45": 10.92,
    "left90": 11.29,
    "right90": 10.24,
    "left_parallel": 8.25,
    "right_parallel": 13.08,
    "round": 121.62,
}

SHORT_SPEED = 4.0 / 3.6
LONG_SPEED = 10.0 / 3.6


@dataclass(frozen=True)
class TrajectoryParams:
    length: float | None = None
    speed: float | None = None
    rate: float = 100.0

    def resolved(self, kind):
        length = DEFAULT_LENGTHS[kind] if self.length is None else float(self.length)
        if self.speed is None:
            speed = LONG_SPEED if kind == "round" else SHORT_SPEED
        else:
            speed = float(self.speed)
        return length, speed


def _segments(kind, L):
    """(length, curvature_start, curvature_end) pieces summing to ``L``."""
    if kind == "straight0":
        return [(L, 0.0, 0.0)]
    if kind in ("left45", "right45", "left90", "right90"):
        angle = np.pi / 4 if kind.endswith("45") else np.pi / 2
        sign = 1.0 if kind.startswith("left") else -1.0
        lead, ramp, tail = 0.3 * L, 0.3 * L, 0.1 * L
        k = sign * angle / ramp
        return [(lead, 0.0, 0.0), (ramp, 0.0, k), (ramp, k, 0.0), (tail, 0.0, 0.0)]
    if kind in ("left_parallel", "right_parallel"):
        angle = np.pi / 6
        sign = 1.0 if kind.startswith("left") else -1.0
        lead, ramp, tail = 0.3 * L, 0.15 * L, 0.1 * L
        k = sign * angle / ramp
        return [(lead, 0.0, 0.0), (ramp, 0.0, k), (ramp, k, 0.0),
                (ramp, 0.0, -k), (ramp, -k, 0.0), (tail, 0.0, 0.0)]
    if kind == "round":
        # rounded rectangle, long side twice the short side, four left corners
        ramp = min(5.0, L / 24.0)
        k = (np.pi / 2) / ramp
        straights = L - 8 * ramp
        b = straights / 6.0
        a = 2.0 * b
        corner = [(ramp, 0.0, k), (ramp, k, 0.0)]
        return [(a, 0.0, 0.0)] + corner + [(b, 0.0, 0.0)] + corner \
            + [(a, 0.0, 0.0)] + corner + [(b, 0.0, 0.0)] + corner
    raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {KINDS}")


class PathModel:
    """Arc-length parameterized planar clothoid path starting at the origin, heading +x."""

    def __init__(self, segments, resolution=0.005):
        self.segments = [(float(l), float(k0), float(k1)) for l, k0, k1 in segments if l > 0]
        self.starts = np.concatenate([[0.0], np.cumsum([s[0] for s in self.segments])])
        self.length = float(self.starts[-1])
        self._heading0 = [0.0]
        for l, k0, k1 in self.segments:
            self._heading0.append(self._heading0[-1] + 0.5 * (k0 + k1) * l)
        n = max(int(np.ceil(self.length / resolution)), 2)
        self._s = np.linspace(0.0, self.length, n + 1)
        th = self.heading(self._s)
        # Simpson on each grid cell using the midpoint heading
        mid = self.heading(0.5 * (self._s[1:] + self._s[:-1]))
        h = np.diff(self._s)
        dx = h / 6.0 * (np.cos(th[:-1]) + 4 * np.cos(mid) + np.cos(th[1:]))
        dy = h / 6.0 * (np.sin(th[:-1]) + 4 * np.sin(mid) + np.sin(th[1:]))
        self._x = np.concatenate([[0.0], np.cumsum(dx)])
        self._y = np.concatenate([[0.0], np.cumsum(dy)])

    def _locate(self, s):
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        idx = np.clip(np.searchsorted(self.starts, s, side="right") - 1, 0, len(self.segments) - 1)
        return s, idx

    def curvature(self, s):
        s, idx = self._locate(s)
        seg = np.array(self.segments)
        l, k0, k1 = seg[idx, 0], seg[idx, 1], seg[idx, 2]
        u = s - self.starts[idx]
        return k0 + (k1 - k0) * u / l

    def heading(self, s):
        s, idx = self._locate(s)
        seg = np.array(self.segments)
        l, k0, k1 = seg[idx, 0], seg[idx, 1], seg[idx, 2]
        u = s - self.starts[idx]
        return np.asarray(self._heading0)[idx] + k0 * u + 0.5 * (k1 - k0) * u * u / l

    def position(self, s):
        """Cubic Hermite interpolation of the integrated path, tangent-consistent."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        i = np.clip(np.searchsorted(self._s, s, side="right") - 1, 0, len(self._s) - 2)
        s0, s1 = self._s[i], self._s[i + 1]
        h = s1 - s0
        u = (s - s0) / h
        th0, th1 = self.heading(s0), self.heading(s1)
        h00 = 2 * u ** 3 - 3 * u ** 2 + 1
        h10 = u ** 3 - 2 * u ** 2 + u
        h01 = -2 * u ** 3 + 3 * u ** 2
        h11 = u ** 3 - u ** 2
        x = h00 * self._x[i] + h10 * h * np.cos(th0) + h01 * self._x[i + 1] + h11 * h * np.cos(th1)
        y = h00 * self._y[i] + h10 * h * np.sin(th0) + h01 * self._y[i + 1] + h11 * h * np.sin(th1)
        return np.stack([x, y], axis=-1)


@dataclass
class GroundTruthTrajectory:
    """Time-sampled ground truth. ``angular_velocity`` is in the body frame,
    ``velocity`` and ``acceleration`` in the world frame."""

    kind: str
    t: np.ndarray
    position: np.ndarray
    quaternion: np.ndarray
    velocity: np.ndarray
    angular_velocity: np.ndarray
    acceleration: np.ndarray
    length: float
    speed: float
    segments: list = field(default_factory=list)

    @property
    def duration(self):
        return float(self.t[-1] - self.t[0])

    def pose(self, i) -> Pose:
        return Pose(self.quaternion[i], self.position[i])

    def polyline_length(self):
        return float(np.sum(np.linalg.norm(np.diff(self.position, axis=0), axis=1)))

    def state_at(self, t):
        """Exact kinematic state at arbitrary times, evaluated from the path model."""
        return _kinematics(PathModel(self.segments), self.speed, np.atleast_1d(t))

    def pose_at(self, t) -> Pose:
        p, q, *_ = _kinematics(PathModel(self.segments), self.speed, np.atleast_1d(float(t)))
        return Pose(q[0], p[0])

    def to_dict(self):
        return {
            "kind": self.kind, "length": self.length, "speed": self.speed,
            "segments": [list(s) for s in self.segments],
            "t": self.t.tolist(), "position": self.position.tolist(),
            "quaternion": self.quaternion.tolist(), "velocity": self.velocity.tolist(),
            "angular_velocity": self.angular_velocity.tolist(),
            "acceleration": self.acceleration.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        arr = {k: np.asarray(d[k], dtype=float) for k in
               ("t", "position", "quaternion", "velocity", "angular_velocity", "acceleration")}
        return cls(kind=d["kind"], length=float(d["length"]), speed=float(d["speed"]),
                   segments=[tuple(s) for s in d["segments"]], **arr)


def _kinematics(path, speed, t):
    s = speed * t
    xy = path.position(s)
    th = path.heading(s)
    k = path.curvature(s)
    n = len(t)
    p = np.column_stack([xy, np.zeros(n)])
    q = np.array([yaw_quat(a) for a in th])
    v = speed * np.column_stack([np.cos(th), np.sin(th), np.zeros(n)])
    w = np.column_stack([np.zeros(n), np.zeros(n), k * speed])
    a = speed ** 2 * k[:, None] * np.column_stack([-np.sin(th), np.cos(th), np.zeros(n)])
    return p, q, v, w, a


def generate_trajectory(kind: str, params: TrajectoryParams | None = None) -> GroundTruthTrajectory:
    if kind not in KINDS:
        raise ValueError(f"unknown trajectory kind {kind!r}; expected one of {KINDS}")
    params = params or TrajectoryParams()
    length, speed = params.resolved(kind)
    if not (length > 0 and speed > 0 and params.rate > 0):
        raise ValueError("trajectory length, speed and rate must be positive")
    duration = length / speed
    dt = 1.0 / params.rate
    n = int(np.floor(duration / dt + 1e-9)) + 1
    if n < 2:
        raise ValueError(f"trajectory duration {duration:.4f}s is shorter than one sample")
    segs = _segments(kind, length)
    t = np.arange(n) * dt
    p, q, v, w, a = _kinematics(PathModel(segs), speed, t)
    return GroundTruthTrajectory(kind=kind, t=t, position=p, quaternion=q, velocity=v,
                                 angular_velocity=w, acceleration=a, length=length,
                                 speed=speed, segments=segs)
