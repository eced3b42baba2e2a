"""Multi-rate sensor simulation: IMU, wheel speed, front-camera features, BEV slot detections."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace

import numpy as np

from slotvio import polygon
from slotvio.geom import (BevCalibration, Pose, bev_center_distance, bev_to_body, body_to_bev,
                          compose, inverse, project_normalized, quat_to_rot)
from slotvio.pstrack import SlotObservation
from slotvio.sim.trajectory import GroundTruthTrajectory
from slotvio.sim.world import ParkingLotWorld

GRAVITY = 9.81
DETECTION_THRESHOLD = 0.5


@dataclass(frozen=True)
class NoiseModel:
    """Sensor noise. Densities are continuous-time (per sqrt(Hz)).

    Per-run constant biases and the wheel scale error are drawn from zero-mean
    normals with the given standard deviations. ``nonholonomic_std`` is only
    used by estimators (the simulated vehicle never slips sideways).
    """

    gyro_noise_density: float = 0.004
    accel_noise_density: float = 0.04
    gyro_bias_std: float = 0.003
    accel_bias_std: float = 0.05
    gyro_bias_walk: float = 2e-5
    accel_bias_walk: float = 2e-4
    wss_noise_std: float = 0.05
    wss_scale_error: float = 0.01
    nonholonomic_std: float = 0.05
    feature_pixel_noise_std: float = 1.5 / 460.0
    feature_dropout: float = 0.1
    ps_corner_noise_base_std: float = 0.03
    ps_corner_noise_distance_gain: float = 0.15
    ps_false_positive_rate: float = 0.02
    ps_miss_rate: float = 0.1
    ps_occupancy_flip_rate: float = 0.05
    ps_confidence_noise: float = 0.05

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ValueError(f"noise parameter {k} must be non-negative, got {v}")

    @classmethod
    def zero(cls):
        return cls(**{k: 0.0 for k in asdict(cls())})

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def scaled(self, **kw):
        return replace(self, **kw)


@dataclass(frozen=True)
class SensorRates:
    imu: float = 100.0
    wss: float = 100.0
    camera: float = 20.0
    bev: float = 10.0


@dataclass(frozen=True)
class CameraModel:
    hfov_deg: float = 90.0
    vfov_deg: float = 70.0
    min_range: float = 0.5
    max_range: float = 20.0

    def visible(self, uv, depth):
        tx = np.tan(np.radians(self.hfov_deg) / 2)
        ty = np.tan(np.radians(self.vfov_deg) / 2)
        with np.errstate(invalid="ignore"):
            return ((depth > self.min_range) & (depth < self.max_range)
                    & (np.abs(uv[..., 0]) <= tx) & (np.abs(uv[..., 1]) <= ty))


@dataclass
class ImuStream:
    t: np.ndarray
    gyro: np.ndarray
    accel: np.ndarray

    def slice(self, t0, t1):
        i0 = np.searchsorted(self.t, t0 - 1e-9)
        i1 = np.searchsorted(self.t, t1 + 1e-9)
        return ImuStream(self.t[i0:i1], self.gyro[i0:i1], self.accel[i0:i1])


@dataclass
class WssStream:
    t: np.ndarray
    speed: np.ndarray

    def slice(self, t0, t1):
        i0 = np.searchsorted(self.t, t0 - 1e-9)
        i1 = np.searchsorted(self.t, t1 + 1e-9)
        return WssStream(self.t[i0:i1], self.speed[i0:i1])


@dataclass
class Frame:
    t: float
    ids: np.ndarray  # landmark ids
    uv: np.ndarray   # (n, 2) normalized image coordinates


@dataclass
class BevFrame:
    t: float
    observations: list


@dataclass
class SensorLog:
    imu: ImuStream
    wss: WssStream
    frames: list
    bev: list
    rates: SensorRates = field(default_factory=SensorRates)
    # realized per-run disturbances, kept for diagnostics
    truth_gyro_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    truth_accel_bias: np.ndarray = field(default_factory=lambda: np.zeros(3))
    truth_wss_scale: float = 1.0


def gravity_compensated(accel_body, R_world_body):
    """Remove gravity from a specific-force reading; returns world-frame acceleration."""
    return np.asarray(accel_body) @ np.asarray(R_world_body).T - np.array([0.0, 0.0, GRAVITY])


def _rngs(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def _grid(duration, rate):
    n = int(np.floor(duration * rate + 1e-6)) + 1
    return np.round(np.arange(n) / rate, 9)


def simulate_ps_detections(world: ParkingLotWorld, pose: Pose, calib: BevCalibration,
                           noise: NoiseModel, seed=None, t: float = 0.0, rng=None):
    """Simulated BEV slot detector at one vehicle pose."""
    rng = rng if rng is not None else np.random.default_rng(seed)
    inv = inverse(pose)
    half = 0.5 * calib.coverage
    mpp = calib.meters_per_pixel
    out = []
    for slot in world.slots:
        body = inv.apply(slot.corners)[:, :2]
        c = body.mean(axis=0)
        if np.any(np.abs(c) >= half):
            continue
        if rng.random() < noise.ps_miss_rate:
            continue
        px = body_to_bev(body, calib)
        d = float(bev_center_distance(px.mean(axis=0), calib))
        std_m = noise.ps_corner_noise_base_std + noise.ps_corner_noise_distance_gain * d
        if std_m > 0:
            px = px + rng.normal(0.0, std_m / mpp, px.shape)
        occupied = slot.occupied
        if rng.random() < noise.ps_occupancy_flip_rate:
            occupied = not occupied
        conf = float(np.clip(0.97 - 0.15 * d + rng.normal(0, noise.ps_confidence_noise)
                             if noise.ps_confidence_noise > 0 else 0.97 - 0.15 * d, 0.0, 1.0))
        if conf < DETECTION_THRESHOLD:
            continue
        out.append(SlotObservation(px, bev_to_body(px, calib, strict=False), bool(occupied), conf,
                                   float(t), float(bev_center_distance(px.mean(axis=0), calib)),
                                   slot.id))
    if noise.ps_false_positive_rate > 0:
        for _ in range(rng.poisson(noise.ps_false_positive_rate)):
            c = rng.uniform(-half * 0.8, half * 0.8, 2)
            quad = polygon.rectangle(c, rng.uniform(-np.pi, np.pi), 2.5, 5.5)
            px = body_to_bev(quad, calib)
            conf = float(rng.uniform(0.3, 0.75))
            if conf < DETECTION_THRESHOLD:
                continue
            out.append(SlotObservation(px, quad, bool(rng.random() < 0.5), conf, float(t),
                                       float(bev_center_distance(px.mean(axis=0), calib)), -1))
    return out


def simulate_sensors(world: ParkingLotWorld, traj: GroundTruthTrajectory, noise: NoiseModel,
                     seed: int, calib: BevCalibration | None = None,
                     rates: SensorRates | None = None, camera: CameraModel | None = None) -> SensorLog:
    """Noisy multi-rate log. IMU accel is specific force (gravity included, +z up)."""
    calib = calib or BevCalibration()
    rates = rates or SensorRates()
    camera = camera or CameraModel()
    if traj.duration <= 0:
        raise ValueError("trajectory duration must be positive")
    r_bias, r_imu, r_wss, r_cam, r_bev = _rngs(seed, 5)
    T = traj.duration

    bg = r_bias.normal(0, noise.gyro_bias_std, 3) if noise.gyro_bias_std > 0 else np.zeros(3)
    ba = r_bias.normal(0, noise.accel_bias_std, 3) if noise.accel_bias_std > 0 else np.zeros(3)
    scale = 1.0 + (r_bias.normal(0, noise.wss_scale_error) if noise.wss_scale_error > 0 else 0.0)

    # IMU
    t_imu = _grid(T, rates.imu)
    p, q, v, w, a = traj.state_at(t_imu)
    dt = 1.0 / rates.imu
    n = len(t_imu)
    gyro = w.copy()
    accel = np.empty((n, 3))
    Rs = np.array([quat_to_rot(qq) for qq in q])
    accel[:] = np.einsum("nji,nj->ni", Rs, a + np.array([0.0, 0.0, GRAVITY]))
    walk_g = np.cumsum(r_imu.normal(0, noise.gyro_bias_walk * np.sqrt(dt), (n, 3)), axis=0) \
        if noise.gyro_bias_walk > 0 else 0.0
    walk_a = np.cumsum(r_imu.normal(0, noise.accel_bias_walk * np.sqrt(dt), (n, 3)), axis=0) \
        if noise.accel_bias_walk > 0 else 0.0
    gyro = gyro + bg + walk_g
    accel = accel + ba + walk_a
    if noise.gyro_noise_density > 0:
        gyro = gyro + r_imu.normal(0, noise.gyro_noise_density / np.sqrt(dt), (n, 3))
    if noise.accel_noise_density > 0:
        accel = accel + r_imu.normal(0, noise.accel_noise_density / np.sqrt(dt), (n, 3))

    # wheel speed (forward body speed)
    t_wss = _grid(T, rates.wss)
    _, qw, vw, _, _ = traj.state_at(t_wss)
    speed = np.array([quat_to_rot(qq)[:, 0] @ vv for qq, vv in zip(qw, vw)]) * scale
    if noise.wss_noise_std > 0:
        speed = speed + r_wss.normal(0, noise.wss_noise_std, len(t_wss))

    # front camera features
    frames = []
    t_cam = _grid(T, rates.camera)
    pc, qc, *_ = traj.state_at(t_cam)
    ids_all = np.arange(len(world.landmarks))
    for tk, pk, qk in zip(t_cam, pc, qc):
        cam_pose = compose(Pose(qk, pk), calib.cam_extrinsic)
        pts = inverse(cam_pose).apply(world.landmarks)
        uv, z = project_normalized(pts)
        vis = camera.visible(uv, z)
        if noise.feature_dropout > 0:
            vis &= r_cam.random(len(vis)) >= noise.feature_dropout
        uv = uv[vis]
        if noise.feature_pixel_noise_std > 0:
            uv = uv + r_cam.normal(0, noise.feature_pixel_noise_std, uv.shape)
        frames.append(Frame(float(tk), ids_all[vis], uv))

    # BEV slot detections
    bev = []
    t_bev = _grid(T, rates.bev)
    pb, qb, *_ = traj.state_at(t_bev)
    for tk, pk, qk in zip(t_bev, pb, qb):
        bev.append(BevFrame(float(tk), simulate_ps_detections(world, Pose(qk, pk), calib, noise,
                                                              t=float(tk), rng=r_bev)))

    return SensorLog(ImuStream(t_imu, gyro, accel), WssStream(t_wss, speed), frames, bev, rates,
                     bg, ba, float(scale))
