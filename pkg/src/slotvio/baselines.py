"""Loosely-coupled error-state EKF fusing IMU and wheel speed (dead reckoning).

Error state (15): ``(dp, dv, dtheta, dba, dbg)``; attitude errors are right
perturbations. Wheel speed measures the forward body-frame velocity; lateral
and vertical body velocity are softly pinned to zero (non-holonomic vehicle).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from slotvio.geom import Pose, quat_exp, quat_mul, quat_normalize, quat_to_rot, right_jacobian, skew, so3_exp

GRAVITY = np.array([0.0, 0.0, -9.81])
EP, EV, ET, EBA, EBG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)


@dataclass
class EkfState:
    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    P: np.ndarray = field(default_factory=lambda: np.diag([1e-6] * 3 + [1e-4] * 3 + [1e-6] * 3
                                                         + [1e-2] * 3 + [1e-5] * 3))
    t: float = 0.0

    def __post_init__(self):
        self.p = np.array(self.p, dtype=float)
        self.v = np.array(self.v, dtype=float)
        self.q = quat_normalize(self.q)
        self.b_a = np.array(self.b_a, dtype=float)
        self.b_w = np.array(self.b_w, dtype=float)
        self.P = np.array(self.P, dtype=float)

    @property
    def R(self):
        return quat_to_rot(self.q)

    def pose(self):
        return Pose(self.q, self.p)

    def copy(self):
        return EkfState(self.p.copy(), self.v.copy(), self.q.copy(), self.b_a.copy(), self.b_w.copy(),
                        self.P.copy(), self.t)


def ekf_predict(state: EkfState, gyro, accel, dt, noise) -> EkfState:
    """Strapdown propagation with one (specific-force) IMU sample held over ``dt``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    R = state.R
    f = np.asarray(accel, dtype=float) - state.b_a
    w = np.asarray(gyro, dtype=float) - state.b_w
    a = R @ f + GRAVITY
    phi = w * dt
    s = state.copy()
    s.p = state.p + state.v * dt + 0.5 * a * dt * dt
    s.v = state.v + a * dt
    s.q = quat_normalize(quat_mul(state.q, quat_exp(phi)))
    s.t = state.t + dt

    F = np.eye(15)
    F[EP, EV] = np.eye(3) * dt
    F[EV, ET] = -R @ skew(f) * dt
    F[EV, EBA] = -R * dt
    F[ET, ET] = so3_exp(phi).T
    F[ET, EBG] = -right_jacobian(phi) * dt
    Q = np.zeros((15, 15))
    Q[EV, EV] = noise.accel_noise_density ** 2 * dt * np.eye(3)
    Q[ET, ET] = noise.gyro_noise_density ** 2 * dt * np.eye(3)
    Q[EBA, EBA] = noise.accel_bias_walk ** 2 * dt * np.eye(3)
    Q[EBG, EBG] = noise.gyro_bias_walk ** 2 * dt * np.eye(3)
    P = F @ state.P @ F.T + Q
    s.P = 0.5 * (P + P.T)
    return s


def _inject(state: EkfState, dx):
    s = state.copy()
    s.p = state.p + dx[EP]
    s.v = state.v + dx[EV]
    s.q = quat_normalize(quat_mul(state.q, quat_exp(dx[ET])))
    s.b_a = state.b_a + dx[EBA]
    s.b_w = state.b_w + dx[EBG]
    return s


def ekf_update_wss(state: EkfState, wheel_speed: float, noise, nonholonomic=True) -> EkfState:
    """Forward-speed update, plus zero lateral/vertical body velocity pseudo-measurements."""
    R = state.R
    vb = R.T @ state.v
    rows = 3 if nonholonomic else 1
    z = np.zeros(rows)
    z[0] = wheel_speed
    h = vb[:rows]
    H = np.zeros((rows, 15))
    H[:, EV] = R.T[:rows]
    H[:, ET] = skew(vb)[:rows]
    Rm = np.diag([max(noise.wss_noise_std, 1e-4) ** 2] + [max(noise.nonholonomic_std, 1e-4) ** 2] * (rows - 1))
    y = z - h
    S = H @ state.P @ H.T + Rm
    K = np.linalg.solve(S, H @ state.P).T
    dx = K @ y
    s = _inject(state, dx)
    IKH = np.eye(15) - K @ H
    P = IKH @ state.P @ IKH.T + K @ Rm @ K.T
    s.P = 0.5 * (P + P.T)
    return s


@dataclass
class EkfResult:
    t: np.ndarray
    position: np.ndarray
    quaternion: np.ndarray
    failed: bool = False
    failure: str = ""


def run_ekf(log, init: EkfState, noise, output_times=None) -> EkfResult:
    """Filter a whole log. IMU intervals use the mean of their two end samples; the
    wheel speed at the interval end is fused after each prediction. Poses are
    reported at ``output_times`` (default: BEV frame times)."""
    imu, wss = log.imu, log.wss
    out_t = np.asarray([b.t for b in log.bev] if output_times is None else output_times, dtype=float)
    speed = np.interp(imu.t, wss.t, wss.speed)
    s = init.copy()
    s.t = float(imu.t[0])
    ts, ps, qs = [], [], []
    k = 0
    while k < len(out_t) and out_t[k] <= imu.t[0] + 1e-9:
        ts.append(out_t[k]); ps.append(s.p.copy()); qs.append(s.q.copy())
        k += 1
    for i in range(len(imu.t) - 1):
        dt = imu.t[i + 1] - imu.t[i]
        s = ekf_predict(s, 0.5 * (imu.gyro[i] + imu.gyro[i + 1]), 0.5 * (imu.accel[i] + imu.accel[i + 1]), dt, noise)
        s.t = float(imu.t[i + 1])
        s = ekf_update_wss(s, speed[i + 1], noise)
        while k < len(out_t) and out_t[k] <= s.t + 1e-9:
            ts.append(out_t[k]); ps.append(s.p.copy()); qs.append(s.q.copy())
            k += 1
    return EkfResult(np.array(ts), np.array(ps).reshape(-1, 3), np.array(qs).reshape(-1, 4))
