"""IMU + wheel-speed preintegration between keyframes.

Error state ordering (18): ``(dtheta, dv, dp, dbg, dba, dp_wss)``. Rotation
errors are right perturbations, ``dq_true = dq * Exp(dtheta)``. Integration is
the midpoint rule per IMU interval; the per-step transition ``F`` is the exact
linearization of that discrete recursion, so the accumulated bias Jacobians
match finite differences of the integrator itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from slotvio.geom import quat_exp, quat_mul, quat_to_rot, right_jacobian, rot_to_quat, skew, so3_exp

TH, V, P, BG, BA, PW = (slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15), slice(15, 18))
DIM = 18
REINTEGRATE_THRESHOLD = 0.1


@dataclass(frozen=True)
class ImuBias:
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        for k in ("b_a", "b_w"):
            v = np.asarray(getattr(self, k), dtype=float).reshape(3)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"bias {k} must be finite")
            object.__setattr__(self, k, v)

    def __sub__(self, other):
        return np.concatenate([self.b_w - other.b_w, self.b_a - other.b_a])


@dataclass(frozen=True)
class PreintegratedMotion:
    dt_total: float
    delta_q: np.ndarray
    delta_v: np.ndarray
    delta_p: np.ndarray
    delta_p_wss: np.ndarray
    covariance: np.ndarray   # (18, 18)
    jacobian: np.ndarray     # (18, 18) accumulated transition; bias columns are the bias Jacobians
    linearization_bias: ImuBias
    samples: tuple = ()      # (imu_t, gyro, accel, wss_speed_at_imu_t, noise) for re-integration

    @property
    def delta_R(self):
        return quat_to_rot(self.delta_q)

    def bias_jacobian(self, block):
        """d(block)/d(b_w, b_a) as a (3, 6) matrix; ``block`` is one of TH, V, P, PW."""
        return self.jacobian[block, 9:15]

    def corrected(self, bias: ImuBias):
        """First-order bias-corrected deltas ``(dq, dv, dp, dp_wss)``."""
        db = bias - self.linearization_bias
        if not np.any(db):
            return self.delta_q, self.delta_v, self.delta_p, self.delta_p_wss
        dq = quat_mul(self.delta_q, quat_exp(self.jacobian[TH, 9:15] @ db))
        return (dq, self.delta_v + self.jacobian[V, 9:15] @ db,
                self.delta_p + self.jacobian[P, 9:15] @ db,
                self.delta_p_wss + self.jacobian[PW, 9:15] @ db)

    def reintegrated(self, bias: ImuBias):
        t, gyro, accel, speed, noise = self.samples
        return _integrate_arrays(t, gyro, accel, speed, bias, noise)


def discrete_noise(noise, dt):
    """Covariance of the per-step noise vector ``(n_g, n_a, n_wheel, w_bg, w_ba)`` (15)."""
    q = np.zeros(15)
    q[0:3] = noise.gyro_noise_density ** 2 / dt
    q[3:6] = noise.accel_noise_density ** 2 / dt
    q[6] = noise.wss_noise_std ** 2
    q[7:9] = noise.nonholonomic_std ** 2
    q[9:12] = noise.gyro_bias_walk ** 2 * dt
    q[12:15] = noise.accel_bias_walk ** 2 * dt
    return np.diag(q)


def propagate_covariance(cov, F, G, Q):
    """One step of ``P <- F P F^T + G Q G^T``; symmetrized."""
    out = F @ cov @ F.T + G @ Q @ G.T
    return 0.5 * (out + out.T)


def _step(R0, dv, dp, dpw, w0, w1, a0, a1, u0, u1, bias, dt):
    """One midpoint step. Returns the new nominal state and (F, G)."""
    omega = 0.5 * (w0 + w1) - bias.b_w
    phi = omega * dt
    dR = so3_exp(phi)
    R1 = R0 @ dR
    c0, c1 = a0 - bias.b_a, a1 - bias.b_a
    a_mid = 0.5 * (R0 @ c0 + R1 @ c1)
    v_mid = 0.5 * (R0 @ u0 + R1 @ u1)
    dp_new = dp + dv * dt + 0.5 * a_mid * dt * dt
    dv_new = dv + a_mid * dt
    dpw_new = dpw + v_mid * dt

    Jr = right_jacobian(phi)
    I3 = np.eye(3)
    A_th = -0.5 * (R0 @ skew(c0) + R1 @ skew(c1) @ dR.T)
    A_bg = 0.5 * R1 @ skew(c1) @ Jr * dt
    A_ba = -0.5 * (R0 + R1)
    W_th = -0.5 * (R0 @ skew(u0) + R1 @ skew(u1) @ dR.T)
    W_bg = 0.5 * R1 @ skew(u1) @ Jr * dt

    F = np.eye(DIM)
    F[TH, TH] = dR.T
    F[TH, BG] = -Jr * dt
    F[V, TH] = A_th * dt
    F[V, BG] = A_bg * dt
    F[V, BA] = A_ba * dt
    F[P, TH] = 0.5 * A_th * dt * dt
    F[P, V] = I3 * dt
    F[P, BG] = 0.5 * A_bg * dt * dt
    F[P, BA] = 0.5 * A_ba * dt * dt
    F[PW, TH] = W_th * dt
    F[PW, BG] = W_bg * dt

    # measurement noise enters exactly like the biases it adds to
    G = np.zeros((DIM, 15))
    G[:, 0:3] = F[:, BG]
    G[:, 3:6] = F[:, BA]
    G[BG, 0:3] = G[BA, 3:6] = 0.0  # white noise does not persist in the bias states
    G[PW, 6:9] = -0.5 * (R0 + R1) * dt
    G[BG, 9:12] = I3
    G[BA, 12:15] = I3
    return R1, dv_new, dp_new, dpw_new, F, G


def _check_stream(t, name):
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError(f"{name} stream is empty")
    if not np.all(np.isfinite(t)) or np.any(np.diff(t) <= 0):
        raise ValueError(f"{name} timestamps must be finite and strictly increasing")
    return t


def _integrate_arrays(t, gyro, accel, speed, bias, noise):
    R = np.eye(3)
    dv, dp, dpw = np.zeros(3), np.zeros(3), np.zeros(3)
    cov = np.zeros((DIM, DIM))
    J = np.eye(DIM)
    zero_noise = noise is None or not np.any([noise.gyro_noise_density, noise.accel_noise_density,
                                              noise.wss_noise_std, noise.nonholonomic_std,
                                              noise.gyro_bias_walk, noise.accel_bias_walk])
    u = np.zeros((len(t), 3))
    u[:, 0] = speed
    for i in range(len(t) - 1):
        dt = t[i + 1] - t[i]
        R, dv, dp, dpw, F, G = _step(R, dv, dp, dpw, gyro[i], gyro[i + 1], accel[i], accel[i + 1],
                                     u[i], u[i + 1], bias, dt)
        J = F @ J
        if not zero_noise:
            cov = propagate_covariance(cov, F, G, discrete_noise(noise, dt))
    return PreintegratedMotion(float(t[-1] - t[0]), rot_to_quat(R), dv, dp, dpw, cov, J, bias,
                               (t, gyro, accel, speed, noise))


def integrate(imu, wss, bias: ImuBias | None = None, noise=None) -> PreintegratedMotion:
    """Preintegrate IMU samples (``.t, .gyro, .accel``) and wheel speeds (``.t, .speed``).

    Wheel speeds are linearly interpolated to the IMU timestamps, so both
    streams must cover the IMU interval.
    """
    bias = bias or ImuBias()
    t = _check_stream(imu.t, "IMU")
    if len(t) < 2:
        raise ValueError("preintegration needs at least two IMU samples")
    gyro = np.asarray(imu.gyro, dtype=float).reshape(-1, 3)
    accel = np.asarray(imu.accel, dtype=float).reshape(-1, 3)
    if not (np.all(np.isfinite(gyro)) and np.all(np.isfinite(accel))):
        raise ValueError("IMU samples contain non-finite values")
    tw = _check_stream(wss.t, "WSS")
    sp = np.asarray(wss.speed, dtype=float)
    if not np.all(np.isfinite(sp)):
        raise ValueError("WSS samples contain non-finite values")
    if tw[0] > t[0] + 1e-6 or tw[-1] < t[-1] - 1e-6:
        raise ValueError("WSS stream does not span the IMU interval")
    speed = np.interp(t, tw, sp)
    return _integrate_arrays(t, gyro, accel, speed, bias, noise)


def bias_correct(m: PreintegratedMotion, new_bias: ImuBias) -> PreintegratedMotion:
    """First-order bias update of the deltas; covariance and Jacobians are kept.

    Valid while ``|new_bias - m.linearization_bias|`` stays below
    ``REINTEGRATE_THRESHOLD``; callers re-integrate beyond that.
    """
    if not np.any(new_bias - m.linearization_bias):
        return m
    dq, dv, dp, dpw = m.corrected(new_bias)
    return replace(m, delta_q=dq, delta_v=dv, delta_p=dp, delta_p_wss=dpw, linearization_bias=new_bias)


def needs_reintegration(m: PreintegratedMotion, bias: ImuBias, threshold=REINTEGRATE_THRESHOLD):
    return float(np.max(np.abs(bias - m.linearization_bias))) > threshold


def compose_motion(a: PreintegratedMotion, b: PreintegratedMotion) -> PreintegratedMotion:
    """Concatenate consecutive intervals (``b`` starts where ``a`` ends)."""
    Ra = a.delta_R
    dq = quat_mul(a.delta_q, b.delta_q)
    dv = a.delta_v + Ra @ b.delta_v
    dp = a.delta_p + a.delta_v * b.dt_total + Ra @ b.delta_p
    dpw = a.delta_p_wss + Ra @ b.delta_p_wss
    # e_total = A e_a + B e_b, with e_b = Jb S e_a + n_b (S keeps only the bias errors)
    A = np.zeros((DIM, DIM))
    A[TH, TH] = b.delta_R.T
    A[V, TH] = -Ra @ skew(b.delta_v)
    A[V, V] = np.eye(3)
    A[P, TH] = -Ra @ skew(b.delta_p)
    A[P, V] = np.eye(3) * b.dt_total
    A[P, P] = np.eye(3)
    A[PW, TH] = -Ra @ skew(b.delta_p_wss)
    A[PW, PW] = np.eye(3)
    B = np.zeros((DIM, DIM))
    for blk in (TH, BG, BA):
        B[blk, blk] = np.eye(3)
    for blk in (V, P, PW):
        B[blk, blk] = Ra
    S = np.zeros((DIM, DIM))
    S[9:15, 9:15] = np.eye(6)
    Phi = A + B @ b.jacobian @ S
    J = Phi @ a.jacobian
    cov = Phi @ a.covariance @ Phi.T + B @ b.covariance @ B.T
    samples = ()
    if a.samples and b.samples:
        ta, ga, aa, sa, noise = a.samples
        tb, gb, ab, sb, _ = b.samples
        samples = (np.concatenate([ta, tb[1:]]), np.vstack([ga, gb[1:]]), np.vstack([aa, ab[1:]]),
                   np.concatenate([sa, sb[1:]]), noise)
    return PreintegratedMotion(a.dt_total + b.dt_total, dq, dv, dp, dpw, 0.5 * (cov + cov.T), J,
                               a.linearization_bias, samples)


__all__ = ["ImuBias", "PreintegratedMotion", "integrate", "bias_correct", "propagate_covariance",
           "discrete_noise", "compose_motion", "needs_reintegration"]
