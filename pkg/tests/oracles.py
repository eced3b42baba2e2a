"""Independent oracles shared by the unit tests and the acceptance suite."""

import numpy as np

from slotvio import polygon
from slotvio.backend import PsFactor, SlidingWindow, information_to_factor, schur_marginalize
from slotvio.backend.factors import KeyframeState, inertial_residual, ps_residual, reprojection_residual
from slotvio.frontend import NATURAL
from slotvio.geom import (BevCalibration, Pose, body_to_bev, inverse, quat_exp, quat_mul, so3_exp, so3_log,
                          yaw_quat)
from slotvio.preint import ImuBias, bias_correct, integrate
from slotvio.pstrack import IdSwitchCounter, SlotObservation
from slotvio.sim.sensors import ImuStream, NoiseModel, WssStream

FD_STEP = 1e-6


def central_difference(f, x0, n, step=FD_STEP, plus=None):
    """Jacobian of ``f(plus(x0, d))`` at ``d = 0`` by central differences."""
    plus = plus or (lambda x, d: x + d)
    cols = []
    for k in range(n):
        d = np.zeros(n)
        d[k] = step
        cols.append((f(plus(x0, d)) - f(plus(x0, -d))) / (2 * step))
    return np.column_stack(cols)


def relative_error(J, J_fd):
    """Largest column-wise relative error; columns with negligible magnitude are compared absolutely."""
    J, J_fd = np.atleast_2d(J), np.atleast_2d(J_fd)
    err = np.linalg.norm(J - J_fd, axis=0)
    scale = np.maximum(np.linalg.norm(J_fd, axis=0), 1.0)
    return float(np.max(err / scale))


def random_state(rng, t=0.0, p_scale=5.0):
    q = quat_mul(yaw_quat(rng.uniform(-np.pi, np.pi)), quat_exp(rng.normal(0, 0.05, 3)))
    return KeyframeState(t, rng.normal(0, p_scale, 3), q, rng.normal(0, 2, 3), rng.normal(0, 0.05, 3),
                         rng.normal(0, 0.01, 3))


def _perturb_pose(x, d):
    """Perturb the 6-vector ``(dp, dtheta)`` of a keyframe."""
    return x.boxplus(np.concatenate([d, np.zeros(9)]))


def reprojection_errors(rng, cal=None):
    cal = cal or BevCalibration()
    cam = cal.cam_extrinsic
    a = random_state(rng)
    # landmark 3-15 m in front of the anchor camera
    uv_a = rng.uniform(-0.6, 0.6, 2)
    lam = 1.0 / rng.uniform(3, 15)
    o = a.boxplus(np.concatenate([rng.normal(0, 0.5, 3) * [1, 1, 0.1], rng.normal(0, 0.05, 3), np.zeros(9)]))
    uv_o = rng.uniform(-0.6, 0.6, 2)
    r, Ja, Jo, Jl, valid = reprojection_residual(lam, a, o, uv_a, uv_o, cam)
    assert valid
    fa = central_difference(lambda x: reprojection_residual(lam, x, o, uv_a, uv_o, cam)[0], a, 6, plus=_perturb_pose)
    fo = central_difference(lambda x: reprojection_residual(lam, a, x, uv_a, uv_o, cam)[0], o, 6, plus=_perturb_pose)
    fl = central_difference(lambda x: reprojection_residual(x[0], a, o, uv_a, uv_o, cam)[0], np.array([lam]), 1)
    return max(relative_error(Ja, fa), relative_error(Jo, fo), relative_error(Jl[:, None], fl))


def random_motion(rng, T=None):
    """Noisy-model preintegration of a short random smooth segment (covariance is non-trivial)."""
    T = T or rng.uniform(0.2, 0.6)
    t = np.round(np.arange(int(round(T * 100)) + 1) / 100, 12)
    w = rng.normal(0, [0.05, 0.05, 0.4]) + rng.normal(0, 0.05, (len(t), 3))
    a = rng.normal(0, [0.8, 0.8, 0.05]) + [0, 0, 9.81] + rng.normal(0, 0.1, (len(t), 3))
    u = rng.uniform(0.5, 3) + rng.normal(0, 0.05, len(t))
    bias = ImuBias(rng.normal(0, 0.05, 3), rng.normal(0, 0.005, 3))
    return integrate(ImuStream(t, w, a), WssStream(t, u), bias, NoiseModel())


def inertial_errors(rng):
    m = random_motion(rng)
    xi = random_state(rng)
    xj = random_state(rng, t=m.dt_total)
    xj.p = xi.p + xi.R @ m.delta_p + rng.normal(0, 0.1, 3)
    xj.b_a = xi.b_a + rng.normal(0, 0.01, 3)
    xj.b_w = xi.b_w + rng.normal(0, 0.001, 3)
    _, Ji, Jj, _ = inertial_residual(xi, xj, m)
    f = lambda x, other, first: inertial_residual(x, other, m, jacobians=False)[0] if first \
        else inertial_residual(other, x, m, jacobians=False)[0]
    fi = central_difference(lambda x: f(x, xj, True), xi, 15, plus=KeyframeState.boxplus)
    fj = central_difference(lambda x: f(x, xi, False), xj, 15, plus=KeyframeState.boxplus)
    return max(relative_error(Ji, fi), relative_error(Jj, fj))


def ps_errors(rng):
    x = random_state(rng)
    L = rng.uniform(-6, 6, 2)
    O = (x.R @ np.append(L, 0.0) + x.p)[:2] + rng.normal(0, 0.3, 2)
    _, J = ps_residual(x, L, O)
    fd = central_difference(lambda s: ps_residual(s, L, O)[0], x, 6, plus=_perturb_pose)
    return relative_error(J, fd)


def jacobian_suite(n=100, seed=0):
    """Worst relative Jacobian error per residual type over ``n`` random configurations each."""
    rng = np.random.default_rng(seed)
    return {"reprojection": max(reprojection_errors(rng) for _ in range(n)),
            "inertial": max(inertial_errors(rng) for _ in range(n)),
            "ps": max(ps_errors(rng) for _ in range(n))}


def batch_chain(n, prior_mean, prior_sigma, odo, odo_sigma, absolute=()):
    """Dense least squares for a scalar chain ``x_{k+1} - x_k = odo_k`` with a prior on ``x_0``
    and optional absolute measurements ``(k, value, sigma)``."""
    rows, rhs = [], []
    r = np.zeros(n)
    r[0] = 1 / prior_sigma
    rows.append(r)
    rhs.append(prior_mean / prior_sigma)
    for k, (z, s) in enumerate(zip(odo, odo_sigma)):
        r = np.zeros(n)
        r[k], r[k + 1] = -1 / s, 1 / s
        rows.append(r)
        rhs.append(z / s)
    for k, z, s in absolute:
        r = np.zeros(n)
        r[k] = 1 / s
        rows.append(r)
        rhs.append(z / s)
    A, b = np.array(rows), np.array(rhs)
    return np.linalg.solve(A.T @ A, A.T @ b)


def gt_keyframes(ds, every=6, start=0, ps=True):
    """Keyframe inputs at ground truth on every ``every``-th BEV frame:
    yields ``(state, link, features, ps_factors, anchors)``.

    Links are preintegrated with the default noise model (so covariances are
    well conditioned) even when the data itself is noise-free.
    """
    frames = {round(f.t, 6): f for f in ds.log.frames}
    traj, log = ds.trajectory, ds.log
    bias = ImuBias(log.truth_accel_bias, log.truth_gyro_bias)
    t_prev = None
    for uid, bev in enumerate(log.bev[start::every]):
        t = bev.t
        i = int(np.argmin(np.abs(traj.t - t)))
        assert abs(traj.t[i] - t) < 1e-9
        state = KeyframeState(t, traj.position[i], traj.quaternion[i], traj.velocity[i], bias.b_a, bias.b_w, uid=uid)
        link = None
        if t_prev is not None:
            link = integrate(log.imu.slice(t_prev, t), log.wss.slice(t_prev, t), bias, NoiseModel())
        t_prev = t
        f = frames[round(t, 6)]
        feats = {int(k): (uv, NATURAL) for k, uv in zip(f.ids, f.uv)}
        facs, anchors = [], {}
        if ps:
            for o in bev.observations:
                if o.gt_id is not None and o.gt_id >= 0:
                    anchors[o.gt_id] = np.asarray(ds.world.slot_by_id(o.gt_id).center, float)[:2]
                    facs.append(PsFactor(uid, o.gt_id, o.center_body, float(o.center_distance)))
        yield state, link, feats, facs, anchors


def gt_window(ds, n_kf=6, every=6, config=None, ps=True, start=0):
    """Sliding window of ``n_kf`` ground-truth keyframes (see ``gt_keyframes``)."""
    win = SlidingWindow(BevCalibration().cam_extrinsic, config)
    for k, (state, link, feats, facs, anchors) in enumerate(gt_keyframes(ds, every, start, ps)):
        if k == n_kf:
            break
        win.ps_anchors.update(anchors)
        win.add_keyframe(state, link, feats, facs)
    return win


def sliding_chain(prior_mean, prior_sigma, odo, odo_sigma, absolute=(), K=3):
    """Scalar chain solved with a K-state window; older states are Schur-marginalized into a prior.

    Returns the final window estimates (the last K states).
    """
    # factors are (state indices, row of coefficients, rhs): residual row @ x[idx] - rhs
    factors = [((0,), np.array([1 / prior_sigma]), prior_mean / prior_sigma)]
    factors += [((0,), np.array([1 / sa]), za / sa) for j, za, sa in absolute if j == 0]
    window = [0]
    for k, (z, s) in enumerate(zip(odo, odo_sigma)):
        window.append(k + 1)
        factors.append(((k, k + 1), np.array([-1 / s, 1 / s]), z / s))
        factors += [((j,), np.array([1 / sa]), za / sa) for j, za, sa in absolute if j == k + 1]
        if len(window) > K:
            old = window[0]
            touching = [f for f in factors if old in f[0]]
            others = [f for f in factors if old not in f[0]]
            local = sorted({i for f in touching for i in f[0]})
            H, b = _normal(touching, local)
            keep = [local.index(i) for i in local if i != old]
            Hs, bs = schur_marginalize(H, b, keep, [local.index(old)])
            J, r0, _ = information_to_factor(Hs, bs)
            kept = tuple(i for i in local if i != old)
            # 0.5|r0 + J x|^2 -> rows J x - (-r0)
            factors = others + [(kept, row, -r) for row, r in zip(J, r0)]
            window.pop(0)
    H, b = _normal(factors, window)
    return np.linalg.solve(H, -b)


def _normal(factors, idx):
    """``H``/``b`` of ``0.5 |A x - y|^2`` around ``x = 0`` over the listed state indices."""
    n = len(idx)
    H, b = np.zeros((n, n)), np.zeros(n)
    for ids, row, rhs in factors:
        a = np.zeros(n)
        for i, c in zip(ids, np.atleast_1d(row)):
            a[idx.index(i)] = c
        H += np.outer(a, a)
        b += -a * rhs
    return H, b


# --- preintegration ----------------------------------------------------------------

def streams(t, gyro, accel, speed):
    return ImuStream(t, np.asarray(gyro, float), np.asarray(accel, float)), WssStream(t, np.asarray(speed, float))


class SmoothSignal:
    """Random smooth vehicle-like motion: yaw-dominant body rates, specific force
    including gravity, planar accelerations up to ~2.5 m/s^2, positive wheel speed."""
    def __init__(self, rng):
        rate_std = np.array([0.02, 0.02, 0.4])
        acc_std = np.array([0.8, 0.8, 0.05])
        self.w0, self.w1 = rng.normal(0, rate_std), rng.normal(0, rate_std)
        self.a0, self.a1 = rng.normal(0, acc_std) + [0, 0, 9.81], rng.normal(0, acc_std)
        self.f, self.ph = rng.uniform(0.3, 1.5, 3), rng.uniform(0, 2 * np.pi, 3)
        self.u0, self.u1 = rng.uniform(0.5, 3.0), rng.uniform(0.0, 0.5)

    def sample(self, t):
        t = np.asarray(t)[:, None]
        s = np.sin(2 * np.pi * self.f * t + self.ph)
        return self.w0 + self.w1 * s, self.a0 + self.a1 * s, self.u0 + self.u1 * s[:, 0]


def dense_oracle(sig, T, rate=10_000):
    """Midpoint integration of the continuous signals at 10 kHz."""
    t = np.arange(int(round(T * rate)) + 1) / rate
    w, a, u = sig.sample(t)
    R, dv, dp, dpw = np.eye(3), np.zeros(3), np.zeros(3), np.zeros(3)
    dt = 1.0 / rate
    for i in range(len(t) - 1):
        R1 = R @ so3_exp(0.5 * (w[i] + w[i + 1]) * dt)
        am = 0.5 * (R @ a[i] + R1 @ a[i + 1])
        vm = 0.5 * (R[:, 0] * u[i] + R1[:, 0] * u[i + 1])
        dp = dp + dv * dt + 0.5 * am * dt * dt
        dv = dv + am * dt
        dpw = dpw + vm * dt
        R = R1
    return R, dv, dp, dpw


def _sampled(sig, T, rate=100):
    t = np.round(np.arange(int(round(T * rate)) + 1) / rate, 12)
    return t, streams(t, *sig.sample(t))


def preint_oracle_worst(n=20, seed=2024):
    """Largest deviation of 100 Hz preintegration from the 10 kHz oracle over ``n`` random segments."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        sig = SmoothSignal(rng)
        t, (imu, wss) = _sampled(sig, rng.uniform(0.3, 1.0))
        m = integrate(imu, wss)
        R, dv, dp, dpw = dense_oracle(sig, t[-1])
        errs = [np.linalg.norm(so3_log(R.T @ m.delta_R)), np.abs(dv - m.delta_v).max(),
                np.abs(dp - m.delta_p).max(), np.abs(dpw - m.delta_p_wss).max()]
        worst = max(worst, max(errs))
    return worst


def bias_correct_worst(n=10, seed=1, step=1e-3):
    """Largest gap between first-order bias correction and re-integration for bias changes of size ``step``."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        _, (imu, wss) = _sampled(SmoothSignal(rng), rng.uniform(0.3, 1.0))
        b0 = ImuBias(rng.normal(0, 0.05, 3), rng.normal(0, 0.005, 3))
        m = integrate(imu, wss, b0)
        d = rng.normal(size=6)
        d *= step / np.abs(d).max()
        b1 = ImuBias(b0.b_a + d[3:], b0.b_w + d[:3])
        c, r = bias_correct(m, b1), integrate(imu, wss, b1)
        errs = [np.linalg.norm(so3_log(c.delta_R.T @ r.delta_R))]
        errs += [np.abs(getattr(c, k) - getattr(r, k)).max() for k in ("delta_v", "delta_p", "delta_p_wss")]
        worst = max(worst, max(errs))
    return worst


# --- slot tracking -----------------------------------------------------------------

def slot_observation(world_quad, pose, t, occupied=False, gt_id=0):
    body = inverse(pose).apply(np.column_stack([world_quad, np.zeros(4)]))[:, :2]
    return SlotObservation(body_to_bev(body, BevCalibration()), body, occupied, 0.9, t, 0.1, gt_id)


def row_of_slots(n=6, spacing=3.0, y=3.5):
    return [polygon.rectangle((x, y), np.pi / 2, 2.5, 5.5) for x in np.arange(n) * spacing]


def drive(tracker, quads, drift_per_frame, frames=60, step=0.3):
    """Drive along +x past a row of slots; the pose handed to the tracker drifts sideways."""
    cal = BevCalibration()
    counter = IdSwitchCounter()
    for k in range(frames):
        t = 0.1 * k
        truth = Pose(t=[k * step - 4.0, 0.0, 0.0])
        believed = Pose(t=truth.t + [0.0, drift_per_frame * k, 0.0])
        dets = []
        for gid, q in enumerate(quads):
            c = q.mean(axis=0) - truth.t[:2]
            if np.all(np.abs(c) < 0.5 * cal.coverage):
                dets.append(slot_observation(q, truth, t, gt_id=gid))
        counter.update(tracker.step(dets, believed, t))
    return counter
