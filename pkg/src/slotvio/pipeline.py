"""End-to-end odometry: frontend -> preintegration -> slot tracking -> sliding-window backend."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from slotvio.backend import (GRAVITY, BackendConfig, KeyframeState, LinearPrior, PsFactor, SlidingWindow,
                             SolverError, marginalize_oldest, optimize_window)
from slotvio.baselines import EkfState, run_ekf
from slotvio.frontend import PS_CORNER, Frontend, FrontendConfig, select_keyframe
from slotvio.geom import BevCalibration, Pose, quat_mul, quat_to_rot, rot_to_quat, yaw_quat
from slotvio.preint import integrate
from slotvio.pstrack import HardMatchTracker, IdSwitchCounter, SortSlotTracker, TrackerConfig
from slotvio.sim.sensors import NoiseModel

METHODS = ("full", "vins_style", "frontend_ps_only", "backend_ps_only", "ekf", "hard_match_association")

# (ps_frontend, ps_backend, association)
_PRESETS = {
    "full": (True, True, "sort"),
    "vins_style": (False, False, "sort"),
    "frontend_ps_only": (True, False, "sort"),
    "backend_ps_only": (False, True, "sort"),
    "hard_match_association": (True, True, "hard"),
    "ekf": (False, False, "sort"),
}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    method: str = "full"
    seed: int = 0
    dataset: str | None = None
    out: str | None = None
    backend: BackendConfig = field(default_factory=BackendConfig)
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    estimator_noise: NoiseModel = field(default_factory=NoiseModel)
    association: str = "sort"
    hard_th1: float = 0.5
    hard_th2: float = 2.0
    # initial-state prior: the world frame is the first pose; biases start at zero
    init_pose_std: float = 1e-3
    init_velocity_std: float = 0.1
    # accumulating error injected into the pose handed to the slot tracker (association stress test):
    # metres of xy offset and radians of heading offset per metre travelled, direction drawn from the seed
    tracker_drift: float = 0.0
    tracker_yaw_drift: float = 0.0
    tracker_drift_walk: float = 0.0  # xy random walk, metres per sqrt(metre travelled)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if self.association not in ("sort", "hard"):
            raise ConfigError(f"unknown association {self.association!r}")
        if min(self.tracker_drift, self.tracker_yaw_drift, self.tracker_drift_walk) < 0:
            raise ConfigError("tracker drift rates must be non-negative")

    @classmethod
    def for_method(cls, method, ps_frontend=None, ps_backend=None, association=None, **kw):
        """Preset flags for ``method``; explicit overrides must not contradict an ablation preset."""
        cfg = cls(method=method, **kw)
        fe, be, assoc = _PRESETS[method]
        for name, preset, given in (("ps_frontend", fe, ps_frontend), ("ps_backend", be, ps_backend),
                                    ("association", assoc, association)):
            if given is not None and given != preset and method not in ("full",):
                raise ConfigError(f"--{name.replace('_', '-')} {given} contradicts method {method}")
        fe = fe if ps_frontend is None else ps_frontend
        be = be if ps_backend is None else ps_backend
        assoc = assoc if association is None else association
        cfg.backend = replace(cfg.backend, enable_ps_frontend=fe, enable_ps_backend=be)
        cfg.association = assoc
        return cfg

    def to_dict(self):
        d = asdict(self)
        d.pop("out", None)
        return d


@dataclass
class OdometryResult:
    t: np.ndarray
    position: np.ndarray
    quaternion: np.ndarray
    solve_reports: list = field(default_factory=list)
    track_history: list = field(default_factory=list)
    id_switches: int = 0
    duplicates: int = 0
    n_tracks: int = 0
    n_keyframes: int = 0
    failed: bool = False
    failure: str = ""
    runtime: float = 0.0


def _init_state(traj, log):
    q0 = traj.quaternion[0]
    v0 = quat_to_rot(q0) @ np.array([float(np.interp(traj.t[0], log.wss.t, log.wss.speed)), 0.0, 0.0])
    return traj.position[0].copy(), q0.copy(), v0


class SlotVio:
    """Sequential estimator over a sensor log (one owner, one pass)."""

    def __init__(self, cfg: RunConfig, calib: BevCalibration | None = None):
        self.cfg = cfg
        self.calib = calib or BevCalibration()
        bcfg = cfg.backend
        self.use_ps_frontend = bcfg.enable_ps_frontend
        self.use_ps_backend = bcfg.enable_ps_backend
        self.frontend = Frontend(cfg.frontend, self.calib)
        self.window = SlidingWindow(self.calib.cam_extrinsic, bcfg)
        if cfg.association == "hard":
            self.tracker = HardMatchTracker(cfg.hard_th1, cfg.hard_th2, cfg.tracker.min_hits)
        else:
            self.tracker = SortSlotTracker(cfg.tracker)
        self.idsw = IdSwitchCounter()
        self._uid = 0
        rng = np.random.default_rng([cfg.seed, 0xD21F7])
        ang = rng.uniform(-np.pi, np.pi)
        self._drift_dir = np.array([np.cos(ang), np.sin(ang), 0.0])
        self._drift_sign = rng.choice([-1.0, 1.0])
        self._drift_rng = rng
        self._walk = np.zeros(3)
        self._travel = 0.0
        self._last_p = None

    def _predict(self, log, t):
        """Propagate the newest keyframe to time ``t`` with preintegrated IMU/WSS."""
        last = self.window.keyframes[-1]
        m = integrate(log.imu.slice(last.t, t), log.wss.slice(last.t, t), last.bias, self.cfg.estimator_noise)
        Ri = last.R
        dt = m.dt_total
        R = Ri @ m.delta_R
        v = last.v + GRAVITY * dt + Ri @ m.delta_v
        p = last.p + last.v * dt + 0.5 * GRAVITY * dt * dt + Ri @ m.delta_p
        state = KeyframeState(t, p, rot_to_quat(R), v, last.b_a, last.b_w)
        return state, m

    def run(self, log, traj) -> OdometryResult:
        t_start = time.perf_counter()
        cfg = self.cfg
        fcfg = cfg.frontend
        bev_by_t = {round(b.t, 6): b for b in log.bev}
        ts, ps, qs, reports = [], [], [], []
        last_kf_obs = None
        failed, failure = False, ""
        p0, q0, v0 = _init_state(traj, log)
        try:
            for frame in log.frames:
                t = frame.t
                bev = bev_by_t.get(round(t, 6))
                annotated = []
                anchors = {}
                pred = None
                if self.window.keyframes and bev is not None:
                    pred = self._predict(log, t)
                if bev is not None:
                    pose = pred[0].pose() if pred is not None else KeyframeState(t, p0, q0).pose()
                    pose = self._drifted(pose)
                    anchors = {k: v.copy() for k, v in self.tracker.anchors().items()}
                    annotated = self.tracker.step(bev.observations, pose, t)
                    self.idsw.update(annotated)
                self.frontend.ingest_frame(frame.ids, frame.uv, t,
                                           annotated if (self.use_ps_frontend and bev is not None) else None)
                if not self.window.keyframes:
                    state = KeyframeState(t, p0, q0, v0, uid=self._next_uid())
                    self._add_keyframe(state, None, annotated, anchors)
                    self.window.prior = LinearPrior.diagonal(state, self._init_sigmas())
                    last_kf_obs = self._natural_obs()
                    ts.append(t), ps.append(state.p.copy()), qs.append(state.q.copy())
                    continue
                if bev is None:
                    continue
                dec = select_keyframe(last_kf_obs, self._natural_obs(), fcfg) if last_kf_obs else None
                if dec is not None and not dec.is_keyframe and t - self.window.keyframes[-1].t < fcfg.max_keyframe_interval:
                    continue
                state, link = pred
                state.uid = self._next_uid()
                self._add_keyframe(state, link, annotated, anchors)
                if len(self.window) > cfg.backend.window_size:
                    marginalize_oldest(self.window, cfg.backend)
                _, rep = optimize_window(self.window, cfg.backend)
                newest = self.window.keyframes[-1]
                reports.append({"t": t, "iterations": rep.iterations, "initial_cost": rep.initial_cost,
                                "final_cost": rep.final_cost, "terms": rep.terms, "reason": rep.reason,
                                "converged": rep.converged})
                ts.append(t), ps.append(newest.p.copy()), qs.append(newest.q.copy())
                last_kf_obs = self._natural_obs()
        except (SolverError, np.linalg.LinAlgError, ValueError) as e:
            failed, failure = True, f"{type(e).__name__}: {e}"
        n_tracks = len(getattr(self.tracker, "tracks", getattr(self.tracker, "registry", {})))
        return OdometryResult(np.array(ts), np.array(ps).reshape(-1, 3), np.array(qs).reshape(-1, 4), reports,
                              self.tracker.history, self.idsw.switches, self.idsw.duplicates, n_tracks,
                              self._uid, failed, failure, time.perf_counter() - t_start)

    def _init_sigmas(self):
        c, n = self.cfg, self.cfg.estimator_noise
        return np.r_[[c.init_pose_std] * 6, [c.init_velocity_std] * 3,
                     [max(n.accel_bias_std, 1e-6)] * 3, [max(n.gyro_bias_std, 1e-6)] * 3]

    def _drifted(self, pose):
        c = self.cfg
        if c.tracker_drift == 0.0 and c.tracker_yaw_drift == 0.0 and c.tracker_drift_walk == 0.0:
            return pose
        if self._last_p is not None:
            ds = float(np.linalg.norm(pose.t - self._last_p))
            self._travel += ds
            self._walk[:2] += c.tracker_drift_walk * np.sqrt(ds) * self._drift_rng.standard_normal(2)
        self._last_p = pose.t.copy()
        s = self._travel
        dq = yaw_quat(self._drift_sign * c.tracker_yaw_drift * s)
        return Pose(quat_mul(dq, pose.q), pose.t + c.tracker_drift * s * self._drift_dir + self._walk)

    def _natural_obs(self):
        # slot-corner positions are re-detected every BEV frame; their jitter would read as parallax
        tracks = self.frontend.tracks
        return {k: v for k, v in self.frontend.current.items() if tracks[k].source != PS_CORNER}

    def _next_uid(self):
        u = self._uid
        self._uid += 1
        return u

    def _add_keyframe(self, state, link, annotated, anchors):
        feats = {}
        for fid, uv in self.frontend.current.items():
            src = self.frontend.tracks[fid].source
            if src == PS_CORNER and not self.use_ps_frontend:
                continue
            feats[fid] = (uv, src)
        facs = []
        if self.use_ps_backend:
            facs = [PsFactor(state.uid, int(tid), obs.center_body.copy(), float(obs.center_distance))
                    for obs, tid in annotated if tid is not None and tid in anchors]
            self.window.ps_anchors = anchors
        self.window.add_keyframe(state, link, feats, facs)


def run_ekf_method(cfg: RunConfig, log, traj) -> OdometryResult:
    t_start = time.perf_counter()
    p0, q0, v0 = _init_state(traj, log)
    res = run_ekf(log, EkfState(p0, v0, q0), cfg.estimator_noise)
    return OdometryResult(res.t, res.position, res.quaternion, failed=res.failed, failure=res.failure,
                          runtime=time.perf_counter() - t_start)


def estimate(cfg: RunConfig, log, traj, calib: BevCalibration | None = None) -> OdometryResult:
    if cfg.method == "ekf":
        return run_ekf_method(cfg, log, traj)
    return SlotVio(cfg, calib).run(log, traj)
