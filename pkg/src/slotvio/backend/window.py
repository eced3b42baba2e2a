"""Sliding window of keyframes and its Levenberg-Marquardt solver.

Variables are the keyframe states (15-dim tangent each, see ``factors``) and
one inverse depth per landmark. The total cost is

    0.5 * (|prior|^2 + sum |inertial|^2 + sum |reprojection|^2)
      + 0.5 * ps_weight_scale * sum rho(alpha * |e_ps|^2 / sigma_ps^2)

with ``rho`` the Cauchy kernel. Landmark inverse depths are eliminated with a
Schur complement at every linear solve (their block of the normal equations
is diagonal).
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from slotvio.backend.factors import (GRAVITY, STATE_DIM, KeyframeState, inertial_residual, ps_batch,
                                     ps_weight, reprojection_batch, robust_cost, sqrt_information)
from slotvio.backend.marginalization import LinearPrior, information_to_factor, schur_marginalize
from slotvio.geom import Pose, compose, inverse


class SolverError(RuntimeError):
    def __init__(self, message, factor=None):
        super().__init__(message)
        self.factor = factor


@dataclass
class BackendConfig:
    window_size: int = 10
    reprojection_std: float = 1.5 / 460.0  # W_r = I / std^2
    reprojection_kernel: str = "cauchy"    # on the whitened residual, scale 1
    min_triangulation_angle: float = 1.0   # degrees between the extreme rays
    triangulation_gate: float = 5.0        # max whitened reprojection error of a new landmark
    # slot corners re-projected from BEV detections scatter ~25 px rms in the front camera,
    # against 1.5 px for tracked features: (1.5 / 25)^2
    ps_corner_info_scale: float = 0.004
    ps_std: float = 0.1
    robust_kernel: str = "cauchy"
    cauchy_scale: float = 1.0
    ps_weight_scale: float = 1.0
    max_iterations: int = 8
    lambda_init: float = 1e-4
    lambda_up: float = 10.0
    lambda_down: float = 0.3
    lambda_max: float = 1e8
    rel_tol: float = 1e-3  # stop once an accepted step gains < 0.1% of the cost
    step_tol: float = 1e-10
    enable_ps_frontend: bool = True
    enable_ps_backend: bool = True
    enable_reweighting: bool = True
    enable_marginalization: bool = True
    fix_gauge: bool = True
    min_depth: float = 0.3
    max_depth: float = 100.0

    def __post_init__(self):
        for k in ("reprojection_std", "ps_std", "cauchy_scale", "lambda_init", "lambda_up",
                  "rel_tol", "step_tol", "ps_corner_info_scale"):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if not 0 < self.lambda_down < 1:
            raise ValueError("lambda_down must lie in (0, 1)")
        if self.window_size < 2:
            raise ValueError("window_size must be at least 2")
        for k in ("robust_kernel", "reprojection_kernel"):
            if getattr(self, k) not in ("cauchy", "trivial"):
                raise ValueError(f"{k} must be 'cauchy' or 'trivial'")
        if self.ps_weight_scale < 0 or self.max_iterations < 1:
            raise ValueError("ps_weight_scale must be >= 0 and max_iterations >= 1")


@dataclass
class Landmark:
    feature_id: int
    source: str
    anchor_uid: int
    obs: dict = field(default_factory=dict)  # keyframe uid -> normalized uv
    inv_depth: float | None = None
    tried: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def uv_anchor(self):
        return self.obs[self.anchor_uid]


@dataclass(frozen=True)
class PsFactor:
    uid: int
    slot_id: int
    center_body: np.ndarray  # (2,)
    distance: float          # normalized BEV center distance


@dataclass
class SolveReport:
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    terms: dict = field(default_factory=dict)
    converged: bool = False
    reason: str = ""
    trace: list = field(default_factory=list)
    n_deactivated: int = 0
    regularized: bool = False

    def to_dict(self):
        return asdict(self)


class SlidingWindow:
    def __init__(self, cam_extrinsic: Pose, config: BackendConfig | None = None):
        self.config = config or BackendConfig()
        self.cam = cam_extrinsic
        self.keyframes: list[KeyframeState] = []
        self.links: list = []
        self.landmarks: dict[int, Landmark] = {}
        self.ps_factors: dict[int, list] = {}
        self.ps_anchors: dict[int, np.ndarray] = {}
        self.prior: LinearPrior | None = None
        self._sqrt_info: dict[int, tuple] = {}

    def __len__(self):
        return len(self.keyframes)

    @property
    def uids(self):
        return [k.uid for k in self.keyframes]

    def index(self, uid):
        return self.uids.index(uid)

    def add_keyframe(self, state: KeyframeState, link=None, features=None, ps_factors=()):
        """Append a keyframe. ``features`` maps feature id -> (uv, source)."""
        if self.keyframes:
            if state.t <= self.keyframes[-1].t:
                raise ValueError("keyframe timestamps must be strictly increasing")
            if link is None:
                raise ValueError("a preintegrated link is required after the first keyframe")
            self.links.append(link)
        self.keyframes.append(state)
        for fid, (uv, source) in (features or {}).items():
            lm = self.landmarks.get(fid)
            if lm is None:
                lm = self.landmarks[fid] = Landmark(fid, source, state.uid)
            lm.obs[state.uid] = np.asarray(uv, dtype=float)
        self.ps_factors[state.uid] = list(ps_factors)

    def link_sqrt_info(self, link):
        key = id(link)
        if key not in self._sqrt_info:
            self._sqrt_info[key] = (link,) + sqrt_information(link.covariance)
        return self._sqrt_info[key][1:]

    # --- landmark initialization -----------------------------------------------

    def camera_pose(self, state: KeyframeState):
        return compose(state.pose(), self.cam)

    def triangulate(self):
        """Initialize inverse depths of landmarks seen from at least two keyframes."""
        idx = {u: i for i, u in enumerate(self.uids)}
        cfg = self.config
        poses = {k.uid: self.camera_pose(k) for k in self.keyframes}
        cos_min = np.cos(np.radians(cfg.min_triangulation_angle))
        for lm in self.landmarks.values():
            if lm.inv_depth is not None or len(lm.obs) < 2:
                continue
            key = (lm.anchor_uid, tuple(lm.obs))
            if lm.tried == key:
                continue  # same views as the last failed attempt
            lm.tried = key
            anchor = self.keyframes[idx[lm.anchor_uid]]
            Ta = self.camera_pose(anchor)
            if lm.source == "ps_corner":
                depth = _ground_depth(lm.uv_anchor, self.cam)
                if not cfg.min_depth < depth < cfg.max_depth:
                    continue
                X = Ta.apply(np.array([*lm.uv_anchor, 1.0]) * depth)
            else:
                A = np.zeros((3, 3))
                b = np.zeros(3)
                rays = []
                for uid, uv in lm.obs.items():
                    Tc = poses[uid]
                    d = Tc.R @ np.array([uv[0], uv[1], 1.0])
                    d /= np.linalg.norm(d)
                    rays.append(d)
                    P = np.eye(3) - np.outer(d, d)
                    A += P
                    b += P @ Tc.t
                rays = np.array(rays)
                if np.min(rays @ rays.T) > cos_min:
                    continue  # too little parallax for a usable depth
                if np.linalg.cond(A) > 1e8:
                    continue
                X = np.linalg.solve(A, b)
                depth = inverse(Ta).apply(X)[2]
                if not cfg.min_depth < depth < cfg.max_depth:
                    continue
            if self._reprojection_gate(X, lm, poses):
                lm.inv_depth = 1.0 / depth

    def _reprojection_gate(self, X, lm, poses):
        gate = self.config.triangulation_gate * self.config.reprojection_std
        for uid, uv in lm.obs.items():
            T = poses[uid]
            Pc = T.R.T @ (X - T.t)
            if Pc[2] <= 1e-6 or np.linalg.norm(Pc[:2] / Pc[2] - uv) > gate:
                return False
        return True

    # --- problem assembly ----------------------------------------------------------

    def _problem(self, landmark_filter=None, factor_uids=None, include_prior=True, link_ids=None):
        return _Problem(self, landmark_filter, factor_uids, include_prior, link_ids)


def _ground_depth(uv, cam: Pose):
    """Depth along the camera ray through ``uv`` to the body ground plane (slot corners lie on it)."""
    ray = cam.R @ np.array([uv[0], uv[1], 1.0])
    if ray[2] >= -1e-9:
        return -1.0
    return float(-cam.t[2] / ray[2])


class _Problem:
    """Static factor tables for one window; evaluates cost and linearization for trial states."""

    def __init__(self, win: SlidingWindow, landmark_filter=None, factor_uids=None, include_prior=True,
                 link_ids=None):
        cfg = win.config
        self.win = win
        self.cfg = cfg
        uids = win.uids
        self.K = len(uids)
        idx = {u: i for i, u in enumerate(uids)}
        self.idx = idx

        # landmarks with a depth and at least one non-anchor observation
        lms = [lm for lm in win.landmarks.values() if lm.inv_depth is not None and len(lm.obs) >= 2
               and (landmark_filter is None or landmark_filter(lm))]
        self.landmarks = lms
        a_i, o_i, l_i, uva, uvo, w = [], [], [], [], [], []
        base_w = 1.0 / cfg.reprojection_std
        for j, lm in enumerate(lms):
            ws = base_w * (np.sqrt(cfg.ps_corner_info_scale) if lm.source == "ps_corner" else 1.0)
            for uid, uv in lm.obs.items():
                if uid == lm.anchor_uid:
                    continue
                a_i.append(idx[lm.anchor_uid])
                o_i.append(idx[uid])
                l_i.append(j)
                uva.append(lm.uv_anchor)
                uvo.append(uv)
                w.append(ws)
        self.rp_anchor = np.array(a_i, dtype=int)
        self.rp_obs = np.array(o_i, dtype=int)
        self.rp_lm = np.array(l_i, dtype=int)
        self.rp_uva = np.array(uva, dtype=float).reshape(-1, 2)
        self.rp_uvo = np.array(uvo, dtype=float).reshape(-1, 2)
        self.rp_w = np.array(w, dtype=float)
        self.rp_mask = np.ones(len(a_i), dtype=bool)

        # inertial links
        self.links = []
        for i, link in enumerate(win.links):
            if link_ids is not None and i not in link_ids:
                continue
            L, reg = win.link_sqrt_info(link)
            self.links.append((i, link, L, reg))
        self.regularized = any(reg for *_, reg in self.links)

        # parking-slot registration factors
        ks, Ls, Os, alphas = [], [], [], []
        if cfg.enable_ps_backend and cfg.ps_weight_scale > 0:
            for uid in uids:
                if factor_uids is not None and uid not in factor_uids:
                    continue
                facs = [f for f in win.ps_factors.get(uid, []) if f.slot_id in win.ps_anchors]
                if not facs:
                    continue
                if cfg.enable_reweighting:
                    al = ps_weight(np.array([f.distance for f in facs]))
                else:
                    al = np.ones(len(facs))
                for f, a in zip(facs, al):
                    ks.append(idx[uid])
                    Ls.append(f.center_body[:2])
                    Os.append(np.asarray(win.ps_anchors[f.slot_id])[:2])
                    alphas.append(a)
        self.ps_k = np.array(ks, dtype=int)
        self.ps_L = np.array(Ls, dtype=float).reshape(-1, 2)
        self.ps_O = np.array(Os, dtype=float).reshape(-1, 2)
        self.ps_alpha = np.array(alphas, dtype=float)

        self.prior = win.prior if (include_prior and win.prior is not None and not win.prior.empty) else None
        self.n_cam = STATE_DIM * self.K
        self.n = self.n_cam + len(lms)

    # --- evaluation ------------------------------------------------------------------

    def _reprojection(self, states, lams):
        Rs = np.array([s.R for s in states])
        ps = np.array([s.p for s in states])
        a, o = self.rp_anchor, self.rp_obs
        return reprojection_batch(lams[self.rp_lm], Rs[a], ps[a], Rs[o], ps[o], self.rp_uva, self.rp_uvo,
                                  self.win.cam.R, self.win.cam.t)

    def _rp_scale(self, r):
        """Per-observation IRLS factor: whitening times ``sqrt(rho')`` of the robust kernel."""
        wr = r * self.rp_w[:, None]
        _, rho1, _ = robust_cost(np.sum(wr * wr, axis=1), 1.0, self.cfg.reprojection_kernel)
        return self.rp_w * np.sqrt(rho1) * self.rp_mask

    def _ps(self, states):
        Rs = np.array([s.R for s in states])[self.ps_k]
        ps = np.array([s.p for s in states])[self.ps_k]
        e, J_p, J_t = ps_batch(Rs, ps, self.ps_L, self.ps_O)
        s = self.ps_alpha * np.sum(e * e, axis=1) / self.cfg.ps_std ** 2
        kernel = self.cfg.robust_kernel
        rho, rho1, _ = robust_cost(s, self.cfg.cauchy_scale, kernel)
        return e, J_p, J_t, rho, rho1

    def cost(self, states, lams):
        """Per-term cost dict; ``None`` if a masked-in reprojection factor became invalid."""
        terms = {"prior": 0.0, "inertial": 0.0, "reprojection": 0.0, "ps": 0.0}
        if self.prior is not None:
            r, _ = self.prior.evaluate([states[self.idx[u]] for u in self.prior.uids])
            terms["prior"] = 0.5 * float(r @ r)
        for i, link, L, _ in self.links:
            r, _, _, _ = inertial_residual(states[i], states[i + 1], link, GRAVITY, L, jacobians=False)
            terms["inertial"] += 0.5 * float(r @ r)
        if len(self.rp_lm):
            if np.any(lams <= 0):
                return None
            r, *_, valid = self._reprojection(states, lams)
            if np.any(self.rp_mask & ~valid):
                return None
            rr = r[self.rp_mask] * self.rp_w[self.rp_mask, None]
            rho, _, _ = robust_cost(np.sum(rr * rr, axis=1), 1.0, self.cfg.reprojection_kernel)
            terms["reprojection"] = 0.5 * float(np.sum(rho))
        if len(self.ps_k):
            *_, rho, _ = self._ps(states)
            terms["ps"] = 0.5 * self.cfg.ps_weight_scale * float(np.sum(rho))
        for k, v in terms.items():
            if not np.isfinite(v):
                raise SolverError(f"non-finite cost in the {k} term", factor=k)
        return terms

    def linearize(self, states, lams):
        """Sparse Jacobian and residual of the IRLS-weighted least-squares system."""
        rows, cols, vals, res = [], [], [], []
        row = 0

        def add_block(r, blocks):
            nonlocal row
            m = len(r)
            for c0, B in blocks:
                B = np.atleast_2d(B)
                rr, cc = np.nonzero(np.ones_like(B, dtype=bool))
                rows.append(row + rr)
                cols.append(c0 + cc)
                vals.append(B[rr, cc])
            res.append(r)
            row += m

        if self.prior is not None:
            r, J = self.prior.evaluate([states[self.idx[u]] for u in self.prior.uids])
            add_block(r, [(self.idx[u] * STATE_DIM, J[:, k * STATE_DIM:(k + 1) * STATE_DIM])
                          for k, u in enumerate(self.prior.uids)])

        for i, link, L, _ in self.links:
            r, Ji, Jj, _ = inertial_residual(states[i], states[i + 1], link, GRAVITY, L)
            add_block(r, [(i * STATE_DIM, Ji), ((i + 1) * STATE_DIM, Jj)])

        n_rp = len(self.rp_lm)
        if n_rp:
            r, J_pa, J_ta, J_pi, J_ti, J_l, valid = self._reprojection(states, lams)
            w = self._rp_scale(r)[:, None]
            r = r * w
            Ja = np.concatenate([J_pa, J_ta], axis=2) * w[:, :, None]
            Jo = np.concatenate([J_pi, J_ti], axis=2) * w[:, :, None]
            Jl = J_l * w
            base = row + 2 * np.arange(n_rp)
            rr = np.repeat(base[:, None], 2, axis=1) + np.arange(2)          # (n, 2)
            for C0, Jb in ((self.rp_anchor * STATE_DIM, Ja), (self.rp_obs * STATE_DIM, Jo)):
                rows.append(np.repeat(rr[:, :, None], 6, axis=2).ravel())
                cols.append(np.broadcast_to((C0[:, None] + np.arange(6))[:, None, :], (n_rp, 2, 6)).ravel())
                vals.append(Jb.ravel())
            rows.append(rr.ravel())
            cols.append(np.repeat(self.n_cam + self.rp_lm, 2))
            vals.append(Jl.ravel())
            res.append(r.ravel())
            row += 2 * n_rp

        n_ps = len(self.ps_k)
        if n_ps:
            e, J_p, J_t, rho, rho1 = self._ps(states)
            # IRLS: scaled residual reproduces the kernel's gradient (Cauchy has rho'' < 0)
            sc = np.sqrt(self.cfg.ps_weight_scale * rho1 * self.ps_alpha) / self.cfg.ps_std
            r = e * sc[:, None]
            Jb = np.concatenate([J_p, J_t], axis=2) * sc[:, None, None]
            rr = row + 2 * np.arange(n_ps)[:, None] + np.arange(2)
            rows.append(np.repeat(rr[:, :, None], 6, axis=2).ravel())
            cols.append(np.broadcast_to((self.ps_k[:, None] * STATE_DIM + np.arange(6))[:, None, :],
                                        (n_ps, 2, 6)).ravel())
            vals.append(Jb.ravel())
            res.append(r.ravel())
            row += 2 * n_ps

        rvec = np.concatenate(res) if res else np.zeros(0)
        J = sp.csr_matrix((np.concatenate(vals) if vals else np.zeros(0),
                           (np.concatenate(rows) if rows else np.zeros(0, int),
                            np.concatenate(cols) if cols else np.zeros(0, int))),
                          shape=(row, self.n))
        return J, rvec


    def normal_equations(self, states, lams):
        """Dense ``(H, g)`` of the IRLS-weighted system, accumulated block by block.

        Equal to ``(J^T J, J^T r)`` of :meth:`linearize`; the landmark block is diagonal.
        """
        K, n_cam, n = self.K, self.n_cam, self.n
        D = STATE_DIM
        Hc = np.zeros((K, K, D, D))
        gc = np.zeros((K, D))
        nl = len(self.landmarks)
        Hcl = np.zeros((K, nl, 6))
        dl = np.zeros(nl)
        gl = np.zeros(nl)

        if self.prior is not None:
            r, J = self.prior.evaluate([states[self.idx[u]] for u in self.prior.uids])
            ks = [self.idx[u] for u in self.prior.uids]
            HH = (J.T @ J).reshape(len(ks), D, len(ks), D).transpose(0, 2, 1, 3)
            Hc[np.ix_(ks, ks)] += HH
            gc[ks] += (J.T @ r).reshape(len(ks), D)

        for i, link, L, _ in self.links:
            r, Ji, Jj, _ = inertial_residual(states[i], states[i + 1], link, GRAVITY, L)
            Hc[i, i] += Ji.T @ Ji
            Hc[i, i + 1] += Ji.T @ Jj
            Hc[i + 1, i] += Jj.T @ Ji
            Hc[i + 1, i + 1] += Jj.T @ Jj
            gc[i] += Ji.T @ r
            gc[i + 1] += Jj.T @ r

        if len(self.rp_lm):
            r, J_pa, J_ta, J_pi, J_ti, J_l, _ = self._reprojection(states, lams)
            w = self._rp_scale(r)[:, None]
            r = r * w
            Ja = np.concatenate([J_pa, J_ta], axis=2) * w[:, :, None]
            Jo = np.concatenate([J_pi, J_ti], axis=2) * w[:, :, None]
            Jl = J_l * w
            a, o, l = self.rp_anchor, self.rp_obs, self.rp_lm
            P6 = np.zeros((K, K, 6, 6))
            JaT, JoT = Ja.transpose(0, 2, 1), Jo.transpose(0, 2, 1)
            AO = JaT @ Jo
            np.add.at(P6, (a, a), JaT @ Ja)
            np.add.at(P6, (a, o), AO)
            np.add.at(P6, (o, a), AO.transpose(0, 2, 1))
            np.add.at(P6, (o, o), JoT @ Jo)
            Hc[:, :, :6, :6] += P6
            np.add.at(gc[:, :6], a, (JaT @ r[:, :, None])[:, :, 0])
            np.add.at(gc[:, :6], o, (JoT @ r[:, :, None])[:, :, 0])
            np.add.at(Hcl, (a, l), (JaT @ Jl[:, :, None])[:, :, 0])
            np.add.at(Hcl, (o, l), (JoT @ Jl[:, :, None])[:, :, 0])
            np.add.at(dl, l, np.sum(Jl * Jl, axis=1))
            np.add.at(gl, l, np.sum(Jl * r, axis=1))

        if len(self.ps_k):
            e, J_p, J_t, rho, rho1 = self._ps(states)
            sc = np.sqrt(self.cfg.ps_weight_scale * rho1 * self.ps_alpha) / self.cfg.ps_std
            r = e * sc[:, None]
            Jb = np.concatenate([J_p, J_t], axis=2) * sc[:, None, None]
            k = self.ps_k
            P6 = np.zeros((K, 6, 6))
            JbT = Jb.transpose(0, 2, 1)
            np.add.at(P6, k, JbT @ Jb)
            for i in range(K):
                Hc[i, i, :6, :6] += P6[i]
            np.add.at(gc[:, :6], k, (JbT @ r[:, :, None])[:, :, 0])

        H = np.zeros((n, n))
        H[:n_cam, :n_cam] = Hc.transpose(0, 2, 1, 3).reshape(n_cam, n_cam)
        B = np.zeros((K, D, nl))
        B[:, :6, :] = Hcl.transpose(0, 2, 1)
        H[:n_cam, n_cam:] = B.reshape(n_cam, nl)
        H[n_cam:, :n_cam] = H[:n_cam, n_cam:].T
        H[n_cam + np.arange(nl), n_cam + np.arange(nl)] = dl
        return H, np.concatenate([gc.ravel(), gl])


def _gauge_basis(state: KeyframeState):
    """Two rotation directions orthogonal to world yaw, expressed in the body tangent."""
    g = state.R.T @ np.array([0.0, 0.0, 1.0])
    _, _, Vt = np.linalg.svd(g[None])
    return Vt[1:].T  # (3, 2)


def _apply(states, lams, delta, n_cam):
    new_states = [s.boxplus(delta[i * STATE_DIM:(i + 1) * STATE_DIM]) for i, s in enumerate(states)]
    return new_states, lams + delta[n_cam:]


def _total(terms):
    return sum(terms.values())


def optimize_window(window: SlidingWindow, config: BackendConfig | None = None):
    """Levenberg-Marquardt over the window; updates states in place.

    Returns ``(window, SolveReport)``.
    """
    cfg = config or window.config
    window.config = cfg
    window.triangulate()
    prob = window._problem()
    states = [s.copy() for s in window.keyframes]
    lams = np.array([lm.inv_depth for lm in prob.landmarks], dtype=float)
    rep = SolveReport(regularized=prob.regularized)

    # factors whose landmark already projects behind the observer stay off for this solve
    if len(prob.rp_lm):
        *_, valid = prob._reprojection(states, lams)
        prob.rp_mask = valid.copy()
        rep.n_deactivated = int((~valid).sum())

    terms = prob.cost(states, lams)
    if terms is None:
        raise SolverError("initial landmark configuration is invalid", factor="reprojection")
    cost = _total(terms)
    rep.initial_cost = cost
    rep.trace.append({"iteration": 0, "cost": cost, **terms})
    lam_damp = cfg.lambda_init
    n_cam = prob.n_cam

    # column reduction for the gauge: first keyframe position and yaw held fixed
    if cfg.fix_gauge and prob.K > 0:
        B = _gauge_basis(states[0])
        free = np.r_[np.arange(6, n_cam), np.arange(n_cam, prob.n)]
    reason = "max_iterations"
    for it in range(1, cfg.max_iterations + 1):
        H, g = prob.normal_equations(states, lams)
        if cfg.fix_gauge:
            T = np.zeros((prob.n, 2 + len(free)))
            T[3:6, :2] = B
            T[free, 2 + np.arange(len(free))] = 1.0
            H = T.T @ H @ T
            g = T.T @ g
            nc = 2 + n_cam - 6
        else:
            nc = n_cam
        A = H[:nc, :nc]
        Bm = H[:nc, nc:]
        d = np.diag(H)[nc:].copy()
        accepted = False
        while lam_damp <= cfg.lambda_max:
            Ad = A + lam_damp * np.diag(np.maximum(np.diag(A), 1e-9))
            dd = d * (1.0 + lam_damp) + 1e-12
            S = Ad - (Bm / dd) @ Bm.T
            rhs = -g[:nc] + Bm @ (g[nc:] / dd)
            try:
                dc = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                dc = np.linalg.lstsq(S, rhs, rcond=None)[0]
            dl = (-g[nc:] - Bm.T @ dc) / dd
            y = np.concatenate([dc, dl])
            if cfg.fix_gauge:
                delta = np.zeros(prob.n)
                delta[3:6] = B @ y[:2]
                delta[free] = y[2:]
            else:
                delta = y
            step = float(np.linalg.norm(delta))
            if not np.all(np.isfinite(delta)):
                raise SolverError("non-finite update step", factor="linear_solve")
            cand_states, cand_lams = _apply(states, lams, delta, n_cam)
            cand = prob.cost(cand_states, cand_lams)
            if cand is not None and _total(cand) < cost:
                new_cost = _total(cand)
                rel = (cost - new_cost) / max(cost, 1e-300)
                states, lams, terms, cost = cand_states, cand_lams, cand, new_cost
                lam_damp = max(lam_damp * cfg.lambda_down, 1e-12)
                accepted = True
                break
            lam_damp *= cfg.lambda_up
            if step < cfg.step_tol:
                break
        rep.iterations = it
        rep.trace.append({"iteration": it, "cost": cost, "lambda": lam_damp, "accepted": accepted, **terms})
        if not accepted:
            reason = "step_tol" if step < cfg.step_tol else "damping_saturated"
            rep.converged = step < cfg.step_tol or cost < 1e-20
            break
        if step < cfg.step_tol:
            reason, rep.converged = "step_tol", True
            break
        if rel < cfg.rel_tol:
            reason, rep.converged = "rel_tol", True
            break
    rep.reason = reason
    rep.final_cost = cost
    rep.terms = dict(terms)

    for i, s in enumerate(states):
        window.keyframes[i] = s
    for lm, l in zip(prob.landmarks, lams):
        lm.inv_depth = float(l)
    lo, hi = 1.0 / cfg.max_depth, 1.0 / cfg.min_depth
    for lm in prob.landmarks:
        if not lo <= lm.inv_depth <= hi:
            lm.inv_depth = None  # re-triangulated later
    return window, rep


def marginalize_oldest(window: SlidingWindow, config: BackendConfig | None = None):
    """Remove the oldest keyframe; fold its information into a linear prior.

    Landmarks anchored in the oldest keyframe are marginalized with it and
    re-anchored (without prior) in their next observing keyframe. Returns the
    new prior (``None`` if nothing connected to the oldest keyframe).
    """
    cfg = config or window.config
    if not window.keyframes:
        raise ValueError("empty window")
    uid0 = window.keyframes[0].uid
    prior = None
    if cfg.enable_marginalization and len(window.keyframes) > 1:
        window.triangulate()
        prob = window._problem(landmark_filter=lambda lm: lm.anchor_uid == uid0, factor_uids={uid0},
                               link_ids={0})
        states = window.keyframes
        lams = np.array([lm.inv_depth for lm in prob.landmarks], dtype=float)
        if len(prob.rp_lm):
            *_, valid = prob._reprojection(states, lams)
            prob.rp_mask = valid
        H, b = prob.normal_equations(states, lams)
        K = len(states)
        used = [k for k in range(1, K) if np.any(H[k * STATE_DIM:(k + 1) * STATE_DIM])]
        keep = np.concatenate([np.arange(k * STATE_DIM, (k + 1) * STATE_DIM) for k in used]) if used \
            else np.zeros(0, int)
        marg = np.r_[np.arange(STATE_DIM), np.arange(prob.n_cam, prob.n)]
        if len(keep) and np.any(H[np.ix_(marg, marg)]):
            Hs, bs = schur_marginalize(H, b, keep, marg)
            Jp, rp, clamped = information_to_factor(Hs, bs)
            if len(rp):
                prior = LinearPrior([states[k].uid for k in used], [states[k].copy() for k in used],
                                    Jp, rp, clamped)
    window.prior = prior
    _drop_oldest(window)
    return prior


def _drop_oldest(window: SlidingWindow):
    old = window.keyframes.pop(0)
    if window.links:
        link = window.links.pop(0)
        window._sqrt_info.pop(id(link), None)
    window.ps_factors.pop(old.uid, None)
    idx = {k.uid: k for k in window.keyframes}
    T_old, T_inv = None, {}
    for fid in list(window.landmarks):
        lm = window.landmarks[fid]
        if old.uid not in lm.obs:
            continue
        was_anchor = lm.anchor_uid == old.uid
        uv_old = lm.obs.pop(old.uid)
        if not lm.obs:
            del window.landmarks[fid]
            continue
        if not was_anchor:
            continue
        new_uid = min(lm.obs, key=lambda u: idx[u].t)
        if lm.inv_depth is not None:
            if T_old is None:
                T_old = window.camera_pose(old)
            if new_uid not in T_inv:
                T_inv[new_uid] = inverse(window.camera_pose(idx[new_uid]))
            X = T_old.apply(np.array([uv_old[0], uv_old[1], 1.0]) / lm.inv_depth)
            depth = T_inv[new_uid].apply(X)[2]
            cfg = window.config
            lm.inv_depth = 1.0 / depth if cfg.min_depth < depth < cfg.max_depth else None
        lm.anchor_uid = new_uid
