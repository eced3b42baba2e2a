"""Residuals and analytic Jacobians for the sliding-window problem.

Keyframe tangent ordering (15): ``(dp, dtheta, dv, dba, dbg)`` with
``p <- p + dp``, ``R <- R Exp(dtheta)`` and additive velocity/biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from slotvio.geom import (Pose, quat_exp, quat_mul, quat_normalize, quat_to_rot, right_jacobian,
                          right_jacobian_inv, skew, skew_batch, so3_exp, so3_log)
from slotvio.preint import BA as PI_BA
from slotvio.preint import BG as PI_BG
from slotvio.preint import DIM as INERTIAL_DIM
from slotvio.preint import PW as PI_PW
from slotvio.preint import TH as PI_TH
from slotvio.preint import P as PI_P
from slotvio.preint import V as PI_V
from slotvio.preint import ImuBias, PreintegratedMotion

GRAVITY = np.array([0.0, 0.0, -9.81])
COV_EPS = 1e-12

SP, SR, SV, SBA, SBG = slice(0, 3), slice(3, 6), slice(6, 9), slice(9, 12), slice(12, 15)
STATE_DIM = 15
_I3 = np.eye(3)


@dataclass
class KeyframeState:
    t: float
    p: np.ndarray
    q: np.ndarray
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_a: np.ndarray = field(default_factory=lambda: np.zeros(3))
    b_w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    uid: int = -1

    def __post_init__(self):
        self.p = np.array(self.p, dtype=float)
        self.q = quat_normalize(self.q)
        self.v = np.array(self.v, dtype=float)
        self.b_a = np.array(self.b_a, dtype=float)
        self.b_w = np.array(self.b_w, dtype=float)
        for k in ("p", "q", "v", "b_a", "b_w"):
            if not np.all(np.isfinite(getattr(self, k))):
                raise ValueError(f"keyframe field {k} must be finite")

    @property
    def R(self):
        # cached per quaternion object; states are replaced, never mutated in place
        if getattr(self, "_R_of", None) is not self.q:
            self._R = quat_to_rot(self.q)
            self._R_of = self.q
        return self._R

    @property
    def bias(self):
        return ImuBias(self.b_a, self.b_w)

    def pose(self):
        return Pose(self.q, self.p)

    def boxplus(self, d):
        d = np.asarray(d, dtype=float)
        return KeyframeState(self.t, self.p + d[SP], quat_mul(self.q, quat_exp(d[SR])), self.v + d[SV],
                             self.b_a + d[SBA], self.b_w + d[SBG], self.uid)

    def copy(self):
        return KeyframeState(self.t, self.p.copy(), self.q.copy(), self.v.copy(), self.b_a.copy(),
                             self.b_w.copy(), self.uid)


# --- reprojection --------------------------------------------------------------

def reprojection_batch(lam, R_a, p_a, R_i, p_i, uv_a, uv_i, R_bc, t_bc):
    """Vectorized inverse-depth reprojection residuals ``observed - predicted``.

    Returns ``r (n,2)``, Jacobians wrt anchor ``(p, theta)`` and observer
    ``(p, theta)`` as ``(n,2,3)`` blocks, wrt inverse depth ``(n,2)``, and the
    validity mask (predicted depth > 0).
    """
    lam = np.asarray(lam, dtype=float)
    n = len(lam)
    f_a = np.column_stack([uv_a, np.ones(n)])
    P_ca = f_a / lam[:, None]
    P_ba = P_ca @ R_bc.T + t_bc
    P_w = np.einsum("nij,nj->ni", R_a, P_ba) + p_a
    P_bi = np.einsum("nji,nj->ni", R_i, P_w - p_i)
    P_ci = (P_bi - t_bc) @ R_bc
    z = P_ci[:, 2]
    valid = z > 1e-6
    zs = np.where(valid, z, 1.0)
    pred = P_ci[:, :2] / zs[:, None]
    r = uv_i - pred
    D = np.zeros((n, 2, 3))
    D[:, 0, 0] = 1.0 / zs
    D[:, 1, 1] = 1.0 / zs
    D[:, 0, 2] = -P_ci[:, 0] / zs ** 2
    D[:, 1, 2] = -P_ci[:, 1] / zs ** 2
    M = -D @ R_bc.T                                   # dr/dP_bi
    Mw = np.einsum("nij,nkj->nik", M, R_i)            # dr/dP_w = M R_i^T
    J_pi = -Mw
    J_ti = M @ skew_batch(P_bi)
    J_pa = Mw
    J_ta = -np.einsum("nij,njk->nik", Mw @ R_a, skew_batch(P_ba))
    dPw_dlam = -np.einsum("nij,nj->ni", R_a, f_a @ R_bc.T) / lam[:, None] ** 2
    J_lam = np.einsum("nij,nj->ni", Mw, dPw_dlam)
    r = np.where(valid[:, None], r, 0.0)
    return r, J_pa, J_ta, J_pi, J_ti, J_lam, valid


def reprojection_residual(lam, anchor: KeyframeState, observer: KeyframeState, uv_anchor, uv_obs,
                          cam_extrinsic):
    """Single-observation wrapper: ``(r, J_anchor (2,6), J_observer (2,6), J_lam (2,), valid)``.

    Pose Jacobian columns are ``(dp, dtheta)``.
    """
    r, J_pa, J_ta, J_pi, J_ti, J_l, valid = reprojection_batch(
        np.array([lam]), anchor.R[None], anchor.p[None], observer.R[None], observer.p[None],
        np.asarray(uv_anchor, dtype=float)[None], np.asarray(uv_obs, dtype=float)[None],
        cam_extrinsic.R, cam_extrinsic.t)
    return (r[0], np.hstack([J_pa[0], J_ta[0]]), np.hstack([J_pi[0], J_ti[0]]), J_l[0], bool(valid[0]))


# --- inertial ------------------------------------------------------------------

def sqrt_information(cov, eps=COV_EPS):
    """Whitening matrix ``L`` with ``L^T L = cov^-1``; returns ``(L, regularized)``."""
    cov = 0.5 * (np.asarray(cov) + np.asarray(cov).T)
    w, V = np.linalg.eigh(cov)
    regularized = bool(w.min() < eps)
    w = np.maximum(w, eps)
    return (V / np.sqrt(w)).T, regularized


def _rot_log(R):
    """Rotation vector of ``R`` (angle < pi)."""
    c = 0.5 * (R[0, 0] + R[1, 1] + R[2, 2] - 1.0)
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.sqrt(w @ w)
    if s < 1e-7 and c > 0:
        return w * (1.0 + s * s / 6.0)
    if c < -0.999:
        return so3_log(R)
    return w * (np.arctan2(s, c) / s)


def inertial_residual(xi: KeyframeState, xj: KeyframeState, m: PreintegratedMotion,
                      gravity=GRAVITY, sqrt_info=None, jacobians=True):
    """18-dim residual ``(dtheta, dv, dp, dbg, dba, dp_wss)`` with Jacobians wrt ``xi``, ``xj`` (18x15).

    Whitened by ``sqrt_info`` (computed from ``m.covariance`` if omitted).
    Returns ``(r, Ji, Jj, regularized)``; the Jacobians are ``None`` when
    ``jacobians`` is false.
    """
    regularized = False
    if sqrt_info is None:
        sqrt_info, regularized = sqrt_information(m.covariance)
    dt = m.dt_total
    Ri, Rj = xi.R, xj.R
    db = np.concatenate([xi.b_w - m.linearization_bias.b_w, xi.b_a - m.linearization_bias.b_a])
    Jb = m.jacobian[:, 9:15]
    phi = Jb[PI_TH] @ db
    dR = m.delta_R @ so3_exp(phi)
    dv = m.delta_v + Jb[PI_V] @ db
    dp = m.delta_p + Jb[PI_P] @ db
    dpw = m.delta_p_wss + Jb[PI_PW] @ db

    RiT = Ri.T
    E = dR.T @ RiT @ Rj
    r_th = _rot_log(E)
    dpos = xj.p - xi.p
    a_v = RiT @ (xj.v - xi.v - gravity * dt)
    a_p = RiT @ (dpos - xi.v * dt - 0.5 * gravity * dt * dt)
    a_w = RiT @ dpos
    r = np.concatenate([r_th, a_v - dv, a_p - dp, xj.b_w - xi.b_w, xj.b_a - xi.b_a, a_w - dpw])
    if not jacobians:
        return sqrt_info @ r, None, None, regularized

    Ji = np.zeros((INERTIAL_DIM, STATE_DIM))
    Jj = np.zeros((INERTIAL_DIM, STATE_DIM))
    Jri = right_jacobian_inv(r_th)
    Ji[PI_TH, SR] = -Jri @ Rj.T @ Ri
    Ji[PI_TH, SBG] = -Jri @ E.T @ right_jacobian(phi) @ Jb[PI_TH, 0:3]
    Jj[PI_TH, SR] = Jri

    Ji[PI_V, SR] = skew(a_v)
    Ji[PI_V, SV] = -RiT
    Ji[PI_V, SBG] = -Jb[PI_V, 0:3]
    Ji[PI_V, SBA] = -Jb[PI_V, 3:6]
    Jj[PI_V, SV] = RiT

    Ji[PI_P, SR] = skew(a_p)
    Ji[PI_P, SP] = -RiT
    Ji[PI_P, SV] = -RiT * dt
    Ji[PI_P, SBG] = -Jb[PI_P, 0:3]
    Ji[PI_P, SBA] = -Jb[PI_P, 3:6]
    Jj[PI_P, SP] = RiT

    Ji[PI_BG, SBG] = -_I3
    Jj[PI_BG, SBG] = _I3
    Ji[PI_BA, SBA] = -_I3
    Jj[PI_BA, SBA] = _I3

    Ji[PI_PW, SR] = skew(a_w)
    Ji[PI_PW, SP] = -RiT
    Ji[PI_PW, SBG] = -Jb[PI_PW, 0:3]
    Ji[PI_PW, SBA] = -Jb[PI_PW, 3:6]
    Jj[PI_PW, SP] = RiT

    return sqrt_info @ r, sqrt_info @ Ji, sqrt_info @ Jj, regularized


# --- parking-slot registration -------------------------------------------------

def ps_batch(R, p, L, O):
    """Planar residual ``(R L + p - O)[:2]`` for body-frame slot centers ``L`` (n,2)."""
    n = len(L)
    L3 = np.column_stack([L, np.zeros(n)])
    e = (np.einsum("nij,nj->ni", R, L3) + p)[:, :2] - O
    J_p = np.zeros((n, 2, 3))
    J_p[:, 0, 0] = J_p[:, 1, 1] = 1.0
    J_t = -(R @ skew_batch(L3))[:, :2, :]
    return e, J_p, J_t


def ps_residual(x: KeyframeState, L_body, O_world):
    """``(e (2,), J (2,6))`` with pose Jacobian columns ``(dp, dtheta)``."""
    e, J_p, J_t = ps_batch(x.R[None], x.p[None], np.asarray(L_body, dtype=float)[None, :2],
                           np.asarray(O_world, dtype=float)[None, :2])
    return e[0], np.hstack([J_p[0], J_t[0]])


def ps_weight(d, observed=None):
    """Distance-based reweighting ``alpha_i = N exp(-d_i) / sum_j exp(-d_j)`` over observed slots.

    ``d`` are normalized BEV center distances; unobserved entries get 0.
    """
    d = np.asarray(d, dtype=float)
    obs = np.isfinite(d) if observed is None else np.asarray(observed, dtype=bool) & np.isfinite(d)
    alpha = np.zeros_like(d)
    n = int(obs.sum())
    if n == 0:
        return alpha
    e = np.exp(-(d[obs] - d[obs].min()))  # shift for numerical safety; ratio unchanged
    alpha[obs] = n * e / e.sum()
    return alpha


def robust_cost(s, c=1.0, kernel="cauchy"):
    """Robust loss ``rho(s)`` of a squared residual norm ``s`` and its first two derivatives."""
    s = np.asarray(s, dtype=float)
    if kernel == "trivial":
        return s.copy(), np.ones_like(s), np.zeros_like(s)
    if kernel != "cauchy":
        raise ValueError(f"unknown robust kernel {kernel!r}")
    c2 = c * c
    u = 1.0 + s / c2
    return c2 * np.log1p(s / c2), 1.0 / u, -1.0 / (c2 * u * u)
