"""Schur-complement marginalization and the resulting linear prior factor."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from slotvio.backend.factors import SBA, SBG, SP, SR, STATE_DIM, SV, KeyframeState
from slotvio.geom import quat_conj, quat_log, quat_mul, right_jacobian_inv

EIG_TOL = 1e-10


def _sym_pinv(A, tol=EIG_TOL):
    w, V = np.linalg.eigh(0.5 * (A + A.T))
    keep = w > tol * max(1.0, np.abs(w).max())
    winv = np.zeros_like(w)
    winv[keep] = 1.0 / w[keep]
    return (V * winv) @ V.T


def schur_marginalize(H, b, keep, marg):
    """Marginal information over ``keep`` after eliminating ``marg``.

    ``H``/``b`` describe ``0.5 dx^T H dx + b^T dx``. Returns ``(H_keep, b_keep)``.
    """
    keep = np.asarray(keep, dtype=int)
    marg = np.asarray(marg, dtype=int)
    Hmm = H[np.ix_(marg, marg)]
    Hkm = H[np.ix_(keep, marg)]
    Hmm_inv = _sym_pinv(Hmm)
    Hs = H[np.ix_(keep, keep)] - Hkm @ Hmm_inv @ Hkm.T
    bs = b[keep] - Hkm @ Hmm_inv @ b[marg]
    return 0.5 * (Hs + Hs.T), bs


def information_to_factor(H, b, tol=EIG_TOL):
    """Square-root form ``(J, r0)`` with ``J^T J = H`` and ``J^T r0 = b``.

    Negative eigenvalues (numerically indefinite input) are clamped to zero;
    the third return value reports whether any clamping beyond round-off happened.
    """
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    scale = max(1.0, np.abs(w).max())
    clamped = bool(w.min() < -1e3 * tol * scale)
    keep = w > tol * scale
    s = np.sqrt(w[keep])
    J = s[:, None] * V[:, keep].T
    r0 = (V[:, keep].T @ b) / s
    return J, r0, clamped


def state_difference(x: KeyframeState, x0: KeyframeState):
    """``x (-) x0`` in the 15-dim tangent ordering."""
    d = np.zeros(STATE_DIM)
    d[SP] = x.p - x0.p
    d[SR] = quat_log(quat_mul(quat_conj(x0.q), x.q))
    d[SV] = x.v - x0.v
    d[SBA] = x.b_a - x0.b_a
    d[SBG] = x.b_w - x0.b_w
    return d


@dataclass
class LinearPrior:
    """``r(x) = r0 + J (x (-) x0)`` over the keyframes listed in ``uids``."""

    uids: list
    x0: list
    J: np.ndarray
    r0: np.ndarray
    clamped: bool = False

    @property
    def empty(self):
        return len(self.r0) == 0

    def evaluate(self, states):
        """Residual and Jacobian wrt the current tangent of each listed keyframe."""
        dx = np.concatenate([state_difference(s, s0) for s, s0 in zip(states, self.x0)])
        r = self.r0 + self.J @ dx
        J = self.J.copy()
        for k in range(len(states)):
            cols = slice(k * STATE_DIM + 3, k * STATE_DIM + 6)
            J[:, cols] = J[:, cols] @ right_jacobian_inv(dx[cols])
        return r, J

    @classmethod
    def diagonal(cls, state: KeyframeState, sigmas):
        """Independent Gaussian prior around ``state``; ``sigmas`` (15,) in tangent order."""
        sigmas = np.asarray(sigmas, dtype=float)
        if sigmas.shape != (STATE_DIM,) or not np.all(sigmas > 0):
            raise ValueError("sigmas must be 15 positive values")
        return cls([state.uid], [state.copy()], np.diag(1.0 / sigmas), np.zeros(STATE_DIM))

    def drop(self, uid):
        """Remove a keyframe that no longer carries prior information (zero columns)."""
        k = self.uids.index(uid)
        cols = slice(k * STATE_DIM, (k + 1) * STATE_DIM)
        if np.any(self.J[:, cols]):
            raise ValueError("cannot drop a keyframe the prior still constrains")
        self.J = np.delete(self.J, np.arange(cols.start, cols.stop), axis=1)
        del self.uids[k]
        del self.x0[k]
