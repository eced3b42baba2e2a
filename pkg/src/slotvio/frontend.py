"""Feature-track management, parking-slot corner merging and keyframe selection.

Natural features come from the simulator with stable landmark ids (standing in
for corner detection + optical-flow tracking). Slot corners detected in the BEV
image are lifted to the ground plane, projected into the front camera and
managed as extra feature tracks keyed by ``(slot id, corner index)``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from slotvio.geom import BevCalibration, project_normalized, world_to_body

NATURAL = "natural"
PS_CORNER = "ps_corner"


class ForcedKeyframeWarning(UserWarning):
    pass


@dataclass
class FrontendConfig:
    max_features: int = 110
    min_feature_separation: float = 20.0 / 460.0
    parallax_threshold: float = 10.0 / 460.0
    min_tracked_for_keyframe: int = 20
    max_keyframe_interval: float = 1.0  # seconds; bounds the preintegration span
    outlier_gate: float = 0.1  # largest plausible frame-to-frame jump, normalized units
    hfov_deg: float = 90.0
    vfov_deg: float = 70.0
    min_depth: float = 0.5
    max_depth: float = 20.0
    ps_info_scale: float = 1.0  # reprojection information multiplier for slot-corner tracks

    def __post_init__(self):
        if self.max_features < 10:
            raise ValueError("max_features must be at least 10")


@dataclass
class FeatureTrack:
    feature_id: int
    source: str
    observations: list = field(default_factory=list)  # [(frame_id, uv)]
    linked_slot: tuple | None = None  # (slot id, corner index) for slot-corner tracks
    landmark_id: int = -1
    active: bool = True

    def __post_init__(self):
        if self.source == PS_CORNER and self.linked_slot is None:
            raise ValueError("slot-corner tracks need a slot link")

    @property
    def last_frame(self):
        return self.observations[-1][0] if self.observations else -1

    @property
    def last_uv(self):
        return self.observations[-1][1]

    def __len__(self):
        return len(self.observations)


@dataclass(frozen=True)
class KeyframeDecision:
    is_keyframe: bool
    parallax: float
    n_shared: int
    forced: bool = False


def select_keyframe(prev_obs: dict, cur_obs: dict, config: FrontendConfig) -> KeyframeDecision:
    """Parallax / track-count keyframe test between two ``{feature_id: uv}`` snapshots."""
    shared = sorted(set(prev_obs) & set(cur_obs))
    if not shared:
        warnings.warn("no shared tracks with the previous keyframe; forcing a keyframe",
                      ForcedKeyframeWarning, stacklevel=2)
        return KeyframeDecision(True, float("inf"), 0, True)
    a = np.array([prev_obs[k] for k in shared])
    b = np.array([cur_obs[k] for k in shared])
    parallax = float(np.mean(np.linalg.norm(a - b, axis=1)))
    is_kf = parallax > config.parallax_threshold or len(shared) < config.min_tracked_for_keyframe
    return KeyframeDecision(bool(is_kf), parallax, len(shared))


class Frontend:
    def __init__(self, config: FrontendConfig | None = None, calib: BevCalibration | None = None):
        self.config = config or FrontendConfig()
        self.calib = calib or BevCalibration()
        self.tracks: dict[int, FeatureTrack] = {}
        self.frame_id = -1
        self.t = None
        self._next_feature = 0
        self._by_landmark: dict[int, int] = {}
        self._by_corner: dict[tuple, int] = {}
        self.current: dict[int, np.ndarray] = {}
        self.rejected_outliers = 0

    def _new_track(self, source, **kw):
        trk = FeatureTrack(self._next_feature, source, **kw)
        self.tracks[trk.feature_id] = trk
        self._next_feature += 1
        return trk

    def natural_active(self):
        return [t for t in self.tracks.values() if t.active and t.source == NATURAL]

    def _separated(self, uv, taken):
        if not taken:
            return True
        d = np.linalg.norm(np.asarray(taken) - uv, axis=1)
        return bool(d.min() >= self.config.min_feature_separation)

    def ingest_frame(self, ids, uv, t, ps_observations=None):
        """Advance by one camera frame.

        ``ids``/``uv`` are the candidate landmark ids and normalized coordinates;
        ``ps_observations`` is an optional list of ``(SlotObservation, slot_id)``
        merged as slot-corner tracks before new natural features are admitted.
        Returns the frame id.
        """
        ids = np.asarray(ids, dtype=int)
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        if len(np.unique(ids)) != len(ids):
            raise ValueError("duplicate feature id within one frame")
        if self.t is not None and t <= self.t:
            raise ValueError(f"frame time must increase: {t} <= {self.t}")
        self.t = t
        self.frame_id += 1
        fid = self.frame_id
        cfg = self.config
        self.current = {}
        seen = dict(zip(ids.tolist(), uv))

        # extend live natural tracks; a track not re-observed in this frame ends
        for lm, tid in list(self._by_landmark.items()):
            trk = self.tracks[tid]
            obs = seen.get(lm)
            if obs is None or np.linalg.norm(obs - trk.last_uv) > cfg.outlier_gate:
                if obs is not None:
                    self.rejected_outliers += 1
                trk.active = False
                del self._by_landmark[lm]
                continue
            trk.observations.append((fid, obs))
            self.current[tid] = obs

        if ps_observations:
            self.merge_ps_corners(ps_observations)

        # admit new natural features up to the budget, spatially separated
        taken = list(self.current.values())
        room = cfg.max_features - len(self._by_landmark)
        for lm, p in zip(ids.tolist(), uv):
            if room <= 0:
                break
            if lm in self._by_landmark or not self._separated(p, taken):
                continue
            trk = self._new_track(NATURAL, landmark_id=lm, observations=[(fid, p)])
            self._by_landmark[lm] = trk.feature_id
            self.current[trk.feature_id] = p
            taken.append(p)
            room -= 1
        self._enforce_budget()
        return fid

    def _enforce_budget(self):
        live = self.natural_active()
        excess = len(live) - self.config.max_features
        if excess <= 0:
            return
        live.sort(key=lambda t: (len(t), t.feature_id))
        for trk in live[:excess]:
            trk.active = False
            self._by_landmark.pop(trk.landmark_id, None)
            self.current.pop(trk.feature_id, None)

    def corner_projections(self, obs):
        """Slot corners (BEV detection) projected into the front camera: (uv, visible)."""
        pts = np.column_stack([obs.corners_body, np.zeros(4)])
        uv, z = project_normalized(world_to_body(pts, self.calib.cam_extrinsic))
        cfg = self.config
        tx = np.tan(np.radians(cfg.hfov_deg) / 2)
        ty = np.tan(np.radians(cfg.vfov_deg) / 2)
        with np.errstate(invalid="ignore"):
            vis = (z > cfg.min_depth) & (z < cfg.max_depth) & (np.abs(uv[:, 0]) <= tx) & (np.abs(uv[:, 1]) <= ty)
        return uv, vis

    def merge_ps_corners(self, ps_observations):
        """Add/extend slot-corner tracks for the current frame. Returns the feature ids touched."""
        fid = self.frame_id
        touched = []
        for obs, sid in ps_observations:
            if sid is None:
                continue
            uv, vis = self.corner_projections(obs)
            for ci in np.flatnonzero(vis):
                key = (int(sid), int(ci))
                tid = self._by_corner.get(key)
                if tid is None:
                    tid = self._new_track(PS_CORNER, linked_slot=key).feature_id
                    self._by_corner[key] = tid
                trk = self.tracks[tid]
                if trk.observations and trk.last_frame == fid:
                    continue
                trk.observations.append((fid, uv[ci]))
                trk.active = True
                self.current[tid] = uv[ci]
                touched.append(tid)
        return touched

    def source_of(self, feature_id):
        return self.tracks[feature_id].source
