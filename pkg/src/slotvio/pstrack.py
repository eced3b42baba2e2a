"""Parking-slot management: SORT-style world-frame tracking and the hard-match baseline.

Detections arrive in the BEV/body frame, get lifted into the world frame with
the vehicle pose of the nearest keyframe, and are associated to maintained
slots. Every maintained slot keeps a Kalman state over
``(cx, cy, heading, width, length, vx, vy)``; the velocity terms absorb slow
apparent motion caused by odometry drift.
"""

from __future__ import annotations

import itertools
import warnings
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from slotvio import polygon
from slotvio.geom import Pose

IOU_GATE = 0.3


class DegenerateQuadWarning(UserWarning):
    pass


class TrackerTimeError(ValueError):
    pass


@dataclass(frozen=True)
class SlotObservation:
    """One detected slot. Corners are ordered entrance edge first, counter-clockwise."""

    corners_px: np.ndarray    # (4, 2) BEV pixels
    corners_body: np.ndarray  # (4, 2) meters, body frame
    occupied: bool
    confidence: float
    t: float
    center_distance: float = 0.0  # |center_px - image center| / (image_size / 2)
    gt_id: int = -1  # simulator bookkeeping only; never read by the estimator

    @property
    def center_body(self):
        return self.corners_body.mean(axis=0)

    def to_dict(self):
        return {"corners_px": self.corners_px.tolist(), "corners_body": self.corners_body.tolist(),
                "occupied": self.occupied, "confidence": self.confidence, "t": self.t,
                "center_distance": self.center_distance, "gt_id": self.gt_id}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["corners_px"], dtype=float), np.asarray(d["corners_body"], dtype=float),
                   bool(d["occupied"]), float(d["confidence"]), float(d["t"]),
                   float(d.get("center_distance", 0.0)), int(d.get("gt_id", -1)))


# --- geometry & assignment ---------------------------------------------------

def iou(a, b) -> float:
    """Intersection-over-union of two convex quads; 0 for degenerate input."""
    area_a, area_b = polygon.area(a), polygon.area(b)
    if area_a <= 1e-12 or area_b <= 1e-12:
        warnings.warn("zero-area quad in IoU", DegenerateQuadWarning, stacklevel=2)
        return 0.0
    # cheap reject on bounding circles
    ca, cb = np.mean(a, axis=0)[:2], np.mean(b, axis=0)[:2]
    ra = np.max(np.linalg.norm(np.asarray(a)[:, :2] - ca, axis=1))
    rb = np.max(np.linalg.norm(np.asarray(b)[:, :2] - cb, axis=1))
    if np.linalg.norm(ca - cb) > ra + rb:
        return 0.0
    inter = polygon.intersection_area(a, b)
    union = area_a + area_b - inter
    return float(min(max(inter / union, 0.0), 1.0))


def _circles(quads):
    q = np.array([np.asarray(x, dtype=float)[:, :2] for x in quads]).reshape(-1, 4, 2)
    c = q.mean(axis=1)
    return c, np.linalg.norm(q - c[:, None], axis=2).max(axis=1)


def iou_matrix(dets, tracks):
    m = np.zeros((len(dets), len(tracks)))
    if not len(dets) or not len(tracks):
        return m
    cd, rd = _circles(dets)
    ct, rt = _circles(tracks)
    near = np.linalg.norm(cd[:, None] - ct[None], axis=2) <= rd[:, None] + rt[None]
    for i, j in zip(*np.nonzero(near)):
        m[i, j] = iou(dets[i], tracks[j])
    return m


def hungarian(cost):
    """Minimum-cost one-to-one assignment of ``min(n, m)`` pairs.

    Shortest augmenting path with row/column potentials, O(n^2 m).
    Returns a sorted list of ``(row, col)`` pairs.
    """
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise ValueError("cost must be a 2D matrix")
    if C.size == 0:
        return []
    if not np.all(np.isfinite(C)):
        raise ValueError("cost matrix must be finite")
    transposed = C.shape[0] > C.shape[1]
    if transposed:
        C = C.T
    n, m = C.shape
    INF = np.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=int)  # p[j]: row (1-based) assigned to column j
    way = np.zeros(m + 1, dtype=int)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cols = np.flatnonzero(~used[1:]) + 1
            cur = C[i0 - 1, cols - 1] - u[i0] - v[cols]
            better = cur < minv[cols]
            minv[cols[better]] = cur[better]
            way[cols[better]] = j0
            k = np.argmin(minv[cols])
            delta = minv[cols[k]]
            j1 = cols[k]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    pairs = [(p[j] - 1, j - 1) for j in range(1, m + 1) if p[j] != 0]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


def brute_force_assignment(cost):
    """Exhaustive reference for :func:`hungarian` (small matrices only)."""
    C = np.asarray(cost, dtype=float)
    n, m = C.shape
    best, best_pairs = np.inf, []
    if n <= m:
        for cols in itertools.permutations(range(m), n):
            c = C[np.arange(n), cols].sum()
            if c < best:
                best, best_pairs = c, list(zip(range(n), cols))
    else:
        for rows in itertools.permutations(range(n), m):
            c = C[rows, np.arange(m)].sum()
            if c < best:
                best, best_pairs = c, list(zip(rows, range(m)))
    return best, sorted(best_pairs)


def associate_iou(ious, threshold=IOU_GATE):
    """Match on a precomputed IoU matrix; pairs below ``threshold`` are split."""
    ious = np.asarray(ious, dtype=float).reshape(len(ious), -1) if len(ious) else np.zeros((0, 0))
    n, m = ious.shape if ious.ndim == 2 else (0, 0)
    if n == 0 or m == 0:
        return [], list(range(n)), list(range(m))
    matches = [(i, j) for i, j in hungarian(1.0 - ious) if ious[i, j] >= threshold]
    md = {i for i, _ in matches}
    mt = {j for _, j in matches}
    return (matches, [i for i in range(n) if i not in md], [j for j in range(m) if j not in mt])


def associate(detections, predicted_tracks, threshold=IOU_GATE):
    """Hungarian assignment on IoU between detection and predicted-track quads."""
    return associate_iou(iou_matrix(detections, predicted_tracks), threshold)


# --- Kalman filter -----------------------------------------------------------

def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


@dataclass
class TrackerConfig:
    iou_threshold: float = IOU_GATE
    min_hits: int = 2
    max_age: int = 5
    occupancy_window: int = 5
    center_std: float = 0.15
    heading_std: float = 0.05
    extent_std: float = 0.2
    velocity_std0: float = 0.1
    velocity_walk: float = 0.05  # m/s^2 / sqrt(Hz)
    static_walk: float = 0.01


class SlotKalmanFilter:
    """Constant-velocity center, static heading/extent."""

    def __init__(self, z, cfg: TrackerConfig):
        self.cfg = cfg
        self.x = np.zeros(7)
        self.x[:5] = z
        self.R = np.diag([cfg.center_std ** 2] * 2 + [cfg.heading_std ** 2] + [cfg.extent_std ** 2] * 2)
        self.P = np.zeros((7, 7))
        self.P[:5, :5] = self.R
        self.P[5:, 5:] = cfg.velocity_std0 ** 2 * np.eye(2)
        self.H = np.hstack([np.eye(5), np.zeros((5, 2))])

    def predict(self, dt):
        if dt <= 0:
            return
        F = np.eye(7)
        F[0, 5] = F[1, 6] = dt
        q = self.cfg
        Q = np.zeros((7, 7))
        Q[:5, :5] = q.static_walk ** 2 * dt * np.eye(5)
        Q[5:, 5:] = q.velocity_walk ** 2 * dt * np.eye(2)
        self.x = F @ self.x
        self.P = F @ self.P @ F.T + Q

    def update(self, z):
        y = np.asarray(z, dtype=float) - self.H @ self.x
        y[2] = _wrap(y[2])
        S = self.H @ self.P @ self.H.T + self.R
        K = np.linalg.solve(S, self.H @ self.P).T
        self.x = self.x + K @ y
        self.x[2] = _wrap(self.x[2])
        IKH = np.eye(7) - K @ self.H
        self.P = IKH @ self.P @ IKH.T + K @ self.R @ K.T


def _measurement(corners_world):
    c, h, w, l = polygon.rectangle_params(corners_world)
    return np.array([c[0], c[1], h, w, l])


@dataclass
class TrackedSlot:
    id: int
    kf: SlotKalmanFilter
    t: float
    hits: int = 1
    misses: int = 0
    status: str = "tentative"
    votes: deque = field(default_factory=deque)
    center_sum: np.ndarray = field(default_factory=lambda: np.zeros(2))
    n_centers: int = 0

    @property
    def center(self):
        """Filtered center (drives association)."""
        return self.kf.x[:2].copy()

    @property
    def anchor(self):
        """Mean of all lifted detection centers: the slot's fixed world position for the backend.

        Unlike the filtered center it does not follow the latest poses, so it
        carries information from every earlier sighting.
        """
        return self.center_sum / self.n_centers if self.n_centers else self.center

    def add_center(self, c):
        self.center_sum = self.center_sum + np.asarray(c, dtype=float)[:2]
        self.n_centers += 1

    @property
    def corners_world(self):
        cx, cy, h, w, l = self.kf.x[:5]
        return polygon.rectangle((cx, cy), h, w, l)

    @property
    def occupied(self):
        return sum(self.votes) * 2 > len(self.votes)


def detection_to_world(obs: SlotObservation, pose: Pose):
    pts = np.column_stack([obs.corners_body, np.zeros(4)])
    return pose.apply(pts)[:, :2]


class SortSlotTracker:
    """SORT-style slot manager in the world frame.

    Lost tracks are kept (frozen) and can be revived by a later detection that
    overlaps them; ids are never reused.
    """

    association = "sort"

    def __init__(self, cfg: TrackerConfig | None = None):
        self.cfg = cfg or TrackerConfig()
        self.tracks: dict[int, TrackedSlot] = {}
        self._next_id = 0
        self.t = None
        self.history: list[dict] = []

    def _new_id(self):
        i = self._next_id
        self._next_id += 1
        return i

    def active(self):
        return [t for t in self.tracks.values() if t.status in ("tentative", "confirmed")]

    def lost(self):
        return [t for t in self.tracks.values() if t.status == "lost"]

    def step(self, detections, vehicle_pose: Pose, t: float):
        """Ingest one BEV frame; returns ``[(observation, track_id), ...]``."""
        if self.t is not None and t < self.t:
            raise TrackerTimeError(f"tracker time went backwards: {t} < {self.t}")
        self.t = t
        world = [detection_to_world(d, vehicle_pose) for d in detections]

        active = self.active()
        for trk in active:
            trk.kf.predict(t - trk.t)
            trk.t = t
        matches, un_det, un_trk = associate(world, [trk.corners_world for trk in active],
                                            self.cfg.iou_threshold)
        assigned = {}
        for di, ti in matches:
            assigned[di] = active[ti]

        lost = self.lost()
        if un_det and lost:
            sub = [world[i] for i in un_det]
            rm, rest, _ = associate(sub, [trk.corners_world for trk in lost], self.cfg.iou_threshold)
            for si, li in rm:
                trk = lost[li]
                trk.kf.x[5:] = 0.0
                trk.kf.predict(t - trk.t)
                trk.t = t
                trk.status = "confirmed"
                trk.misses = 0
                assigned[un_det[si]] = trk
            un_det = [un_det[i] for i in rest]

        for di, trk in assigned.items():
            trk.kf.update(_measurement(world[di]))
            trk.add_center(world[di].mean(axis=0))
            trk.hits += 1
            trk.misses = 0
            trk.votes.append(detections[di].occupied)
            if trk.status == "tentative" and trk.hits >= self.cfg.min_hits:
                trk.status = "confirmed"

        for di in un_det:
            trk = TrackedSlot(self._new_id(), SlotKalmanFilter(_measurement(world[di]), self.cfg), t,
                              votes=deque([detections[di].occupied], maxlen=self.cfg.occupancy_window))
            trk.add_center(world[di].mean(axis=0))
            if trk.hits >= self.cfg.min_hits:
                trk.status = "confirmed"
            self.tracks[trk.id] = trk
            assigned[di] = trk

        touched = {trk.id for trk in assigned.values()}
        for trk in active:
            if trk.id in touched:
                continue
            trk.misses += 1
            if trk.misses > self.cfg.max_age:
                if trk.status == "confirmed":
                    trk.status = "lost"
                else:
                    del self.tracks[trk.id]

        for trk in self.tracks.values():
            if trk.id in touched:
                self.history.append({"t": t, "id": trk.id, "corners_world": trk.corners_world.tolist(),
                                     "occupied": trk.occupied, "status": trk.status})
        return [(detections[i], assigned[i].id) for i in range(len(detections))]

    def anchors(self):
        """World-frame centers of confirmed and frozen lost slots (the backend's fixed anchors)."""
        return {t.id: t.anchor for t in self.tracks.values() if t.status in ("confirmed", "lost")}


# --- hard-match baseline -------------------------------------------------------

@dataclass
class RegistrySlot:
    id: int
    center_sum: np.ndarray
    count: int = 1

    @property
    def center(self):
        return self.center_sum / self.count


def hard_match(centers_world, registry: dict, th1=0.5, th2=2.0, next_id=None):
    """Threshold association against running-mean slot centers.

    A detection joins the nearest registered slot if closer than ``th1``,
    creates a new slot if farther than ``th2`` from every slot, and is
    discarded (``None``) in between. Mutates ``registry``; returns the ids.
    """
    next_id = (max(registry) + 1 if registry else 0) if next_id is None else next_id
    ids = []
    for c in np.atleast_2d(np.asarray(centers_world, dtype=float)) if len(centers_world) else []:
        c = c[:2]
        if registry:
            keys = list(registry)
            d = np.array([np.linalg.norm(registry[k].center - c) for k in keys])
            k = int(np.argmin(d))
            dist = d[k]
        else:
            dist = np.inf
        if dist < th1:
            slot = registry[keys[k]]
            slot.center_sum = slot.center_sum + c
            slot.count += 1
            ids.append(slot.id)
        elif dist > th2:
            registry[next_id] = RegistrySlot(next_id, c.copy())
            ids.append(next_id)
            next_id += 1
        else:
            ids.append(None)
    return ids


class HardMatchTracker:
    """Registry-based association with fixed distance thresholds (th1/th2)."""

    association = "hard"

    def __init__(self, th1=0.5, th2=2.0, min_hits=2):
        self.th1, self.th2, self.min_hits = th1, th2, min_hits
        self.registry: dict[int, RegistrySlot] = {}
        self._next_id = 0
        self.t = None
        self.history: list[dict] = []

    def step(self, detections, vehicle_pose: Pose, t: float):
        if self.t is not None and t < self.t:
            raise TrackerTimeError(f"tracker time went backwards: {t} < {self.t}")
        self.t = t
        centers = [detection_to_world(d, vehicle_pose).mean(axis=0) for d in detections]
        ids = hard_match(centers, self.registry, self.th1, self.th2, self._next_id)
        if self.registry:
            self._next_id = max(self._next_id, max(self.registry) + 1)
        for i in ids:
            if i is not None:
                self.history.append({"t": t, "id": i, "center": self.registry[i].center.tolist(),
                                     "count": self.registry[i].count})
        return list(zip(detections, ids))

    def anchors(self):
        return {k: s.center for k, s in self.registry.items() if s.count >= self.min_hits}


class IdSwitchCounter:
    """MOT-style bookkeeping against simulator ground-truth slot ids."""

    def __init__(self):
        self.last = {}
        self.ids_per_gt: dict[int, set] = {}
        self.switches = 0

    def update(self, annotated):
        for obs, tid in annotated:
            if obs.gt_id < 0 or tid is None:
                continue
            prev = self.last.get(obs.gt_id)
            if prev is not None and prev != tid:
                self.switches += 1
            self.last[obs.gt_id] = tid
            self.ids_per_gt.setdefault(obs.gt_id, set()).add(tid)

    @property
    def duplicates(self):
        return sum(len(v) - 1 for v in self.ids_per_gt.values())
