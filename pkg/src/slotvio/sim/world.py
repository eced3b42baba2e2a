"""Synthetic parking-lot worlds: slot markings on the ground plus 3D visual landmarks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from slotvio import polygon


class InfeasibleWorldError(ValueError):
    pass


@dataclass(frozen=True)
class Slot:
    id: int
    corners: np.ndarray  # (4, 3) world meters, entrance edge first, counter-clockwise
    occupied: bool

    @property
    def center(self):
        return self.corners.mean(axis=0)


@dataclass
class ParkingLotWorld:
    slots: list
    landmarks: np.ndarray  # (n, 3)
    bounds: tuple  # (xmin, xmax, ymin, ymax)

    def slot_by_id(self, sid):
        for s in self.slots:
            if s.id == sid:
                return s
        raise KeyError(sid)

    def to_dict(self):
        return {
            "slots": [{"id": s.id, "corners": s.corners.tolist(), "occupied": s.occupied}
                      for s in self.slots],
            "landmarks": self.landmarks.tolist(),
            "bounds": list(self.bounds),
        }

    @classmethod
    def from_dict(cls, d):
        slots = [Slot(int(s["id"]), np.asarray(s["corners"], dtype=float), bool(s["occupied"]))
                 for s in d["slots"]]
        return cls(slots, np.asarray(d["landmarks"], dtype=float).reshape(-1, 3), tuple(d["bounds"]))


@dataclass(frozen=True)
class WorldSpec:
    """Grid-packed lot: back-to-back slot rows separated by driving aisles."""

    n_slots: int = 60
    slot_width: float = 2.5
    slot_length: float = 5.5
    bounds: tuple = (100.0, 50.0)
    aisle: float = 6.0
    n_landmarks: int = 400
    occupancy_rate: float = 0.5


def _slot(sid, center, heading, width, length, occupied):
    c2 = polygon.rectangle(center, heading, width, length)
    return Slot(sid, np.column_stack([c2, np.zeros(4)]), bool(occupied))


def generate_world(spec: WorldSpec, seed: int) -> ParkingLotWorld:
    if spec.n_slots < 1:
        raise ValueError("a world needs at least one slot")
    rng = np.random.default_rng(seed)
    W, H = spec.bounds
    cols = int(W // spec.slot_width)
    # rows come in back-to-back pairs, each pair followed by an aisle
    pair_depth = 2 * spec.slot_length + spec.aisle
    pairs = int((H + spec.aisle) // pair_depth)
    rows = []
    for p in range(pairs):
        y0 = p * pair_depth
        rows.append((y0 + 0.5 * spec.slot_length, -np.pi / 2))
        rows.append((y0 + 1.5 * spec.slot_length, np.pi / 2))
    if H - (pairs * pair_depth) >= spec.slot_length:
        rows.append((pairs * pair_depth + 0.5 * spec.slot_length, -np.pi / 2))
    capacity = cols * len(rows)
    if spec.n_slots > capacity:
        raise InfeasibleWorldError(
            f"{spec.n_slots} slots do not fit in a {W}x{H} m lot (capacity {capacity})")
    slots = []
    for sid in range(spec.n_slots):
        r, c = divmod(sid, cols)
        y, heading = rows[r]
        x = (c + 0.5) * spec.slot_width
        slots.append(_slot(sid, (x, y), heading, spec.slot_width, spec.slot_length,
                           rng.random() < spec.occupancy_rate))
    lm = np.column_stack([rng.uniform(0, W, spec.n_landmarks), rng.uniform(0, H, spec.n_landmarks),
                          rng.uniform(0.3, 3.0, spec.n_landmarks)])
    return ParkingLotWorld(slots, lm, (0.0, W, 0.0, H))


@dataclass(frozen=True)
class RouteWorldSpec:
    """Slots lining both sides of a driving route, landmarks on walls/pillars beyond them."""

    slot_width: float = 2.5
    slot_length: float = 5.5
    slot_gap: float = 0.15
    aisle_half: float = 2.0
    corridor_half: float = 1.3
    skip_rate: float = 0.1
    occupancy_rate: float = 0.5
    jitter: float = 0.05
    landmark_density: float = 8.0  # landmarks per meter of route
    landmark_area_density: float = 0.05  # extra scatter per square meter of the lot
    landmark_lateral: tuple = (8.0, 16.0)
    landmark_height: tuple = (0.3, 3.0)
    min_landmarks: int = 250
    margin: float = 12.0


def world_along_path(path_xy, heading, spec: RouteWorldSpec, seed: int) -> ParkingLotWorld:
    """Place slots perpendicular to a route given as densely sampled points + headings."""
    rng = np.random.default_rng(seed)
    path_xy = np.asarray(path_xy, dtype=float)
    heading = np.asarray(heading, dtype=float)
    seglen = np.linalg.norm(np.diff(path_xy, axis=0), axis=1)
    s = np.concatenate([[0.0], np.cumsum(seglen)])
    total = s[-1]
    coarse = path_xy[:: max(1, len(path_xy) // max(int(total / 0.25), 2))]

    pitch = spec.slot_width + spec.slot_gap
    offset = spec.aisle_half + 0.5 * spec.slot_length
    quads = []
    slots = []
    stations = np.arange(-2 * pitch, total + 2 * pitch, pitch)
    for st in stations:
        i = int(np.clip(np.searchsorted(s, st), 0, len(s) - 1))
        th = heading[i]
        tangent = np.array([np.cos(th), np.sin(th)])
        base = path_xy[i] + (st - s[i]) * tangent
        normal = np.array([-tangent[1], tangent[0]])
        for side in (1.0, -1.0):
            if rng.random() < spec.skip_rate:
                continue
            c = base + side * offset * normal + rng.normal(0, spec.jitter, 2)
            depth_heading = np.arctan2(side * normal[1], side * normal[0]) + rng.normal(0, 0.01)
            quad = polygon.rectangle(c, depth_heading, spec.slot_width, spec.slot_length)
            if polygon.point_distance(coarse, quad).min() < spec.corridor_half:
                continue
            if any(polygon.intersection_area(quad, q) > 1e-9 for q in quads
                   if np.linalg.norm(q.mean(0) - c) < spec.slot_length + spec.slot_width):
                continue
            quads.append(quad)
            slots.append(_slot(len(slots), c, depth_heading, spec.slot_width, spec.slot_length,
                               rng.random() < spec.occupancy_rate))

    n_lm = max(int(spec.landmark_density * (total + 25.0)), spec.min_landmarks)
    # stations run past both ends of the route so short manoeuvres still see structure ahead
    st = rng.uniform(-5.0, total + 20.0, n_lm)
    idx = np.clip(np.searchsorted(s, st), 0, len(s) - 1)
    lat = rng.uniform(*spec.landmark_lateral, n_lm) * rng.choice([-1.0, 1.0], n_lm)
    th = heading[idx]
    t_ = np.column_stack([np.cos(th), np.sin(th)])
    n_ = np.column_stack([-np.sin(th), np.cos(th)])
    xy = path_xy[idx] + (st - s[idx])[:, None] * t_ + lat[:, None] * n_
    lo = path_xy.min(axis=0) - spec.margin - spec.landmark_lateral[1]
    hi = path_xy.max(axis=0) + spec.margin + spec.landmark_lateral[1]
    n_area = int(spec.landmark_area_density * np.prod(hi - lo))
    xy = np.vstack([xy, rng.uniform(lo, hi, (n_area, 2))])
    z = rng.uniform(*spec.landmark_height, len(xy))
    # keep the driving corridor (and the far side of closed loops) clear
    d2 = ((xy[:, None, :] - coarse[None, :, :]) ** 2).sum(-1).min(axis=1)
    landmarks = np.column_stack([xy, z])[d2 > (spec.aisle_half + 1.0) ** 2]

    return ParkingLotWorld(slots, landmarks, (lo[0], hi[0], lo[1], hi[1]))
