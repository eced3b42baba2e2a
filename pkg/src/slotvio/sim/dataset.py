"""Dataset bundles (world + trajectory + sensor log + noise) and their on-disk format.

A dataset directory holds::

    manifest.json      schema/version, ids, seed, noise config
    world.json         ParkingLotWorld
    trajectory.json    GroundTruthTrajectory
    sensors.jsonl      header record, then one record per sensor event {t, kind, payload}
    checksums.sha256   sha256 of the three data files above
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from slotvio.pstrack import SlotObservation
from slotvio.sim.sensors import (BevFrame, Frame, ImuStream, NoiseModel, SensorLog, SensorRates,
                                 WssStream, simulate_sensors)
from slotvio.sim.trajectory import GroundTruthTrajectory, TrajectoryParams, generate_trajectory
from slotvio.sim.world import ParkingLotWorld, RouteWorldSpec, world_along_path

SCHEMA = "slotvio.dataset"
LOG_SCHEMA = "slotvio.sensorlog"
VERSION = 1
_KIND_ORDER = {"imu": 0, "wss": 1, "frame": 2, "bev": 3}


class DatasetError(ValueError):
    pass


@dataclass
class Dataset:
    dataset_id: str
    kind: str
    seed: int
    world: ParkingLotWorld
    trajectory: GroundTruthTrajectory
    log: SensorLog
    noise: NoiseModel


def make_dataset(kind, seed, noise: NoiseModel | None = None, traj_params: TrajectoryParams | None = None,
                 world_spec: RouteWorldSpec | None = None, dataset_id=None) -> Dataset:
    """Build a dataset in memory. The world depends on (kind, seed); noise on seed."""
    noise = NoiseModel() if noise is None else noise
    traj = generate_trajectory(kind, traj_params)
    heading = 2 * np.arctan2(traj.quaternion[:, 3], traj.quaternion[:, 0])
    world = world_along_path(traj.position[:, :2], heading, world_spec or RouteWorldSpec(), seed)
    log = simulate_sensors(world, traj, noise, seed)
    return Dataset(dataset_id or f"{kind}@{traj.length:.2f}", kind, int(seed), world, traj, log, noise)


# --- sensor log JSON-lines ---------------------------------------------------

def log_records(log: SensorLog):
    yield {"t": 0.0, "kind": "header", "payload": {
        "schema": LOG_SCHEMA, "version": VERSION, "rates": asdict(log.rates),
        "truth_gyro_bias": np.asarray(log.truth_gyro_bias).tolist(),
        "truth_accel_bias": np.asarray(log.truth_accel_bias).tolist(),
        "truth_wss_scale": log.truth_wss_scale}}
    events = []
    for i, t in enumerate(log.imu.t):
        events.append((float(t), "imu", {"gyro": log.imu.gyro[i].tolist(), "accel": log.imu.accel[i].tolist()}))
    for i, t in enumerate(log.wss.t):
        events.append((float(t), "wss", {"speed": float(log.wss.speed[i])}))
    for f in log.frames:
        events.append((f.t, "frame", {"ids": f.ids.tolist(), "uv": f.uv.tolist()}))
    for b in log.bev:
        events.append((b.t, "bev", {"observations": [o.to_dict() for o in b.observations]}))
    events.sort(key=lambda e: (e[0], _KIND_ORDER[e[1]]))
    for t, kind, payload in events:
        yield {"t": t, "kind": kind, "payload": payload}


def write_log(log: SensorLog, path):
    with open(path, "w") as fh:
        for rec in log_records(log):
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def read_log(path) -> SensorLog:
    imu_t, gyro, accel, wss_t, speed, frames, bev = [], [], [], [], [], [], []
    header = None
    with open(path) as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            rec = json.loads(line)
            kind, p = rec["kind"], rec["payload"]
            if lineno == 0:
                if kind != "header" or p.get("schema") != LOG_SCHEMA:
                    raise DatasetError(f"{path}: missing sensor-log header")
                if p.get("version") != VERSION:
                    raise DatasetError(f"{path}: schema version {p.get('version')} != {VERSION}")
                header = p
            elif kind == "imu":
                imu_t.append(rec["t"])
                gyro.append(p["gyro"])
                accel.append(p["accel"])
            elif kind == "wss":
                wss_t.append(rec["t"])
                speed.append(p["speed"])
            elif kind == "frame":
                frames.append(Frame(rec["t"], np.asarray(p["ids"], dtype=int),
                                    np.asarray(p["uv"], dtype=float).reshape(-1, 2)))
            elif kind == "bev":
                bev.append(BevFrame(rec["t"], [SlotObservation.from_dict(o) for o in p["observations"]]))
            else:
                raise DatasetError(f"{path}:{lineno + 1}: unknown record kind {kind!r}")
    if header is None:
        raise DatasetError(f"{path}: empty sensor log")
    return SensorLog(ImuStream(np.asarray(imu_t), np.asarray(gyro).reshape(-1, 3), np.asarray(accel).reshape(-1, 3)),
                     WssStream(np.asarray(wss_t), np.asarray(speed)), frames, bev,
                     SensorRates(**header["rates"]), np.asarray(header["truth_gyro_bias"]),
                     np.asarray(header["truth_accel_bias"]), float(header["truth_wss_scale"]))


# --- dataset directories -------------------------------------------------------

_FILES = ("world.json", "trajectory.json", "sensors.jsonl")


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def save_dataset(ds: Dataset, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "world.json").write_text(json.dumps(ds.world.to_dict()))
    (d / "trajectory.json").write_text(json.dumps(ds.trajectory.to_dict()))
    write_log(ds.log, d / "sensors.jsonl")
    manifest = {"schema": SCHEMA, "version": VERSION, "dataset_id": ds.dataset_id, "kind": ds.kind,
                "seed": ds.seed, "noise": ds.noise.to_dict(), "files": list(_FILES)}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    (d / "checksums.sha256").write_text("".join(f"{_sha256(d / f)}  {f}\n" for f in _FILES))
    return d


def load_dataset(directory, verify=True) -> Dataset:
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text())
    except FileNotFoundError as e:
        raise DatasetError(f"{d}: no manifest.json") from e
    if manifest.get("schema") != SCHEMA or manifest.get("version") != VERSION:
        raise DatasetError(f"{d}: unsupported dataset schema {manifest.get('schema')} "
                           f"v{manifest.get('version')} (expected {SCHEMA} v{VERSION})")
    if verify:
        for line in (d / "checksums.sha256").read_text().splitlines():
            digest, name = line.split()
            if _sha256(d / name) != digest:
                raise DatasetError(f"{d / name}: checksum mismatch")
    world = ParkingLotWorld.from_dict(json.loads((d / "world.json").read_text()))
    traj = GroundTruthTrajectory.from_dict(json.loads((d / "trajectory.json").read_text()))
    log = read_log(d / "sensors.jsonl")
    return Dataset(manifest["dataset_id"], manifest["kind"], int(manifest["seed"]), world, traj, log,
                   NoiseModel.from_dict(manifest["noise"]))
