"""Trajectory error metrics, run reports and comparison tables."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

REPORT_SCHEMA = "slotvio.report"
ODOMETRY_SCHEMA = "slotvio.odometry"
COMPARE_SCHEMA = "slotvio.compare"
VERSION = 1


class EvalError(ValueError):
    pass


def _stream(x):
    """Accept ``(t, positions)`` or any object with ``t`` and ``position``."""
    if isinstance(x, tuple):
        t, p = x
    else:
        t, p = x.t, x.position
    t = np.asarray(t, dtype=float).reshape(-1)
    p = np.asarray(p, dtype=float)
    if p.size != 3 * len(t):
        raise EvalError("positions must be 3-vectors, one per timestamp")
    p = p.reshape(len(t), 3)
    return t, p


def interpolate_truth(truth, t):
    tt, tp = _stream(truth)
    return np.column_stack([np.interp(t, tt, tp[:, k]) for k in range(3)])


def umeyama_se3(src, dst):
    """Rigid ``(R, t)`` minimizing ``|R src + t - dst|`` (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    C = (dst - mu_d).T @ (src - mu_s)
    U, _, Vt = np.linalg.svd(C)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    return R, mu_d - R @ mu_s


def position_errors(estimated, truth, align=False):
    """Per-sample 3D error vectors over the overlapping time range."""
    et, ep = _stream(estimated)
    tt, _ = _stream(truth)
    if len(et) == 0 or len(tt) == 0:
        raise EvalError("empty trajectory")
    keep = (et >= tt[0] - 1e-9) & (et <= tt[-1] + 1e-9)
    if not keep.any():
        raise EvalError("estimate and truth do not overlap in time")
    et, ep = et[keep], ep[keep]
    gt = interpolate_truth(truth, et)
    if align and len(et) >= 3:
        R, t = umeyama_se3(ep, gt)
        ep = ep @ R.T + t
    return et, ep - gt


def rmse(estimated, truth, align=False) -> float:
    """Absolute position RMSE; truth is linearly interpolated to the estimate times."""
    _, e = position_errors(estimated, truth, align)
    return float(np.sqrt(np.mean(np.sum(e * e, axis=1))))


@dataclass
class EvalReport:
    dataset_id: str
    method: str
    seed: int
    rmse: float
    rmse_axes: list
    max_error: float
    trajectory_length: float
    n_poses: int
    failed: bool = False
    failure: str = ""
    id_switches: int = 0
    duplicate_slots: int = 0
    n_keyframes: int = 0
    cost_trace: list = field(default_factory=list)
    path_estimate: list = field(default_factory=list)  # x-y polyline
    path_truth: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    runtime: float = 0.0  # wall clock; never part of the serialized report

    def to_dict(self):
        d = asdict(self)
        d.pop("runtime")
        return {"schema": REPORT_SCHEMA, "version": VERSION, **d}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if d.pop("schema", REPORT_SCHEMA) != REPORT_SCHEMA or d.pop("version", VERSION) != VERSION:
            raise EvalError("unsupported report schema/version")
        return cls(**d)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def _clean(x):
    """JSON-safe floats (NaN/inf become None)."""
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        return float(x) if np.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    return x


def make_report(result, dataset, cfg_dict, align=False) -> EvalReport:
    """Score an odometry result against the dataset's ground truth."""
    traj = dataset.trajectory
    truth = (traj.t, traj.position)
    if len(result.t):
        t, e = position_errors(result, truth, align)
        err = np.linalg.norm(e, axis=1)
        value = float(np.sqrt(np.mean(err ** 2)))
        axes = np.sqrt(np.mean(e * e, axis=0)).tolist()
        gt = interpolate_truth(truth, t)
        path_t = gt[:, :2].round(6).tolist()
        path_e = result.position[:len(t), :2].round(6).tolist() if not align else (gt + e)[:, :2].round(6).tolist()
        emax = float(err.max())
    else:
        value, axes, emax, path_t, path_e = float("nan"), [float("nan")] * 3, float("nan"), [], []
    trace = [_clean({k: r[k] for k in ("t", "iterations", "initial_cost", "final_cost", "terms", "reason")})
             for r in result.solve_reports]
    return EvalReport(dataset.dataset_id, cfg_dict.get("method", ""), int(cfg_dict.get("seed", 0)),
                      _clean(value), _clean(axes), _clean(emax), float(traj.length), int(len(result.t)),
                      bool(result.failed), result.failure, int(result.id_switches), int(result.duplicates),
                      int(result.n_keyframes), trace, path_e, path_t, _clean(cfg_dict), float(result.runtime))


def write_odometry(result, path):
    """JSON-lines pose stream with a schema header."""
    with open(path, "w") as f:
        f.write(json.dumps({"schema": ODOMETRY_SCHEMA, "version": VERSION}) + "\n")
        for t, p, q in zip(result.t, result.position, result.quaternion):
            f.write(json.dumps({"t": float(t), "p": [float(x) for x in p], "q": [float(x) for x in q]}) + "\n")


def read_odometry(path):
    """Returns ``(t, positions, quaternions)``."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise EvalError(f"{path}: empty odometry file")
    head = json.loads(lines[0])
    if head.get("schema") != ODOMETRY_SCHEMA or head.get("version") != VERSION:
        raise EvalError(f"{path}: unsupported odometry schema/version")
    recs = [json.loads(x) for x in lines[1:] if x.strip()]
    return (np.array([r["t"] for r in recs]), np.array([r["p"] for r in recs]).reshape(-1, 3),
            np.array([r["q"] for r in recs]).reshape(-1, 4))


def write_report(report: EvalReport, out_dir, result=None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "timing.json").write_text(json.dumps({"runtime_s": report.runtime}))
    if result is not None:
        write_odometry(result, out / "odometry.jsonl")
    return out


def load_report(path) -> EvalReport:
    p = Path(path)
    if p.is_dir():
        p = p / "report.json"
    return EvalReport.from_dict(json.loads(p.read_text()))


# --- comparison ------------------------------------------------------------------

@dataclass
class Comparison:
    rows: list        # dataset ids, in first-seen order
    methods: list     # columns, in first-seen order
    cells: dict       # (row, method) -> mean rmse (float) or "fail"
    counts: dict      # (row, method) -> number of runs
    plot_data: dict   # row -> {"truth": polyline, method: [polylines per seed]}

    def column_means(self):
        """Mean over the non-failed cells of each column."""
        out = {}
        for m in self.methods:
            vals = [v for (r, mm), v in self.cells.items() if mm == m and v != "fail"]
            out[m] = float(np.mean(vals)) if vals else None
        return out

    def to_text(self, precision=3):
        head = ["trajectory"] + list(self.methods)
        body = []
        for r in self.rows:
            line = [r]
            for m in self.methods:
                v = self.cells.get((r, m))
                line.append("-" if v is None else v if v == "fail" else f"{v:.{precision}f}")
            body.append(line)
        means = self.column_means()
        body.append(["mean"] + ["-" if means[m] is None else f"{means[m]:.{precision}f}" for m in self.methods])
        widths = [max(len(str(row[i])) for row in [head] + body) for i in range(len(head))]
        fmt = lambda row: "  ".join(str(c).ljust(w) if i == 0 else str(c).rjust(w)
                                    for i, (c, w) in enumerate(zip(row, widths)))
        return "\n".join([fmt(head), "  ".join("-" * w for w in widths)] + [fmt(b) for b in body])

    def to_dict(self):
        return {"schema": COMPARE_SCHEMA, "version": VERSION, "rows": self.rows, "methods": self.methods,
                "cells": [{"trajectory": r, "method": m, "rmse": v, "runs": self.counts[(r, m)]}
                          for (r, m), v in self.cells.items()],
                "column_means": self.column_means()}


def _row_key(rep: EvalReport):
    return rep.dataset_id.split("@")[0]


def compare(reports) -> Comparison:
    """Rows are trajectories, columns methods, cells the mean RMSE over seeds.

    A cell containing any failed run renders as ``"fail"`` and is left out of
    the column means. Reports of one row must share a dataset id.
    """
    reports = list(reports)
    if not reports:
        raise EvalError("no reports to compare")
    rows, methods, ids = [], [], {}
    groups: dict = {}
    plot: dict = {}
    for rep in reports:
        r = _row_key(rep)
        if r not in ids:
            ids[r] = rep.dataset_id
            rows.append(r)
        elif ids[r] != rep.dataset_id:
            raise EvalError(f"row {r!r} mixes dataset ids {ids[r]!r} and {rep.dataset_id!r}")
        if rep.method not in methods:
            methods.append(rep.method)
        groups.setdefault((r, rep.method), []).append(rep)
        pd = plot.setdefault(r, {"truth": rep.path_truth})
        pd.setdefault(rep.method, []).append(rep.path_estimate)
    cells, counts = {}, {}
    for key, reps in groups.items():
        counts[key] = len(reps)
        if any(x.failed or x.rmse is None for x in reps):
            cells[key] = "fail"
        else:
            cells[key] = float(np.mean([x.rmse for x in reps]))
    return Comparison(rows, methods, cells, counts, plot)


def write_comparison(cmp: Comparison, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare.txt").write_text(cmp.to_text() + "\n")
    (out / "compare.json").write_text(json.dumps(cmp.to_dict(), indent=1, sort_keys=True))
    (out / "plot_data.json").write_text(json.dumps(cmp.plot_data))
    return out
