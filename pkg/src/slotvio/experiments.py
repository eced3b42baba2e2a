"""Seeded multi-run experiments: method comparisons, ablations, association and sensitivity sweeps.

Every function returns plain dicts of RMSE values so results can be cached as
JSON and checked by tests or scripts.
"""

from __future__ import annotations

import logging
from dataclasses import fields, replace
from functools import lru_cache

import numpy as np

from slotvio.eval import rmse
from slotvio.pipeline import RunConfig, estimate
from slotvio.sim.dataset import make_dataset
from slotvio.sim.sensors import NoiseModel
from slotvio.sim.trajectory import KINDS

log = logging.getLogger(__name__)

SHORT_KINDS = tuple(k for k in KINDS if k != "round")
SEEDS = (0, 1, 2, 3, 4)
# tracker-pose drift used for the association comparison (per metre travelled)
DRIFT = {"tracker_drift": 0.02, "tracker_yaw_drift": 0.002}
K_GRID = (7, 10, 13)
N_GRID = (50, 110, 200)


@lru_cache(maxsize=16)
def dataset(kind, seed, zero_noise=False):
    return make_dataset(kind, seed, noise=NoiseModel.zero() if zero_noise else NoiseModel())


def configure(method, seed=0, **overrides) -> RunConfig:
    """Preset for ``method`` with overrides routed to RunConfig, backend or frontend fields."""
    cfg = RunConfig.for_method(method, seed=seed)
    top = {f.name for f in fields(RunConfig)}
    sections = {"backend": {f.name for f in fields(cfg.backend)},
                "frontend": {f.name for f in fields(cfg.frontend)}}
    for k, v in overrides.items():
        if k in top:
            setattr(cfg, k, v)
            continue
        for sect, names in sections.items():
            if k in names:
                setattr(cfg, sect, replace(getattr(cfg, sect), **{k: v}))
                break
        else:
            raise KeyError(f"unknown override {k!r}")
    return cfg


def run(kind, seed, method, zero_noise=False, **overrides):
    """One run; returns ``{"rmse", "failed", "id_switches", "duplicates", "runtime"}``."""
    ds = dataset(kind, seed, zero_noise)
    res = estimate(configure(method, seed, **overrides), ds.log, ds.trajectory)
    value = rmse(res, ds.trajectory) if len(res.t) else float("nan")
    out = {"rmse": float("inf") if res.failed else value, "failed": res.failed,
           "id_switches": res.id_switches, "duplicates": res.duplicates, "runtime": res.runtime}
    log.info("%s seed=%d %s %s -> %.4f", kind, seed, method, overrides, out["rmse"])
    return out


def rmse_by_seed(kind, method, seeds=SEEDS, **overrides):
    return [run(kind, s, method, **overrides)["rmse"] for s in seeds]


def paired(a, b):
    """Summary of two per-seed RMSE lists (``a`` is the candidate)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return {"a": a.tolist(), "b": b.tolist(), "median_a": float(np.median(a)), "median_b": float(np.median(b)),
            "ratio": float(np.median(a) / np.median(b)), "wins": int(np.sum(a < b)), "n": len(a)}


def zero_noise_sweep(method="full", seed=0):
    return {k: run(k, seed, method, zero_noise=True) for k in KINDS}


def ps_backend_trend(seeds=SEEDS):
    """PS term on (full pipeline) vs fully off on the long loop."""
    return paired(rmse_by_seed("round", "full", seeds), rmse_by_seed("round", "vins_style", seeds))


def ablation_trend(seeds=SEEDS):
    short_fe, short_off = [], []
    for k in SHORT_KINDS:
        short_fe += rmse_by_seed(k, "frontend_ps_only", seeds)
        short_off += rmse_by_seed(k, "vins_style", seeds)
    return {"short_frontend": paired(short_fe, short_off),
            "round_backend": paired(rmse_by_seed("round", "backend_ps_only", seeds),
                                    rmse_by_seed("round", "vins_style", seeds))}


def reweighting_trend(seeds=SEEDS):
    return paired(rmse_by_seed("round", "full", seeds, enable_reweighting=True),
                  rmse_by_seed("round", "full", seeds, enable_reweighting=False))


def association_trend(seeds=SEEDS, drift=None):
    drift = DRIFT if drift is None else drift
    sort = [run("round", s, "full", **drift) for s in seeds]
    hard = [run("round", s, "hard_match_association", **drift) for s in seeds]
    out = paired([r["rmse"] for r in sort], [r["rmse"] for r in hard])
    out["switches_sort"] = [r["id_switches"] for r in sort]
    out["switches_hard"] = [r["id_switches"] for r in hard]
    return out


def sensitivity_trend(seeds=(0, 1, 2), k_grid=K_GRID, n_grid=N_GRID):
    """Per seed: std of RMSE across the K x N grid, PS enabled vs disabled."""
    out = {"std_ps": [], "std_off": [], "grid_ps": [], "grid_off": []}
    for s in seeds:
        for method, key in (("full", "ps"), ("vins_style", "off")):
            vals = [run("round", s, method, window_size=K, max_features=N)["rmse"]
                    for K in k_grid for N in n_grid]
            out[f"grid_{key}"].append(vals)
            out[f"std_{key}"].append(float(np.std(vals)))
    out["wins"] = int(sum(a < b for a, b in zip(out["std_ps"], out["std_off"])))
    out["n"] = len(seeds)
    return out
