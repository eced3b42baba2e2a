"""Command-line harness: simulate, run, sweep, eval, compare.

Exit codes: 0 success, 1 usage error, 2 data error, 3 method failure.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from slotvio.eval import (EvalError, compare, load_report, make_report, read_odometry, rmse, write_comparison,
                          write_report)
from slotvio.pipeline import METHODS, ConfigError, RunConfig, estimate
from slotvio.sim.dataset import DatasetError, load_dataset, make_dataset, save_dataset
from slotvio.sim.sensors import NoiseModel
from slotvio.sim.trajectory import KINDS, TrajectoryParams

log = logging.getLogger("slotvio")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_METHOD = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _onoff(v):
    if v not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected on|off")
    return v == "on"


def _add_method_flags(p):
    p.add_argument("--method", default="full", choices=METHODS)
    p.add_argument("--keyframes", type=int, default=None, metavar="K", help="sliding-window size")
    p.add_argument("--features", type=int, default=None, metavar="N", help="natural feature budget")
    p.add_argument("--ps-frontend", type=_onoff, default=None, metavar="on|off")
    p.add_argument("--ps-backend", type=_onoff, default=None, metavar="on|off")
    p.add_argument("--reweighting", type=_onoff, default=None, metavar="on|off")
    p.add_argument("--association", choices=("sort", "hard"), default=None)
    p.add_argument("--align", action="store_true", help="rigidly align before RMSE (off by default)")


def build_parser():
    ap = _Parser(prog="slotvio", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="generate a dataset directory")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--length", type=float, default=None)
    p.add_argument("--zero-noise", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("run", help="run one pipeline on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_method_flags(p)

    p = sub.add_parser("sweep", help="grid over methods x seeds x K x N")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--methods", default="full,vins_style")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--keyframes-grid", default="10")
    p.add_argument("--features-grid", default="110")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="RMSE of a stored odometry stream")
    p.add_argument("--dataset", required=True)
    p.add_argument("--odometry", required=True)
    p.add_argument("--align", action="store_true")

    p = sub.add_parser("compare", help="comparison table from report files/directories")
    p.add_argument("reports", nargs="+")
    p.add_argument("--out", default=None)
    return ap


def config_from_args(a, seed=None) -> RunConfig:
    """Method preset plus CLI overrides (an override contradicting an ablation preset is a usage error)."""
    try:
        cfg = RunConfig.for_method(a.method, ps_frontend=a.ps_frontend, ps_backend=a.ps_backend,
                                   association=a.association, seed=a.seed if seed is None else seed)
    except ConfigError as e:
        raise UsageError(str(e)) from e
    try:
        if a.keyframes is not None:
            cfg.backend = replace(cfg.backend, window_size=a.keyframes)
        if a.reweighting is not None:
            cfg.backend = replace(cfg.backend, enable_reweighting=a.reweighting)
        if a.features is not None:
            cfg.frontend = replace(cfg.frontend, max_features=a.features)
    except ValueError as e:
        raise UsageError(str(e)) from e
    return cfg


def _run_one(cfg: RunConfig, ds, out, align=False):
    res = estimate(cfg, ds.log, ds.trajectory)
    rep = make_report(res, ds, cfg.to_dict(), align=align)
    if out is not None:
        write_report(rep, out, res)
    return rep


def cmd_simulate(a):
    noise = NoiseModel.zero() if a.zero_noise else NoiseModel()
    ds = make_dataset(a.kind, a.seed, noise=noise, traj_params=TrajectoryParams(length=a.length))
    path = save_dataset(ds, a.out)
    print(f"wrote {ds.dataset_id} to {path}")
    return EXIT_OK


def cmd_run(a):
    cfg = config_from_args(a)
    ds = load_dataset(a.dataset)
    cfg.dataset = str(a.dataset)
    rep = _run_one(cfg, ds, a.out, a.align)
    print(f"{rep.dataset_id} {rep.method} seed={rep.seed} rmse={rep.rmse} failed={rep.failed}")
    return EXIT_METHOD if rep.failed else EXIT_OK


def _csv(s, typ=str):
    try:
        return [typ(x) for x in s.split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"bad list {s!r}") from e


def cmd_sweep(a):
    methods = _csv(a.methods)
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    seeds, Ks, Ns = _csv(a.seeds, int), _csv(a.keyframes_grid, int), _csv(a.features_grid, int)
    out = Path(a.out)
    reports = []
    any_failed = False
    for seed in seeds:
        ds = make_dataset(a.kind, seed)
        for m, K, N in itertools.product(methods, Ks, Ns):
            ns = argparse.Namespace(method=m, keyframes=K, features=N, ps_frontend=None, ps_backend=None,
                                    reweighting=None, association=None, seed=seed)
            cfg = config_from_args(ns)
            rep = _run_one(cfg, ds, out / f"{a.kind}_{m}_K{K}_N{N}_s{seed}")
            any_failed |= rep.failed
            reports.append(rep)
            print(f"{m:24s} K={K:3d} N={N:4d} seed={seed} rmse={rep.rmse}")
    write_comparison(compare(reports), out)
    return EXIT_METHOD if any_failed else EXIT_OK


def cmd_eval(a):
    ds = load_dataset(a.dataset)
    t, p, _ = read_odometry(a.odometry)
    value = rmse((t, p), (ds.trajectory.t, ds.trajectory.position), align=a.align)
    print(json.dumps({"dataset_id": ds.dataset_id, "rmse": value}))
    return EXIT_OK


def cmd_compare(a):
    reports = [load_report(p) for p in a.reports]
    cmp = compare(reports)
    print(cmp.to_text())
    if a.out:
        write_comparison(cmp, a.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "run": cmd_run, "sweep": cmd_sweep, "eval": cmd_eval,
            "compare": cmd_compare}


def main(argv=None) -> int:
    try:
        a = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING)
    try:
        return COMMANDS[a.cmd](a)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, EvalError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
