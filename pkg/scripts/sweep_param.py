"""Sweep one config field for a method over trajectory families and seeds.

    PYTHONPATH=src python3 scripts/sweep_param.py --param ps_weight_scale --values 0.3,1,3 --kinds round
    PYTHONPATH=src python3 scripts/sweep_param.py --method frontend_ps_only --param ps_corner_info_scale \
        --values 1,0.1,0.03 --kinds short --baseline vins_style
"""

import argparse
import json
import logging
import time

import numpy as np

from slotvio import experiments as ex


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--method", default="full")
    ap.add_argument("--param", required=True)
    ap.add_argument("--values", required=True, help="comma list (parsed as float, int or bool)")
    ap.add_argument("--kinds", default="round", help="comma list; 'short' = all short families")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    ap.add_argument("--baseline", default=None, help="method to compare against (run once per kind/seed)")
    ap.add_argument("--out", default=None)
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING)

    kinds = ex.SHORT_KINDS if a.kinds == "short" else tuple(a.kinds.split(","))
    seeds = [int(s) for s in a.seeds.split(",")]
    values = [json.loads(v.lower()) for v in a.values.split(",")]
    out = {"method": a.method, "param": a.param, "kinds": kinds, "seeds": seeds, "runs": {}}
    if a.baseline:
        base = [ex.run(k, s, a.baseline)["rmse"] for k in kinds for s in seeds]
        out["baseline"] = base
        print(f"{a.baseline:>12s}: median {np.median(base):.4f}")
    for v in values:
        t0 = time.perf_counter()
        vals = [ex.run(k, s, a.method, **{a.param: v})["rmse"] for k in kinds for s in seeds]
        out["runs"][str(v)] = vals
        line = f"{a.param}={v!s:>8}: median {np.median(vals):.4f}"
        if a.baseline:
            line += f"  wins {int(np.sum(np.array(vals) < np.array(base)))}/{len(vals)}"
        print(f"{line}  ({time.perf_counter() - t0:.0f}s)", flush=True)
    if a.out:
        with open(a.out, "w") as f:
            json.dump(out, f, indent=1)


if __name__ == "__main__":
    main()
