"""Run the multi-seed trend experiments and write their results as JSON.

    PYTHONPATH=src python3 scripts/run_trends.py --out results/trends.json [--only ps_backend,association]
"""

import argparse
import json
import logging
import time
from pathlib import Path

from slotvio import experiments as ex

EXPERIMENTS = {
    "zero_noise": ex.zero_noise_sweep,
    "ps_backend": ex.ps_backend_trend,
    "ablation": ex.ablation_trend,
    "reweighting": ex.reweighting_trend,
    "association": ex.association_trend,
    "sensitivity": ex.sensitivity_trend,
}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="results/trends.json")
    ap.add_argument("--only", default=",".join(EXPERIMENTS))
    ap.add_argument("-v", "--verbose", action="store_true")
    a = ap.parse_args()
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    results = json.loads(out.read_text()) if out.exists() else {}
    for name in a.only.split(","):
        t0 = time.perf_counter()
        results[name] = EXPERIMENTS[name]()
        print(f"{name}: {time.perf_counter() - t0:.0f}s", json.dumps(results[name], default=str)[:400], flush=True)
        out.write_text(json.dumps(results, indent=1, default=str))


if __name__ == "__main__":
    main()
