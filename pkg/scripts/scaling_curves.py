#!/usr/bin/env python3
"""Reproduce the error-versus-compute scaling study from a sweep config.

Runs the full sweep (certified multilevel schedules at every accuracy target
plus the single-level EM grid), writes the raw rows to CSV, then fits the two
log-log slopes that the package is built around:

  * multilevel: mean realized ledger cost against 1/eps over the targets
  * EM baseline: the balanced diagonal of the (level, steps) grid, pairing
    em_levels[i] with em_steps[i], error read off as rms against the shared
    fine reference

With a gamma=3 ladder the first should sit near 3 and the second near 4.
Every number is a deterministic function of the config (all seeds live there).

Usage: python3 scripts/scaling_curves.py [config] [--out sweep.csv]
"""

import argparse
import math
from collections import defaultdict

import numpy as np

from mlem import bench


def summarize(rows, cfg) -> None:
    spec = cfg.sweep
    ml = defaultdict(list)
    for r in rows:
        if r.method == "mlem":
            ml[r.eps_target].append(r.ledger_cost)
    eps_sorted = sorted(ml, reverse=True)
    costs = [float(np.mean(ml[e])) for e in eps_sorted]
    print("multilevel certified runs:")
    for e, c in zip(eps_sorted, costs):
        print(f"  eps={e:<6g} mean ledger cost {c:12.1f}")
    slope_ml = bench.log_slope([1.0 / e for e in eps_sorted], costs)
    print(f"  slope of log cost vs log(1/eps): {slope_ml:.3f}")

    # balanced diagonal of the EM grid: config lists matched (level, steps)
    em = defaultdict(list)
    for r in rows:
        if r.method == "em":
            em[(r.schedule, r.n_steps)].append((r.mse, r.ledger_cost))
    em_eps, em_costs = [], []
    for level, n in zip(spec.em_levels, spec.em_steps):
        pts = em[(f"level{level}", n)]
        em_eps.append(math.sqrt(float(np.mean([m for m, _ in pts]))))
        em_costs.append(float(np.mean([c for _, c in pts])))
        print(f"  em level {level} @ {n:>4} steps: rms error {em_eps[-1]:.4e} cost {em_costs[-1]:.1f}")
    slope_em = bench.log_slope([1.0 / e for e in em_eps], em_costs)
    print(f"  em baseline slope: {slope_em:.3f}")
    print(f"slope gap (em - multilevel): {slope_em - slope_ml:.3f}")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default="configs/scaling_ou.toml")
    ap.add_argument("--out", default="sweep.csv")
    args = ap.parse_args()

    cfg = bench.load_config(args.config)
    rows = bench.run_sweep(cfg)
    bench.write_results(rows, args.out)
    print(f"wrote {len(rows)} rows to {args.out}")
    summarize(rows, cfg)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
