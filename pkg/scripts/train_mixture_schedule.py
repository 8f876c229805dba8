#!/usr/bin/env python3
"""Train a learned activation schedule and race it at matched expected cost.

Equivalent to `mlem train-probs <config>` but keeps the trained parameters in
hand to print the per-level story: the learned probabilities, the objective
trace, and the matched-cost matchup against the two fixed families.
"""

import argparse

import numpy as np

from mlem import bench


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("config", nargs="?", default="configs/mixture_train.toml")
    ap.add_argument("--out", default=None, help="override the [train] out path")
    args = ap.parse_args()

    cfg = bench.load_config(args.config)
    params, history, path = bench.train_probs(cfg, out_path=args.out)
    print(f"objective: {history[0]['objective']:.6g} -> {history[-1]['objective']:.6g} "
          f"over {len(history)} iterations (schedule written to {path})")

    problem = bench.build_problem(cfg)
    times = problem.times(cfg.train.n_steps)[:-1]
    probs = params.prob_matrix(times)
    for i, k in enumerate(params.levels):
        col = probs[:, i]
        print(f"  level {k}: alpha={params.alpha[i]:+.4f} beta={params.beta[i]:+.4f} "
              f"p(t) in [{col.min():.4f}, {col.max():.4f}] mean {col.mean():.4f}")

    if cfg.matchup is None:
        return 0
    rows = bench.adaptive_matchup(cfg, params)
    bench.write_results(rows, cfg.matchup.out)
    by_budget = {}
    for r in rows:
        by_budget.setdefault(r.trial, {})[r.schedule] = r.mse
    wins = 0
    print(f"matched-cost matchup ({len(by_budget)} budgets, rows in {cfg.matchup.out}):")
    for b_idx in sorted(by_budget):
        mses = by_budget[b_idx]
        best_fixed = min(mses["inverse_cost"], mses["power_law"])
        won = mses["learned"] < best_fixed
        wins += won
        gain = 100.0 * (1.0 - mses["learned"] / best_fixed)
        print(f"  budget {cfg.matchup.budgets[b_idx]:>7g}: learned {mses['learned']:.4e} "
              f"vs best fixed {best_fixed:.4e} (error cut {gain:.1f}%){'  <- win' if won else ''}")
    print(f"learned schedule wins {wins}/{len(by_budget)} matched-cost points")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
