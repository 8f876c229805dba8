"""Command-line front end.

    mlem run <config.toml> [--out results.csv]
    mlem sweep <config.toml> [--out results.csv]
    mlem fit-gamma <points.csv> --floor 0.0
    mlem train-probs <config.toml> [--out schedule.txt]
    mlem ddpm-check <config.toml>

Exit status is 0 on success, 1 on any configuration or data error, and 2 when
ddpm-check ran but the configured ratio gate failed.
"""

from __future__ import annotations

import argparse
import csv
import sys

from . import bench

__all__ = ["main", "build_parser"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mlem", description="multilevel SDE integration lab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured method, write result rows")
    p_run.add_argument("config")
    p_run.add_argument("--out", default="results.csv")

    p_sweep = sub.add_parser("sweep", help="error-versus-cost grid (certified + EM baselines)")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--out", default="results.csv")

    p_fit = sub.add_parser("fit-gamma", help="fit the cost exponent from a cost/error csv")
    p_fit.add_argument("csv", help="csv with 'cost' and 'error' columns")
    p_fit.add_argument("--floor", type=float, default=0.0, help="additive error plateau")

    p_train = sub.add_parser("train-probs", help="train a learned activation schedule")
    p_train.add_argument("config")
    p_train.add_argument("--out", default=None, help="override the [train] out path")

    p_ddpm = sub.add_parser("ddpm-check", help="discrete-sampler gap halving diagnostic")
    p_ddpm.add_argument("config")
    return parser


def _load_points(path):
    costs, errors = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or ())
        if not {"cost", "error"} <= cols:
            raise ValueError(f"{path} needs 'cost' and 'error' columns, has {sorted(cols)}")
        for rec in reader:
            costs.append(float(rec["cost"]))
            errors.append(float(rec["error"]))
    return costs, errors


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            rows = bench.run_single(bench.load_config(args.config))
            bench.write_results(rows, args.out)
            print(f"wrote {len(rows)} rows to {args.out}")
            return 0
        if args.command == "sweep":
            rows = bench.run_sweep(bench.load_config(args.config))
            bench.write_results(rows, args.out)
            print(f"wrote {len(rows)} rows to {args.out}")
            return 0
        if args.command == "fit-gamma":
            costs, errors = _load_points(args.csv)
            fit = bench.fit_gamma(costs, errors, floor=args.floor)
            print(
                f"gamma_hat={fit.gamma_hat!r} slope={fit.slope!r} "
                f"n={fit.n_points} max_resid={fit.max_abs_residual!r}"
            )
            return 0
        if args.command == "train-probs":
            cfg = bench.load_config(args.config)
            params, history, path = bench.train_probs(cfg, out_path=args.out)
            first, last = history[0], history[-1]
            print(
                f"trained {len(history)} iterations: objective "
                f"{first['objective']:.6g} -> {last['objective']:.6g}"
            )
            for j, k in enumerate(params.levels):
                print(f"level {k}: alpha={params.alpha[j]!r} beta={params.beta[j]!r}")
            print(f"wrote schedule to {path}")
            if cfg.matchup is not None:
                rows = bench.adaptive_matchup(cfg, params)
                bench.write_results(rows, cfg.matchup.out)
                wins = 0
                by_budget = {}
                for r in rows:
                    by_budget.setdefault(r.trial, {})[r.schedule] = r.mse
                for b_idx in sorted(by_budget):
                    mses = by_budget[b_idx]
                    budget = cfg.matchup.budgets[b_idx]
                    won = mses["learned"] < min(mses["inverse_cost"], mses["power_law"])
                    wins += won
                    print(
                        f"budget {budget!r}: learned={mses['learned']:.6g} "
                        f"inverse_cost={mses['inverse_cost']:.6g} "
                        f"power_law={mses['power_law']:.6g}"
                        f"{' <- learned wins' if won else ''}"
                    )
                print(
                    f"learned schedule wins {wins}/{len(by_budget)} matched-cost points "
                    f"(rows in {cfg.matchup.out})"
                )
            return 0
        if args.command == "ddpm-check":
            cfg = bench.load_config(args.config)
            results, ratios, ok = bench.ddpm_check(cfg)
            for r in results:
                print(f"beta={r.beta!r} t_context={r.context_time!r} gap={r.mean_gap!r}")
            for (r1, r2), ratio in zip(zip(results, results[1:]), ratios):
                print(f"ratio beta={r1.beta!r} / beta={r2.beta!r}: {ratio!r}")
            if cfg.ddpm.ratio_range is not None:
                lo, hi = cfg.ddpm.ratio_range
                print(f"gate [{lo!r}, {hi!r}]: {'pass' if ok else 'FAIL'}")
                if not ok:
                    return 2
            return 0
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
