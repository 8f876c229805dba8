"""Config-driven benchmark harness.

Experiments are described in TOML: a [problem] table (the SDE testbed), a
[ladder] table (the estimator hierarchy and its cost model), and one table per
workflow ([run], [sweep], [train], [ddpm]).  Unknown keys anywhere are hard
errors so a typo cannot silently fall back to a default.

Results go to CSV with the fixed header

    method,schedule,eps_target,mse,expected_cost,ledger_cost,wall_ms,n_steps,trial,plan_seed

using repr() for floats (shortest round-trip form).  Reruns of the same config
are byte-identical except for the wall_ms column.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

from . import adaptive
from .diffusion import GaussianMixture, backward_problem, gap_halving_ratios
from .drift import LinearDrift, make_synthetic_ladder
from .em import em_rollout_batch, em_solve
from .mlem import (
    LevelSchedule,
    derive_plan_seed,
    expected_cost,
    mlem_rollout_batch,
    mlem_solve,
    theorem_parameters,
)
from .problems import NoiseSchedule, SdeProblem

__all__ = [
    "ResultRow",
    "RESULT_FIELDS",
    "ExperimentConfig",
    "load_config",
    "build_problem",
    "run_experiment",
    "run_single",
    "run_sweep",
    "train_probs",
    "adaptive_matchup",
    "ddpm_check",
    "fit_gamma",
    "GammaFit",
    "log_slope",
    "scale_to_match_cost",
    "write_results",
    "read_results",
]

RESULT_FIELDS = (
    "method",
    "schedule",
    "eps_target",
    "mse",
    "expected_cost",
    "ledger_cost",
    "wall_ms",
    "n_steps",
    "trial",
    "plan_seed",
)


@dataclass
class ResultRow:
    method: str
    schedule: str
    eps_target: float
    mse: float
    expected_cost: float
    ledger_cost: float
    wall_ms: float
    n_steps: int
    trial: int
    plan_seed: int | None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_results(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RESULT_FIELDS)
        for r in rows:
            writer.writerow([_fmt(getattr(r, name)) for name in RESULT_FIELDS])


def read_results(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_FIELDS:
            raise ValueError(f"unexpected results header in {path}: {reader.fieldnames}")
        for rec in reader:
            rows.append(
                ResultRow(
                    method=rec["method"],
                    schedule=rec["schedule"],
                    eps_target=float(rec["eps_target"]),
                    mse=float(rec["mse"]),
                    expected_cost=float(rec["expected_cost"]),
                    ledger_cost=float(rec["ledger_cost"]),
                    wall_ms=float(rec["wall_ms"]),
                    n_steps=int(rec["n_steps"]),
                    trial=int(rec["trial"]),
                    plan_seed=int(rec["plan_seed"]) if rec["plan_seed"] else None,
                )
            )
    return rows


# --- configuration ---------------------------------------------------------


def _check_keys(table: dict, section: str, required: tuple, optional: dict) -> dict:
    unknown = set(table) - set(required) - set(optional)
    if unknown:
        raise ValueError(f"unknown keys in [{section}]: {sorted(unknown)}")
    missing = set(required) - set(table)
    if missing:
        raise ValueError(f"missing keys in [{section}]: {sorted(missing)}")
    merged = dict(optional)
    merged.update(table)
    return merged


@dataclass
class ProblemSpec:
    kind: str
    dim: int
    sigma: float
    T: float
    rate: float = 0.0
    x0: object = None
    t_min: float = 0.0
    noise_resolution: int | None = None
    mixture: dict | None = None


@dataclass
class LadderSpec:
    seed: int
    c: float
    gamma: float
    k_max: int
    k_min: int | None = None
    n_terms: int = 3
    freq_range: tuple = (4.0, 12.0)
    space_scale: float = 0.2


@dataclass
class RunSpec:
    method: str
    n_steps: int
    n_trials: int = 1
    noise_seed: int = 0
    noise_stream_base: int = 0
    plan_seed: int = 0
    cost_mode: str = "full"
    reference_n_steps: int | None = None
    schedule: str = "theorem"
    eps_target: float | None = None
    L: float | None = None
    C: float | None = None
    exponent: float | None = None
    params_file: str | None = None
    active_levels: tuple | None = None
    level: int | None = None


@dataclass
class SweepSpec:
    eps_targets: tuple
    eta: float
    n_trials: int
    em_levels: tuple
    em_steps: tuple
    reference_n_steps: int
    L: float
    noise_seed: int = 0
    noise_stream_base: int = 0
    plan_seed: int = 0
    cost_mode: str = "paper"


@dataclass
class TrainSpec:
    n_steps: int
    iters: int = 50
    batch: int = 300
    lr: float = 0.05
    lam: float = 0.1
    active_levels: tuple | None = None
    reference: str = "fine-top"
    ref_n_steps: int | None = None
    init_prob: object = 0.5  # scalar, or one value per active level
    init_file: str | None = None
    seed: int = 0
    noise_seed: int = 0
    noise_stream_base: int = 0
    out: str = "learned_schedule.txt"


@dataclass
class MatchupSpec:
    budgets: tuple
    n_streams: int = 64
    n_plans: int = 8
    ref_n_steps: int = 1000
    noise_seed: int = 123
    plan_seed: int = 900
    out: str = "matchup.csv"


@dataclass
class DdpmSpec:
    betas: tuple
    kind: str = "ddpm"
    context_time: float = 1.0
    n_probe: int = 512
    seed: int = 0
    z_mode: str = "zero"
    ratio_range: tuple | None = None


@dataclass
class ExperimentConfig:
    problem: ProblemSpec
    ladder: LadderSpec
    run: RunSpec | None = None
    sweep: SweepSpec | None = None
    train: TrainSpec | None = None
    matchup: MatchupSpec | None = None
    ddpm: DdpmSpec | None = None
    extras: dict = dc_field(default_factory=dict)


def load_config(path) -> ExperimentConfig:
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    known = {"problem", "ladder", "run", "sweep", "train", "matchup", "ddpm"}
    unknown = set(raw) - known
    if unknown:
        raise ValueError(f"unknown top-level sections: {sorted(unknown)}")
    if "problem" not in raw or "ladder" not in raw:
        raise ValueError("config needs [problem] and [ladder] sections")

    p = _check_keys(
        raw["problem"],
        "problem",
        ("kind", "dim", "sigma", "T"),
        {
            "rate": 0.0,
            "x0": None,
            "t_min": 0.0,
            "noise_resolution": None,
            "mixture": None,
        },
    )
    if p["kind"] not in ("ou-perturbed", "mixture-ddpm"):
        raise ValueError(f"unknown problem kind {p['kind']!r}")
    if p["mixture"] is not None:
        p["mixture"] = _check_keys(
            p["mixture"], "problem.mixture", ("weights", "means", "variances"), {}
        )
    if p["kind"] == "mixture-ddpm" and p["mixture"] is None:
        raise ValueError("mixture-ddpm problems need a [problem.mixture] table")
    problem = ProblemSpec(**p)

    l = _check_keys(
        raw["ladder"],
        "ladder",
        ("seed", "c", "gamma", "k_max"),
        {"k_min": None, "n_terms": 3, "freq_range": (4.0, 12.0), "space_scale": 0.2},
    )
    l["freq_range"] = tuple(float(v) for v in l["freq_range"])
    ladder = LadderSpec(**l)

    cfg = ExperimentConfig(problem=problem, ladder=ladder)
    if "run" in raw:
        r = _check_keys(
            raw["run"],
            "run",
            ("method", "n_steps"),
            {
                "n_trials": 1,
                "noise_seed": 0,
                "noise_stream_base": 0,
                "plan_seed": 0,
                "cost_mode": "full",
                "reference_n_steps": None,
                "schedule": "theorem",
                "eps_target": None,
                "L": None,
                "C": None,
                "exponent": None,
                "params_file": None,
                "active_levels": None,
                "level": None,
            },
        )
        if r["active_levels"] is not None:
            r["active_levels"] = tuple(int(k) for k in r["active_levels"])
        cfg.run = RunSpec(**r)
    if "sweep" in raw:
        s = _check_keys(
            raw["sweep"],
            "sweep",
            ("eps_targets", "eta", "n_trials", "em_levels", "em_steps", "reference_n_steps", "L"),
            {"noise_seed": 0, "noise_stream_base": 0, "plan_seed": 0, "cost_mode": "paper"},
        )
        s["eps_targets"] = tuple(float(e) for e in s["eps_targets"])
        s["em_levels"] = tuple(int(k) for k in s["em_levels"])
        s["em_steps"] = tuple(int(n) for n in s["em_steps"])
        cfg.sweep = SweepSpec(**s)
    if "train" in raw:
        t = _check_keys(
            raw["train"],
            "train",
            ("n_steps",),
            {
                "iters": 50,
                "batch": 300,
                "lr": 0.05,
                "lam": 0.1,
                "active_levels": None,
                "reference": "fine-top",
                "ref_n_steps": None,
                "init_prob": 0.5,
                "init_file": None,
                "seed": 0,
                "noise_seed": 0,
                "noise_stream_base": 0,
                "out": "learned_schedule.txt",
            },
        )
        if t["active_levels"] is not None:
            t["active_levels"] = tuple(int(k) for k in t["active_levels"])
        cfg.train = TrainSpec(**t)
    if "matchup" in raw:
        m = _check_keys(
            raw["matchup"],
            "matchup",
            ("budgets",),
            {
                "n_streams": 64,
                "n_plans": 8,
                "ref_n_steps": 1000,
                "noise_seed": 123,
                "plan_seed": 900,
                "out": "matchup.csv",
            },
        )
        m["budgets"] = tuple(float(b) for b in m["budgets"])
        cfg.matchup = MatchupSpec(**m)
    if "ddpm" in raw:
        d = _check_keys(
            raw["ddpm"],
            "ddpm",
            ("betas",),
            {
                "kind": "ddpm",
                "context_time": 1.0,
                "n_probe": 512,
                "seed": 0,
                "z_mode": "zero",
                "ratio_range": None,
            },
        )
        d["betas"] = tuple(float(b) for b in d["betas"])
        if d["kind"] not in ("ddpm", "ddim"):
            raise ValueError(f"unknown ddpm kind {d['kind']!r}")
        if d["ratio_range"] is not None:
            d["ratio_range"] = tuple(float(v) for v in d["ratio_range"])
        cfg.ddpm = DdpmSpec(**d)
    return cfg


def build_problem(cfg: ExperimentConfig) -> SdeProblem:
    p, l = cfg.problem, cfg.ladder
    k_min = l.k_min if l.k_min is not None else -math.floor(math.log2(l.c))
    if p.kind == "ou-perturbed":
        truth = LinearDrift(p.dim, p.rate)
        ladder = make_synthetic_ladder(
            truth,
            l.c,
            l.gamma,
            k_min,
            l.k_max,
            l.seed,
            n_terms=l.n_terms,
            freq_range=l.freq_range,
            space_scale=l.space_scale,
        )
        x0 = p.x0
        if x0 is not None:
            x0 = np.full(p.dim, float(x0)) if np.isscalar(x0) else np.asarray(x0, dtype=np.float64)
        return SdeProblem(
            ladder=ladder,
            sigma=NoiseSchedule.constant(p.sigma),
            T=p.T,
            dim=p.dim,
            x0=x0,
            direction="forward",
            noise_resolution=p.noise_resolution,
        )
    # mixture-ddpm: reverse-time sampling of a diffused Gaussian mixture
    mixture = GaussianMixture.from_dict(p.mixture)
    if mixture.dim != p.dim:
        raise ValueError("mixture dimension does not match problem dim")
    if p.sigma != 1.0:
        raise ValueError("the reverse-time sampler uses unit diffusion; set sigma = 1.0")
    return backward_problem(
        mixture,
        c=l.c,
        gamma=l.gamma,
        k_min=k_min,
        k_max=l.k_max,
        seed=l.seed,
        T=p.T,
        t_min=p.t_min,
        noise_resolution=p.noise_resolution or 1,
        n_terms=l.n_terms,
        freq_range=l.freq_range,
        space_scale=l.space_scale,
    )


# --- workflows ---------------------------------------------------------------


def _make_driver(problem: SdeProblem, seed: int):
    from .rng import NoiseDriver

    return NoiseDriver(master_seed=seed, dim=problem.dim)


def _build_schedule(cfg: ExperimentConfig, problem: SdeProblem, spec: RunSpec):
    ladder = problem.ladder
    levels = spec.active_levels or tuple(range(ladder.k_min, ladder.k_max + 1))
    if spec.schedule == "theorem":
        if spec.eps_target is None or spec.L is None:
            raise ValueError("theorem schedule needs eps_target and L")
        eta = problem.span / spec.n_steps
        tp = theorem_parameters(spec.eps_target, spec.L, problem.span, eta, ladder.c, ladder.gamma)
        if tp.k_max > ladder.k_max:
            raise ValueError(
                f"certified cutoff k_max={tp.k_max} exceeds the built ladder (k_max={ladder.k_max})"
            )
        return tp.schedule(), tp.levels
    if spec.schedule == "inverse_cost":
        if spec.C is None:
            raise ValueError("inverse_cost schedule needs C")
        return LevelSchedule.inverse_cost(spec.C, ladder, levels), levels
    if spec.schedule == "power_law":
        if spec.C is None or spec.exponent is None:
            raise ValueError("power_law schedule needs C and exponent")
        return LevelSchedule.power_law(spec.C, spec.exponent, levels), levels
    if spec.schedule == "learned":
        if spec.params_file is None:
            raise ValueError("learned schedule needs params_file")
        params = adaptive.load_params(spec.params_file)
        if params.levels != tuple(levels):
            raise ValueError("learned schedule levels do not match active_levels")
        return params.as_schedule(), levels
    raise ValueError(f"unknown schedule {spec.schedule!r}")


def run_single(cfg: ExperimentConfig) -> list:
    """One method at fixed settings, n_trials independent noise streams."""
    if cfg.run is None:
        raise ValueError("config has no [run] section")
    spec = cfg.run
    problem = build_problem(cfg)
    driver = _make_driver(problem, spec.noise_seed)
    ladder = problem.ladder
    streams = [spec.noise_stream_base + j for j in range(spec.n_trials)]

    refs = None
    if spec.reference_n_steps is not None:
        # fine-grid top-level EM on the same noise streams
        refs = em_rollout_batch(problem, spec.reference_n_steps, driver, streams)

    rows = []
    if spec.method == "em":
        if spec.level is None:
            raise ValueError("em runs need a ladder level")
        for j, stream in enumerate(streams):
            t0 = time.perf_counter()
            traj = em_solve(problem, spec.level, spec.n_steps, driver, stream)
            wall = (time.perf_counter() - t0) * 1e3
            mse = float("nan") if refs is None else float(np.mean((traj.final_state - refs[j]) ** 2))
            rows.append(
                ResultRow(
                    method="em",
                    schedule=f"level{spec.level}",
                    eps_target=float("nan"),
                    mse=mse,
                    expected_cost=spec.n_steps * ladder.cost_units(spec.level),
                    ledger_cost=traj.ledger.total,
                    wall_ms=wall,
                    n_steps=spec.n_steps,
                    trial=j,
                    plan_seed=None,
                )
            )
        return rows

    if spec.method != "mlem":
        raise ValueError(f"unknown method {spec.method!r}")
    schedule, levels = _build_schedule(cfg, problem, spec)
    times = problem.times(spec.n_steps)[:-1]
    exp_cost = expected_cost(
        schedule,
        ladder,
        spec.n_steps,
        times=times,
        active_levels=levels,
        cost_mode=spec.cost_mode,
    )
    for j, stream in enumerate(streams):
        seed = derive_plan_seed(spec.plan_seed, j)
        t0 = time.perf_counter()
        traj = mlem_solve(
            problem,
            schedule,
            spec.n_steps,
            driver,
            stream,
            seed,
            active_levels=levels,
            cost_mode=spec.cost_mode,
        )
        wall = (time.perf_counter() - t0) * 1e3
        mse = float("nan") if refs is None else float(np.mean((traj.final_state - refs[j]) ** 2))
        rows.append(
            ResultRow(
                method="mlem",
                schedule=schedule.kind,
                eps_target=spec.eps_target if spec.eps_target is not None else float("nan"),
                mse=mse,
                expected_cost=exp_cost,
                ledger_cost=traj.ledger.total,
                wall_ms=wall,
                n_steps=spec.n_steps,
                trial=j,
                plan_seed=seed,
            )
        )
    return rows


def run_sweep(cfg: ExperimentConfig) -> list:
    """Error-versus-cost grid: certified multilevel runs plus plain EM baselines.

    For every accuracy target the guarantee-tuned schedule is rerun on
    n_trials noise streams; EM baselines cover em_levels x em_steps on the
    same streams.  All runs share one fine reference per stream (top-level
    EM at reference_n_steps on the same noise), so squared errors are
    directly comparable.
    """
    if cfg.sweep is None:
        raise ValueError("config has no [sweep] section")
    spec = cfg.sweep
    problem = build_problem(cfg)
    ladder = problem.ladder
    driver = _make_driver(problem, spec.noise_seed)
    n_steps = round(problem.span / spec.eta)
    if abs(n_steps * spec.eta - problem.span) > 1e-9 * max(1.0, problem.span):
        raise ValueError(f"eta={spec.eta} does not tile the horizon {problem.span}")
    eta = problem.span / n_steps
    streams = [spec.noise_stream_base + j for j in range(spec.n_trials)]
    refs = em_rollout_batch(problem, spec.reference_n_steps, driver, streams)

    rows = []
    for e_idx, eps in enumerate(spec.eps_targets):
        tp = theorem_parameters(eps, spec.L, problem.span, eta, ladder.c, ladder.gamma)
        if tp.k_max > ladder.k_max:
            raise ValueError(
                f"eps={eps} certifies k_max={tp.k_max} beyond the built ladder ({ladder.k_max})"
            )
        schedule = tp.schedule()
        exp_cost = expected_cost(
            schedule, ladder, n_steps, active_levels=tp.levels, cost_mode=spec.cost_mode
        )
        for j, stream in enumerate(streams):
            seed = derive_plan_seed(spec.plan_seed, e_idx * 10_000 + j)
            t0 = time.perf_counter()
            traj = mlem_solve(
                problem,
                schedule,
                n_steps,
                driver,
                stream,
                seed,
                active_levels=tp.levels,
                cost_mode=spec.cost_mode,
            )
            wall = (time.perf_counter() - t0) * 1e3
            rows.append(
                ResultRow(
                    method="mlem",
                    schedule="theorem",
                    eps_target=float(eps),
                    mse=float(np.mean((traj.final_state - refs[j]) ** 2)),
                    expected_cost=exp_cost,
                    ledger_cost=traj.ledger.total,
                    wall_ms=wall,
                    n_steps=n_steps,
                    trial=j,
                    plan_seed=seed,
                )
            )
    for level in spec.em_levels:
        for n in spec.em_steps:
            for j, stream in enumerate(streams):
                t0 = time.perf_counter()
                traj = em_solve(problem, level, n, driver, stream)
                wall = (time.perf_counter() - t0) * 1e3
                rows.append(
                    ResultRow(
                        method="em",
                        schedule=f"level{level}",
                        eps_target=float("nan"),
                        mse=float(np.mean((traj.final_state - refs[j]) ** 2)),
                        expected_cost=n * ladder.cost_units(level),
                        ledger_cost=traj.ledger.total,
                        wall_ms=wall,
                        n_steps=n,
                        trial=j,
                        plan_seed=None,
                    )
                )
    return rows


def train_probs(cfg: ExperimentConfig, out_path=None):
    """Train a learned schedule per the [train] section; writes the params file.

    Returns (params, history, path written).
    """
    if cfg.train is None:
        raise ValueError("config has no [train] section")
    spec = cfg.train
    problem = build_problem(cfg)
    driver = _make_driver(problem, spec.noise_seed)
    ladder = problem.ladder
    levels = spec.active_levels or tuple(range(ladder.k_min, ladder.k_max + 1))
    if spec.init_file is not None:
        params = adaptive.load_params(spec.init_file)
        if params.levels != tuple(levels):
            raise ValueError("init_file levels do not match active_levels")
    else:
        inits = spec.init_prob
        if np.isscalar(inits):
            inits = [inits] * len(levels)
        if len(inits) != len(levels):
            raise ValueError("init_prob must be a scalar or one value per active level")
        params = adaptive.AdaptiveParams.from_probs(dict(zip(levels, map(float, inits))))
    params, history = adaptive.sgd_train(
        problem,
        params,
        spec.n_steps,
        driver,
        iters=spec.iters,
        batch=spec.batch,
        lr=spec.lr,
        lam=spec.lam,
        reference=spec.reference,
        ref_n_steps=spec.ref_n_steps,
        active_levels=levels,
        seed=spec.seed,
        noise_stream_base=spec.noise_stream_base,
    )
    path = out_path if out_path is not None else spec.out
    adaptive.save_params(params, path)
    return params, history, path


def adaptive_matchup(cfg: ExperimentConfig, params) -> list:
    """Matched-cost comparison of a learned schedule against the fixed families.

    At every budget in [matchup].budgets, three schedules are scaled to the
    same expected cost (paper accounting): the learned one by a uniform logit
    shift, 1/cost by its scale C, and the certified power law (exponent
    1 + gamma/2) by its scale C.  Each is evaluated by the mean squared
    final-state error against a shared fine reference over n_streams noise
    streams times n_plans independent coin sequences per stream, so the
    randomization variance enters the score in full.  Rows carry the family
    in the schedule column and the budget index in the trial column.
    """
    if cfg.matchup is None:
        raise ValueError("config has no [matchup] section")
    if cfg.train is None:
        raise ValueError("[matchup] needs a [train] section for n_steps")
    spec = cfg.matchup
    problem = build_problem(cfg)
    ladder = problem.ladder
    levels = params.levels
    n_steps = cfg.train.n_steps
    times = problem.times(n_steps)[:-1]
    driver = _make_driver(problem, spec.noise_seed)
    streams = list(range(spec.n_streams))
    refs = em_rollout_batch(problem, spec.ref_n_steps, driver, streams)
    exponent = 1.0 + ladder.gamma / 2.0

    def matched_schedule(family: str, budget: float):
        if family == "learned":
            shift = adaptive.shift_to_match_cost(
                params, budget, ladder, n_steps, times, active_levels=levels
            )
            return params.shifted(shift).as_schedule()
        if family == "inverse_cost":
            make = lambda C: LevelSchedule.inverse_cost(C, ladder, levels)
        else:
            make = lambda C: LevelSchedule.power_law(C, exponent, levels)
        _, schedule = scale_to_match_cost(
            make, budget, ladder, n_steps, times=times, active_levels=levels
        )
        return schedule

    rows = []
    for b_idx, budget in enumerate(spec.budgets):
        for family in ("learned", "inverse_cost", "power_law"):
            schedule = matched_schedule(family, budget)
            exp_cost = expected_cost(
                schedule, ladder, n_steps, times=times, active_levels=levels, cost_mode="paper"
            )
            sq_sum = 0.0
            ledger_sum = 0.0
            t0 = time.perf_counter()
            for r in range(spec.n_plans):
                seeds = [
                    derive_plan_seed(spec.plan_seed, r * spec.n_streams + b)
                    for b in range(spec.n_streams)
                ]
                out = mlem_rollout_batch(
                    problem,
                    schedule,
                    n_steps,
                    driver,
                    batch=spec.n_streams,
                    noise_streams=streams,
                    plan_seeds=seeds,
                    active_levels=levels,
                    cost_mode="paper",
                )
                sq_sum += float(np.mean((out.finals - refs) ** 2))
                ledger_sum += float(np.mean(out.cost_totals))
            wall = (time.perf_counter() - t0) * 1e3
            rows.append(
                ResultRow(
                    method="mlem",
                    schedule=family,
                    eps_target=float("nan"),
                    mse=sq_sum / spec.n_plans,
                    expected_cost=exp_cost,
                    ledger_cost=ledger_sum / spec.n_plans,
                    wall_ms=wall,
                    n_steps=n_steps,
                    trial=b_idx,
                    plan_seed=spec.plan_seed,
                )
            )
    return rows


def ddpm_check(cfg: ExperimentConfig):
    """Gap-halving diagnostics for the discrete sampler; returns (results, ratios, ok)."""
    if cfg.ddpm is None:
        raise ValueError("config has no [ddpm] section")
    if cfg.problem.kind != "mixture-ddpm":
        raise ValueError("ddpm-check needs a mixture-ddpm problem")
    spec = cfg.ddpm
    mixture = GaussianMixture.from_dict(cfg.problem.mixture)
    results, ratios = gap_halving_ratios(
        mixture,
        spec.betas,
        context_time=spec.context_time,
        n_probe=spec.n_probe,
        seed=spec.seed,
        z_mode=spec.z_mode,
        kind=spec.kind,
    )
    ok = True
    if spec.ratio_range is not None:
        lo, hi = spec.ratio_range
        ok = all(lo <= r <= hi for r in ratios)
    return results, ratios, ok


def run_experiment(cfg: ExperimentConfig) -> list:
    """Execute the solver workflows in a config and collect their result rows.

    Runs [run] and/or [sweep]; a config with neither is an error.  Training
    and sampler diagnostics have their own entry points (train_probs,
    ddpm_check) because they do not produce result rows.
    """
    rows = []
    if cfg.run is not None:
        rows.extend(run_single(cfg))
    if cfg.sweep is not None:
        rows.extend(run_sweep(cfg))
    if not rows and cfg.run is None and cfg.sweep is None:
        raise ValueError("config has no [run] or [sweep] section")
    return rows


# --- fitting -----------------------------------------------------------------


def log_slope(xs, ys) -> float:
    """Least-squares slope of log(y) against log(x)."""
    x = np.log(np.asarray(xs, dtype=np.float64))
    y = np.log(np.asarray(ys, dtype=np.float64))
    if x.shape != y.shape or x.size < 2:
        raise ValueError("need at least two (x, y) pairs")
    design = np.stack([x, np.ones_like(x)], axis=1)
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(sol[0])


@dataclass(frozen=True)
class GammaFit:
    gamma_hat: float
    slope: float
    intercept: float
    n_points: int
    max_abs_residual: float


def fit_gamma(costs, errors, floor: float = 0.0) -> GammaFit:
    """Recover the cost exponent from (evaluation cost, accuracy) pairs.

    Model: error - floor = A * cost^(-1/gamma), fit in log-log by least
    squares.  The floor absorbs an additive error plateau (statistical noise,
    reference resolution); errors at or below it are rejected because the
    remaining signal is not attributable to the ladder.
    """
    costs = np.asarray(costs, dtype=np.float64)
    errors = np.asarray(errors, dtype=np.float64)
    if costs.shape != errors.shape or costs.ndim != 1 or costs.size < 2:
        raise ValueError("need matching 1-d cost/error arrays with >= 2 points")
    if np.any(costs <= 0):
        raise ValueError("costs must be positive")
    adj = errors - floor
    if np.any(adj <= 0):
        bad = int(np.argmin(adj))
        raise ValueError(
            f"error {errors[bad]!r} at cost {costs[bad]!r} is not above the floor {floor!r}"
        )
    x = np.log(costs)
    y = np.log(adj)
    design = np.stack([x, np.ones_like(x)], axis=1)
    sol, *_ = np.linalg.lstsq(design, y, rcond=None)
    slope, intercept = float(sol[0]), float(sol[1])
    if slope >= 0:
        raise ValueError(f"error does not decrease with cost (slope {slope:.4g})")
    resid = y - design @ sol
    return GammaFit(
        gamma_hat=-1.0 / slope,
        slope=slope,
        intercept=intercept,
        n_points=int(costs.size),
        max_abs_residual=float(np.max(np.abs(resid))),
    )


def scale_to_match_cost(
    make_schedule,
    target_cost: float,
    ladder,
    n_steps: int,
    *,
    times=None,
    active_levels=None,
    cost_mode: str = "paper",
    lo: float = 1e-12,
    hi: float = 1e12,
    tol: float = 1e-9,
):
    """Bisection on the scale C of a schedule family to hit an expected cost.

    make_schedule(C) must return a LevelSchedule whose expected cost is
    nondecreasing in C (true for the min(C*..., 1) families).  Returns
    (C, schedule).
    """

    def cost_at(c: float) -> float:
        return expected_cost(
            make_schedule(c),
            ladder,
            n_steps,
            times=times,
            active_levels=active_levels,
            cost_mode=cost_mode,
        )

    c_lo, c_hi = cost_at(lo), cost_at(hi)
    if not (c_lo <= target_cost <= c_hi):
        raise ValueError(
            f"target cost {target_cost:.6g} outside achievable range [{c_lo:.6g}, {c_hi:.6g}]"
        )
    llo, lhi = math.log(lo), math.log(hi)
    for _ in range(200):
        mid = 0.5 * (llo + lhi)
        if cost_at(math.exp(mid)) < target_cost:
            llo = mid
        else:
            lhi = mid
        if lhi - llo < tol:
            break
    C = math.exp(0.5 * (llo + lhi))
    return C, make_schedule(C)
