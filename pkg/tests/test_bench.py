"""Config loading, result serialization, fitting, and the experiment workflows."""

import math
import textwrap

import numpy as np
import pytest

from mlem.adaptive import AdaptiveParams, save_params
from mlem.bench import (
    RESULT_FIELDS,
    GammaFit,
    ResultRow,
    adaptive_matchup,
    build_problem,
    ddpm_check,
    fit_gamma,
    load_config,
    log_slope,
    read_results,
    run_experiment,
    run_single,
    run_sweep,
    scale_to_match_cost,
    train_probs,
    write_results,
)
from mlem.mlem import LevelSchedule, expected_cost

BASE_OU = """
[problem]
kind = "ou-perturbed"
dim = 1
rate = 0.8
sigma = 0.05
T = 0.8
x0 = 1.0
noise_resolution = 480

[ladder]
seed = 7
c = 1.0
gamma = 3.0
k_max = 3
"""

TINY_MIXTURE = """
[problem]
kind = "mixture-ddpm"
dim = 1
sigma = 1.0
T = 4.0
noise_resolution = 100

[problem.mixture]
weights = [0.5, 0.5]
means = [[0.0], [0.0]]
variances = [0.05, 0.15]

[ladder]
seed = 11
c = 1.0
gamma = 2.5
k_max = 2
"""


def write_cfg(tmp_path, body, name="cfg.toml"):
    path = tmp_path / name
    path.write_text(textwrap.dedent(body))
    return path


# --- result CSV ---------------------------------------------------------------


def sample_rows():
    return [
        ResultRow("mlem", "theorem", 0.05, 1.25e-4, 320.0, 308.5, 12.0, 40, 0, 991),
        ResultRow("em", "level3", float("nan"), 3.5e-3, 2560.0, 2560.0, 4.0, 40, 1, None),
    ]


def test_results_header_and_roundtrip(tmp_path):
    path = tmp_path / "out.csv"
    write_results(sample_rows(), path)
    first = path.read_text().splitlines()[0]
    assert first == "method,schedule,eps_target,mse,expected_cost,ledger_cost,wall_ms,n_steps,trial,plan_seed"
    back = read_results(path)
    assert len(back) == 2
    assert back[0] == sample_rows()[0]
    assert math.isnan(back[1].eps_target) and back[1].plan_seed is None
    assert back[1].mse == 3.5e-3  # repr round-trips floats exactly


def test_empty_rows_still_write_the_header(tmp_path):
    path = tmp_path / "empty.csv"
    write_results([], path)
    assert path.read_text() == ",".join(RESULT_FIELDS) + "\n"
    assert read_results(path) == []


def test_reader_rejects_foreign_headers(tmp_path):
    path = tmp_path / "foreign.csv"
    path.write_text("method,schedule,mse\nem,level1,0.5\n")
    with pytest.raises(ValueError, match="unexpected results header"):
        read_results(path)


# --- config loading -------------------------------------------------------------


def test_committed_configs_parse():
    cfg = load_config("configs/run_demo.toml")
    assert cfg.run.method == "mlem" and cfg.run.eps_target == 0.05
    assert cfg.run.cost_mode == "paper" and cfg.run.reference_n_steps == 5040
    cfg = load_config("configs/scaling_ou.toml")
    assert cfg.sweep.eps_targets == (0.1, 0.05, 0.02, 0.01)
    assert cfg.sweep.em_levels == (1, 2, 3, 4, 5)
    cfg = load_config("configs/mixture_train.toml")
    assert cfg.train.batch == 300 and cfg.train.iters == 50 and cfg.train.lam == 0.1
    assert len(cfg.matchup.budgets) == 5
    cfg = load_config("configs/ddpm_gate.toml")
    assert cfg.ddpm.kind == "ddpm" and cfg.ddpm.ratio_range == (3.0, 5.0)
    assert cfg.ddpm.betas == (0.02, 0.01, 0.005)


def test_unknown_keys_rejected_per_section(tmp_path):
    path = write_cfg(tmp_path, BASE_OU + "\n[run]\nmethod = 'em'\nn_steps = 8\nlvl = 2\n")
    with pytest.raises(ValueError, match=r"unknown keys in \[run\].*lvl"):
        load_config(path)
    path = write_cfg(tmp_path, BASE_OU.replace('x0 = 1.0', 'x0 = 1.0\nwarmup = 3'))
    with pytest.raises(ValueError, match=r"unknown keys in \[problem\].*warmup"):
        load_config(path)
    path = write_cfg(tmp_path, BASE_OU + "\n[plotting]\nstyle = 'dark'\n")
    with pytest.raises(ValueError, match="unknown top-level sections"):
        load_config(path)


def test_missing_required_keys_rejected(tmp_path):
    path = write_cfg(tmp_path, BASE_OU.replace('sigma = 0.05\n', ''))
    with pytest.raises(ValueError, match=r"missing keys in \[problem\].*sigma"):
        load_config(path)
    path = write_cfg(tmp_path, "[problem]\nkind = 'ou-perturbed'\ndim = 1\nsigma = 0.5\nT = 1.0\n")
    with pytest.raises(ValueError, match="needs .problem. and .ladder."):
        load_config(path)


def test_problem_kind_validation(tmp_path):
    path = write_cfg(tmp_path, BASE_OU.replace("ou-perturbed", "heat-equation"))
    with pytest.raises(ValueError, match="unknown problem kind"):
        load_config(path)
    path = write_cfg(
        tmp_path,
        TINY_MIXTURE.replace("[problem.mixture]", "[problem.mixture_off]").replace(
            "weights", "w"
        ).replace("means", "m").replace("variances", "v"),
    )
    with pytest.raises(ValueError):
        load_config(path)


def test_mixture_needs_unit_diffusion(tmp_path):
    path = write_cfg(tmp_path, TINY_MIXTURE.replace("sigma = 1.0", "sigma = 0.7"))
    with pytest.raises(ValueError, match="unit diffusion"):
        build_problem(load_config(path))


def test_default_k_min_from_cost_scale(tmp_path):
    path = write_cfg(tmp_path, BASE_OU.replace("c = 1.0", "c = 0.25"))
    problem = build_problem(load_config(path))
    assert problem.ladder.k_min == 2  # smallest level with cost >= 1
    path = write_cfg(tmp_path, BASE_OU)
    assert build_problem(load_config(path)).ladder.k_min == 0


# --- workflows ------------------------------------------------------------------


def test_em_self_reference_has_exactly_zero_error(tmp_path):
    # top-level EM evaluated against itself on the same grid and noise
    path = write_cfg(
        tmp_path,
        BASE_OU + """
        [run]
        method = "em"
        level = 3
        n_steps = 480
        n_trials = 2
        reference_n_steps = 480
        """,
    )
    rows = run_experiment(load_config(path))
    assert len(rows) == 2
    for r in rows:
        assert r.method == "em" and r.schedule == "level3"
        assert r.mse == 0.0
        assert r.ledger_cost == r.expected_cost == 480 * 2.0**9


def test_run_single_rerun_is_identical_except_wall_time(tmp_path):
    cfg = load_config("configs/run_demo.toml")
    rows_a, rows_b = run_single(cfg), run_single(cfg)
    for a, b in zip(rows_a, rows_b):
        for name in RESULT_FIELDS:
            if name == "wall_ms":
                continue
            assert getattr(a, name) == getattr(b, name)


def test_theorem_run_meets_its_accuracy_target():
    # fine-top reference; the certified schedule must land under eps^2
    cfg = load_config("configs/run_demo.toml")
    rows = run_single(cfg)
    assert len(rows) == 3
    mse = np.mean([r.mse for r in rows])
    assert mse <= cfg.run.eps_target**2
    for r in rows:
        assert r.schedule == "theorem" and r.plan_seed is not None


def test_sweep_em_error_is_monotone_in_level_above_the_floor(tmp_path):
    # the top level shares the reference drift, so its error is pure grid
    # error: the floor below which drift ordering cannot be resolved.  Going
    # up a level must never cost accuracy beyond floor wobble, and the level
    # whose planted error clearly exceeds the floor must sit far above it.
    path = write_cfg(
        tmp_path,
        BASE_OU + """
        [sweep]
        eps_targets = [0.3]
        eta = 0.01
        n_trials = 4
        em_levels = [1, 2, 3]
        em_steps = [60, 120, 240]
        reference_n_steps = 480
        L = 1.0
        """,
    )
    rows = run_sweep(load_config(path))
    assert len(rows) == 1 * 4 + 3 * 3 * 4
    em = [r for r in rows if r.method == "em"]
    for n in (60, 120, 240):
        means = [
            np.mean([r.mse for r in em if r.n_steps == n and r.schedule == f"level{k}"])
            for k in (1, 2, 3)
        ]
        floor = means[-1]
        assert means[0] > 30 * floor
        assert means[1] <= means[0] * 1.02 + 4 * floor
        assert means[2] <= means[1] * 1.02 + 4 * floor


def test_run_section_validation(tmp_path):
    base = load_config(write_cfg(tmp_path, BASE_OU))
    with pytest.raises(ValueError, match="no .run. section"):
        run_single(base)
    with pytest.raises(ValueError, match="no .run. or .sweep."):
        run_experiment(base)
    path = write_cfg(tmp_path, BASE_OU + "\n[run]\nmethod = 'em'\nn_steps = 8\n")
    with pytest.raises(ValueError, match="ladder level"):
        run_single(load_config(path))
    path = write_cfg(tmp_path, BASE_OU + "\n[run]\nmethod = 'milstein'\nn_steps = 8\n")
    with pytest.raises(ValueError, match="unknown method"):
        run_single(load_config(path))
    path = write_cfg(tmp_path, BASE_OU + "\n[run]\nmethod = 'mlem'\nn_steps = 8\n")
    with pytest.raises(ValueError, match="eps_target and L"):
        run_single(load_config(path))


def test_learned_schedule_runs_from_params_file(tmp_path):
    sched_path = tmp_path / "learned.txt"
    save_params(AdaptiveParams.from_probs({0: 0.9, 1: 0.5, 2: 0.2, 3: 0.1}), sched_path)
    path = write_cfg(
        tmp_path,
        BASE_OU + f"""
        [run]
        method = "mlem"
        schedule = "learned"
        params_file = "{sched_path}"
        n_steps = 40
        n_trials = 2
        reference_n_steps = 480
        cost_mode = "paper"
        """,
    )
    rows = run_single(load_config(path))
    assert len(rows) == 2 and all(r.schedule == "learned" for r in rows)
    bad = tmp_path / "bad_levels.txt"
    save_params(AdaptiveParams.from_probs({1: 0.5, 2: 0.2}), bad)
    path = write_cfg(
        tmp_path,
        BASE_OU + f"""
        [run]
        method = "mlem"
        schedule = "learned"
        params_file = "{bad}"
        n_steps = 40
        """,
    )
    with pytest.raises(ValueError, match="do not match"):
        run_single(load_config(path))


def test_train_and_matchup_workflows(tmp_path):
    path = write_cfg(
        tmp_path,
        TINY_MIXTURE + f"""
        [train]
        n_steps = 20
        iters = 2
        batch = 8
        lr = 0.05
        ref_n_steps = 100
        out = "{tmp_path / 'sched.txt'}"

        [matchup]
        budgets = [100.0, 200.0]
        n_streams = 8
        n_plans = 2
        ref_n_steps = 100
        """,
    )
    cfg = load_config(path)
    params, history, written = train_probs(cfg)
    assert written == str(tmp_path / "sched.txt") and (tmp_path / "sched.txt").exists()
    assert len(history) == 2 and params.levels == (0, 1, 2)
    rows = adaptive_matchup(cfg, params)
    assert len(rows) == 6  # 2 budgets x 3 families
    assert {r.schedule for r in rows} == {"learned", "inverse_cost", "power_law"}
    for r in rows:
        budget = cfg.matchup.budgets[r.trial]
        assert r.expected_cost == pytest.approx(budget, rel=1e-6)
        assert r.mse > 0 and r.ledger_cost > 0


def test_ddpm_check_gate(tmp_path):
    cfg = load_config("configs/ddpm_gate.toml")
    results, ratios, ok = ddpm_check(cfg)
    assert ok and len(results) == 3 and len(ratios) == 2
    assert all(3.0 <= r <= 5.0 for r in ratios)
    path = write_cfg(
        tmp_path,
        TINY_MIXTURE + """
        [ddpm]
        betas = [0.02, 0.01]
        n_probe = 64
        ratio_range = [10.0, 11.0]
        """,
    )
    _, _, ok = ddpm_check(load_config(path))
    assert not ok
    base = load_config(write_cfg(tmp_path, TINY_MIXTURE))
    with pytest.raises(ValueError, match="no .ddpm. section"):
        ddpm_check(base)


# --- fitting --------------------------------------------------------------------


def test_fit_gamma_recovers_exact_exponent():
    ks = np.arange(6)
    fit = fit_gamma(2.0 ** (3.0 * ks), 2.0 ** (-ks), floor=0.0)
    assert isinstance(fit, GammaFit)
    assert fit.gamma_hat == pytest.approx(3.0, abs=1e-10)
    assert fit.n_points == 6
    assert fit.max_abs_residual < 1e-12


def test_fit_gamma_tolerates_multiplicative_noise():
    rng = np.random.default_rng(8)
    ks = np.arange(8)
    errors = 2.0 ** (-ks) * (1.0 + 0.01 * rng.standard_normal(8))
    fit = fit_gamma(2.0 ** (3.0 * ks), errors, floor=0.0)
    assert abs(fit.gamma_hat - 3.0) / 3.0 < 0.10


def test_fit_gamma_reads_off_the_log_slope():
    costs = np.array([1.0, 10.0, 100.0, 1000.0])
    fit = fit_gamma(costs, costs**-0.4, floor=0.0)
    assert fit.slope == pytest.approx(-0.4, rel=1e-12)
    assert fit.gamma_hat == pytest.approx(2.5, rel=1e-12)


def test_fit_gamma_validation():
    with pytest.raises(ValueError, match="not above the floor"):
        fit_gamma([1.0, 10.0], [0.5, 0.1], floor=0.1)
    with pytest.raises(ValueError, match="does not decrease"):
        fit_gamma([1.0, 10.0], [0.1, 0.5])
    with pytest.raises(ValueError, match=">= 2 points"):
        fit_gamma([1.0], [0.1])
    with pytest.raises(ValueError, match="positive"):
        fit_gamma([0.0, 1.0], [0.2, 0.1])


def test_log_slope_exact_on_power_laws():
    xs = np.array([2.0, 4.0, 8.0, 64.0])
    assert log_slope(xs, 5.0 * xs**-1.5) == pytest.approx(-1.5, rel=1e-12)
    with pytest.raises(ValueError, match="two"):
        log_slope([1.0], [1.0])


def test_scale_to_match_cost(ou_ladder):
    times = np.linspace(0.0, 1.0, 50, endpoint=False)
    levels = (1, 2, 3)
    make = lambda C: LevelSchedule.inverse_cost(C, ou_ladder, levels)
    C, sched = scale_to_match_cost(make, 1500.0, ou_ladder, 50, times=times, active_levels=levels)
    got = expected_cost(sched, ou_ladder, 50, times=times, active_levels=levels, cost_mode="paper")
    assert got == pytest.approx(1500.0, rel=1e-6)
    assert C > 0
    with pytest.raises(ValueError, match="outside achievable range"):
        scale_to_match_cost(make, 1e15, ou_ladder, 50, times=times, active_levels=levels)
