"""Gaussian-mixture diffusion testbed: exact scores, chains, one-step gaps."""

import math

import numpy as np
import pytest

from mlem import dual as dm
from mlem.diffusion import (
    BackwardSdeDrift,
    DiscreteSchedule,
    GaussianMixture,
    backward_ode_rhs,
    backward_problem,
    backward_sde_drift,
    ddim_backward_step,
    ddim_gap_check,
    ddpm_backward_step,
    ddpm_chain,
    discretization_gap_check,
    gap_halving_ratios,
    make_eps_fn,
    make_score_ladder,
    mixture_score,
)
from mlem.rng import NoiseDriver


def two_bump():
    return GaussianMixture(
        weights=np.array([0.3, 0.7]),
        means=np.array([[-1.5], [2.0]]),
        variances=np.array([0.5, 1.2]),
    )


def std_normal(dim=1):
    return GaussianMixture(
        weights=np.array([1.0]),
        means=np.zeros((1, dim)),
        variances=np.array([1.0]),
    )


# --- mixtures and scores ------------------------------------------------------


def test_mixture_validation():
    with pytest.raises(ValueError, match="shape"):
        GaussianMixture(np.array([1.0]), np.zeros(2), np.array([1.0]))
    with pytest.raises(ValueError, match="one entry per component"):
        GaussianMixture(np.array([0.5, 0.5]), np.zeros((2, 1)), np.array([1.0]))
    with pytest.raises(ValueError, match="positive"):
        GaussianMixture(np.array([1.0]), np.zeros((1, 1)), np.array([0.0]))
    with pytest.raises(ValueError, match="sum to 1"):
        GaussianMixture(np.array([0.5, 0.4]), np.zeros((2, 1)), np.array([1.0, 1.0]))


def test_from_dict_matches_direct():
    spec = {"weights": [0.3, 0.7], "means": [[-1.5], [2.0]], "variances": [0.5, 1.2]}
    mix = GaussianMixture.from_dict(spec)
    np.testing.assert_array_equal(mix.weights, two_bump().weights)
    np.testing.assert_array_equal(mix.means, two_bump().means)


def test_standard_normal_score_is_minus_x():
    mix = std_normal(dim=3)
    x = np.random.default_rng(0).normal(size=(40, 3))
    for t in (0.0, 0.3, 2.0):
        np.testing.assert_allclose(mixture_score(mix, t, x), -x, rtol=0, atol=1e-12)


def test_shifted_gaussian_score_contracts_the_mean():
    # a single N(mu, I) diffuses to N(e^{-t/2} mu, I): score = -(x - e^{-t/2} mu)
    mu = np.array([2.0, -1.0])
    mix = GaussianMixture(np.array([1.0]), mu[None, :], np.array([1.0]))
    x = np.random.default_rng(1).normal(size=(40, 2))
    for t in (0.0, 0.7, 3.0):
        want = -(x - math.exp(-t / 2.0) * mu)
        np.testing.assert_allclose(mixture_score(mix, t, x), want, rtol=1e-12, atol=1e-12)


def test_score_matches_log_density_gradient():
    mix = GaussianMixture(
        weights=np.array([0.2, 0.5, 0.3]),
        means=np.array([[-1.0, 0.5], [0.8, -0.3], [2.0, 1.5]]),
        variances=np.array([0.4, 1.0, 2.5]),
    )
    rng = np.random.default_rng(7)
    h = 1e-6
    for t in (0.01, 0.3, 1.0, 2.5, 5.0):
        diffused = mix.diffused(t)
        x = rng.normal(scale=2.0, size=(200, 2))
        got = diffused.score(x)
        fd = np.empty_like(got)
        for j in range(2):
            e = np.zeros(2)
            e[j] = h
            fd[:, j] = (diffused.log_density(x + e) - diffused.log_density(x - e)) / (2 * h)
        np.testing.assert_allclose(got, fd, rtol=1e-4, atol=5e-6)


def test_score_accepts_duals():
    mix = two_bump()
    rng = np.random.default_rng(3)
    x = rng.normal(size=(30, 1))
    v = rng.normal(size=(30, 1))
    out = mix.diffused(0.4).score(dm.Dual(x, v))
    np.testing.assert_allclose(dm.value(out), mix.diffused(0.4).score(x), rtol=1e-12)
    h = 1e-6
    fd = (mix.diffused(0.4).score(x + h * v) - mix.diffused(0.4).score(x - h * v)) / (2 * h)
    np.testing.assert_allclose(dm.tangent(out), fd, rtol=1e-5, atol=1e-7)


def test_diffusion_semigroup_and_extremes():
    mix = two_bump()
    ab = mix.diffused(0.0)
    np.testing.assert_array_equal(ab.means, mix.means)
    np.testing.assert_array_equal(ab.variances, mix.variances)
    two_hop = mix.diffused(0.7).diffused(0.5)
    one_hop = mix.diffused(1.2)
    np.testing.assert_allclose(two_hop.means, one_hop.means, rtol=1e-12)
    np.testing.assert_allclose(two_hop.variances, one_hop.variances, rtol=1e-12)
    far = mix.diffused(60.0)
    np.testing.assert_allclose(far.means, 0.0, atol=1e-12)
    np.testing.assert_allclose(far.variances, 1.0, rtol=1e-12)
    with pytest.raises(ValueError, match="nonnegative"):
        mix.diffused(-0.1)


def test_sample_moments_match_closed_form():
    mix = two_bump()
    rng = np.random.default_rng(11)
    x = mix.sample(200_000, rng)[:, 0]
    mean = float(mix.weights @ mix.means[:, 0])
    second = float(mix.weights @ (mix.variances + mix.means[:, 0] ** 2))
    var = second - mean**2
    assert x.mean() == pytest.approx(mean, abs=4 * math.sqrt(var / x.size))
    assert x.var() == pytest.approx(var, rel=0.02)


# --- continuous backward descriptions ----------------------------------------


def test_backward_ode_rhs_vanishes_on_standard_normal():
    mix = std_normal(dim=2)
    x = np.random.default_rng(0).normal(size=(25, 2))
    for t in (0.05, 1.0, 4.0):
        np.testing.assert_allclose(backward_ode_rhs(mix, t, x), 0.0, atol=1e-12)


def test_ode_rhs_is_sde_drift_minus_half_score():
    mix = two_bump()
    drift = BackwardSdeDrift(mix, lipschitz_bound=3.0)
    x = np.random.default_rng(4).normal(size=(30, 1))
    t = 0.6
    want = drift.eval(t, x) - 0.5 * mixture_score(mix, t, x)
    np.testing.assert_allclose(backward_ode_rhs(mix, t, x), want, rtol=1e-12)


def test_calibrated_lipschitz_bound_on_gaussian():
    # std normal: drift x/2 + score = -x/2, so every probe ratio is exactly 1/2
    field = backward_sde_drift(std_normal(), (0.01, 2.0), seed=0)
    assert field.lipschitz_bound == pytest.approx(1.25 * 0.5, rel=1e-9)


def test_score_ladder_truth_is_exact_backward_drift():
    mix = two_bump()
    ladder = make_score_ladder(
        mix, c=1.0, gamma=3.0, k_min=1, k_max=2, seed=5, t_range=(0.01, 2.0)
    )
    x = np.random.default_rng(6).normal(size=(20, 1))
    want = 0.5 * x + mixture_score(mix, 0.8, x)
    np.testing.assert_allclose(ladder.truth.eval(0.8, x), want, rtol=1e-12)
    assert set(ladder.levels) == {0, 1, 2}


def test_backward_problem_runs_reverse_clock_from_gaussian_start():
    mix = two_bump()
    problem = backward_problem(
        mix, c=1.0, gamma=3.0, k_min=1, k_max=2, seed=5, T=2.0, t_min=0.05
    )
    times = problem.times(8)
    assert times[0] == 2.0 and times[-1] == pytest.approx(0.05)
    assert np.all(np.diff(times) < 0)
    driver = NoiseDriver(master_seed=2, dim=1)
    np.testing.assert_array_equal(
        problem.initial_state(driver, 3), driver.initial_normal(3)
    )


# --- discrete chains ----------------------------------------------------------


def test_discrete_schedule_closed_forms():
    sched = DiscreteSchedule.constant(0.1, 2)
    np.testing.assert_allclose(sched.alpha_bar, [1.0, 0.9, 0.81], rtol=1e-15)
    assert sched.sigma(2) == pytest.approx(math.sqrt(1.0 - 0.81), rel=1e-15)
    assert sched.chain_time(0) == 0.0
    assert sched.chain_time(2) == pytest.approx(-math.log(0.81), rel=1e-15)
    with pytest.raises(ValueError, match="inside"):
        DiscreteSchedule(np.array([0.1, 1.0]))
    with pytest.raises(ValueError, match="inside"):
        DiscreteSchedule(np.array([]))


def test_chain_marginal_equals_diffused_marginal_on_matched_clock():
    # x_m | x_0 is N(sqrt(ab_m) x0, (1 - ab_m) I); pushing the whole mixture
    # through gives exactly the continuous diffused(t_m) mixture
    mix = two_bump()
    sched = DiscreteSchedule.constant(0.1, 2)
    ab = sched.alpha_bar
    for m in (1, 2):
        pushed = mix.diffused(sched.chain_time(m))
        np.testing.assert_allclose(pushed.means, math.sqrt(ab[m]) * mix.means, rtol=1e-12)
        np.testing.assert_allclose(
            pushed.variances, ab[m] * mix.variances + (1.0 - ab[m]), rtol=1e-12
        )


def test_eps_fn_is_minus_sigma_times_score():
    mix = two_bump()
    sched = DiscreteSchedule.constant(0.05, 10)
    eps = make_eps_fn(mix, sched)
    x = np.random.default_rng(9).normal(size=(15, 1))
    m = 7
    want = -sched.sigma(m) * mixture_score(mix, sched.chain_time(m), x)
    np.testing.assert_allclose(eps(x, m), want, rtol=1e-12)


def zero_eps(x, m):
    return np.zeros_like(x)


def test_backward_steps_with_zero_noise_prediction():
    sched = DiscreteSchedule.constant(0.1, 3)
    y = np.array([[1.7], [-0.4]])
    got = ddpm_backward_step(y, 2, sched, zero_eps, np.zeros_like(y))
    np.testing.assert_allclose(got, y / math.sqrt(0.9), rtol=1e-15)
    ab = sched.alpha_bar
    got = ddim_backward_step(y, 2, sched, zero_eps)
    np.testing.assert_allclose(got, math.sqrt(ab[1] / ab[2]) * y, rtol=1e-15)


def test_ddim_gap_closed_form_for_zero_eps():
    # with eps = 0 the transport rhs is x/2, so one Euler step is x(1 + b/2)
    # and the DDIM step is x/sqrt(1-b): gap = |x| |1/sqrt(1-b) - 1 - b/2|
    b = 0.1
    sched = DiscreteSchedule.constant(b, 3)
    y = np.array([[1.7], [-0.4]])
    ddim = ddim_backward_step(y, 3, sched, zero_eps)
    euler = y + b * (0.5 * y)
    want = np.abs(y) * abs(1.0 / math.sqrt(1.0 - b) - 1.0 - b / 2.0)
    np.testing.assert_allclose(np.abs(ddim - euler), want, rtol=1e-12)


def test_step_index_validation():
    sched = DiscreteSchedule.constant(0.1, 3)
    y = np.zeros((1, 1))
    for m in (0, 4):
        with pytest.raises(ValueError, match="outside"):
            ddpm_backward_step(y, m, sched, zero_eps, y)
        with pytest.raises(ValueError, match="outside"):
            ddim_backward_step(y, m, sched, zero_eps)


def test_ddpm_chain_matches_manual_loop_and_skips_last_noise():
    mix = two_bump()
    sched = DiscreteSchedule.constant(0.05, 6)
    eps = make_eps_fn(mix, sched)
    got = ddpm_chain(sched, eps, 9, 1, np.random.default_rng(21))
    rng = np.random.default_rng(21)
    x = rng.standard_normal((9, 1))
    for m in range(6, 0, -1):
        z = rng.standard_normal((9, 1)) if m > 1 else np.zeros((9, 1))
        x = ddpm_backward_step(x, m, sched, eps, z)
    np.testing.assert_array_equal(got, x)
    assert got.shape == (9, 1)


def test_ddpm_chain_approximates_the_mixture():
    # fine chain with the exact noise predictor; truncation error at the
    # Gaussian start dominates the tolerance
    mix = two_bump()
    sched = DiscreteSchedule.constant(0.02, 300)
    eps = make_eps_fn(mix, sched)
    x = ddpm_chain(sched, eps, 4000, 1, np.random.default_rng(5))[:, 0]
    mean = float(mix.weights @ mix.means[:, 0])
    second = float(mix.weights @ (mix.variances + mix.means[:, 0] ** 2))
    assert x.mean() == pytest.approx(mean, abs=0.12)
    assert x.var() == pytest.approx(second - mean**2, rel=0.1)


# --- one-step discretization gaps ---------------------------------------------


def test_gap_checks_shrink_like_beta_squared():
    mix = two_bump()
    results, ratios = gap_halving_ratios(mix, [0.04, 0.02], kind="ddpm", n_probe=256)
    assert len(results) == 2 and len(ratios) == 1
    assert 3.0 <= ratios[0] <= 5.0
    _, ratios = gap_halving_ratios(mix, [0.04, 0.02], kind="ddim", n_probe=256)
    assert 3.0 <= ratios[0] <= 5.0


def test_gap_check_context_time_is_matched_clock():
    mix = two_bump()
    res = discretization_gap_check(mix, 0.02, context_time=1.0, n_probe=64)
    m = round(1.0 / 0.02)
    want_t = -m * math.log(1.0 - 0.02)
    assert res.context_time == pytest.approx(want_t, rel=1e-12)
    assert res.mean_gap > 0
    res_d = ddim_gap_check(mix, 0.02, context_time=1.0, n_probe=64)
    assert res_d.mean_gap > 0


def test_gap_helper_validation():
    mix = two_bump()
    with pytest.raises(ValueError, match="decreasing"):
        gap_halving_ratios(mix, [0.01, 0.02])
    with pytest.raises(ValueError, match="kind"):
        gap_halving_ratios(mix, [0.02, 0.01], kind="euler")
    with pytest.raises(ValueError, match="z_mode"):
        gap_halving_ratios(mix, [0.02, 0.01], kind="ddpm", z_mode="fresh")
