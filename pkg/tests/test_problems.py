"""Problem plumbing: shared Brownian grids, exact OU reference, ledgers."""

import math

import numpy as np
import pytest

from mlem.drift import LinearDrift, make_synthetic_ladder
from mlem.em import em_solve
from mlem.problems import CostLedger, NoiseSchedule, SdeProblem, exact_ou_solution
from mlem.rng import NoiseDriver


def make_problem(rate=1.0, sigma=0.0, T=1.0, noise_resolution=None, x0=(1.0, 1.0)):
    ladder = make_synthetic_ladder(
        LinearDrift(2, rate), c=1.0, gamma=3.0, k_min=1, k_max=2, seed=13
    )
    return SdeProblem(
        ladder=ladder,
        sigma=NoiseSchedule.constant(sigma),
        T=T,
        dim=2,
        x0=np.asarray(x0, dtype=np.float64),
        noise_resolution=noise_resolution,
    )


def test_times_and_step_size():
    p = make_problem(T=2.0)
    ts = p.times(4)
    np.testing.assert_allclose(ts, [0.0, 0.5, 1.0, 1.5, 2.0])
    assert p.step_size(4) == 0.5


def test_backward_times_decrease():
    p = make_problem()
    back = SdeProblem(
        ladder=p.ladder,
        sigma=p.sigma,
        T=2.0,
        dim=2,
        x0=np.zeros(2),
        direction="backward",
        t_min=0.5,
    )
    ts = back.times(3)
    np.testing.assert_allclose(ts, [2.0, 1.5, 1.0, 0.5])
    assert back.span == 1.5
    with pytest.raises(ValueError):
        SdeProblem(
            ladder=p.ladder, sigma=p.sigma, T=1.0, dim=2, direction="backward", t_min=1.5
        )


def test_noise_block_rejects_nondivisor_grid(driver):
    p = make_problem(noise_resolution=100)
    with pytest.raises(ValueError, match="reference-grid mismatch"):
        p.noise_block(driver, 0, 7)


def test_noise_block_sums_fine_increments(driver):
    # sqrt(eta_coarse) z_coarse must equal the summed fine Brownian increments
    p = make_problem(T=1.0, noise_resolution=12)
    fine = p.noise_block(driver, 0, 12)
    coarse = p.noise_block(driver, 0, 4)
    eta_f, eta_c = 1.0 / 12.0, 1.0 / 4.0
    brownian = math.sqrt(eta_f) * fine.reshape(4, 3, 2).sum(axis=1)
    np.testing.assert_allclose(math.sqrt(eta_c) * coarse, brownian, rtol=1e-12)


def test_initial_state_sources(driver):
    p = make_problem(x0=(2.0, -1.0))
    np.testing.assert_array_equal(p.initial_state(driver, 0), [2.0, -1.0])
    p_free = SdeProblem(ladder=p.ladder, sigma=p.sigma, T=1.0, dim=2)
    np.testing.assert_array_equal(p_free.initial_state(driver, 3), driver.initial_normal(3))


def test_exact_ou_deterministic_cases(driver):
    x0 = np.array([1.0, -2.0])
    out = exact_ou_solution(x0, a=1.0, t=1.0, driver=driver, stream=0, eta=0.25, sigma=0.0)
    np.testing.assert_allclose(out, x0 * math.exp(-1.0), rtol=1e-12)
    out0 = exact_ou_solution(x0, a=0.0, t=1.0, driver=driver, stream=0, eta=0.25, sigma=0.0)
    np.testing.assert_allclose(out0, x0, rtol=1e-15)


def test_exact_ou_rejects_off_grid_time(driver):
    with pytest.raises(ValueError):
        exact_ou_solution(np.ones(2), a=1.0, t=0.3, driver=driver, stream=0, eta=0.25)


def test_em_strong_error_halves_against_exact_ou():
    # additive noise: EM strong error is O(eta), so halving eta should roughly
    # halve the error (within +-30% on averaged streams)
    from mlem.em import em_rollout_batch

    rate, sigma, T = 1.0, 1.0, 1.0
    ladder = make_synthetic_ladder(LinearDrift(1, rate), c=1.0, gamma=3.0, k_min=1, k_max=1, seed=2)
    prob = SdeProblem(
        ladder=ladder,
        sigma=NoiseSchedule.constant(sigma),
        T=T,
        dim=1,
        x0=np.array([1.0]),
    )
    driver = NoiseDriver(master_seed=31, dim=1)
    streams = list(range(400))

    def mean_err(n_steps):
        # EM with the exact linear drift on the same noise the exact kernel uses
        finals = em_rollout_batch(prob, n_steps, driver, streams, field=ladder.truth)
        errs = [
            np.linalg.norm(
                finals[j]
                - exact_ou_solution(prob.x0, rate, T, driver, s, eta=T / n_steps, sigma=sigma)
            )
            for j, s in enumerate(streams)
        ]
        return float(np.mean(errs))

    ratio = mean_err(16) / mean_err(32)
    assert 1.4 < ratio < 2.6


def test_cost_ledger_totals():
    led = CostLedger()
    led.add(0, 1, 8.0)
    led.add(0, 2, 64.0)
    led.add(1, 1, 8.0)
    assert led.total == 80.0
    assert led.level_counts() == {1: 2, 2: 1}


def test_noise_schedule_labels():
    assert NoiseSchedule.zero()(0.7) == 0.0
    s = NoiseSchedule.constant(0.5)
    assert s(0.0) == s(123.0) == 0.5
