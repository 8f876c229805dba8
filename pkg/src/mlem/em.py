"""Euler-Maruyama baseline solver."""

from __future__ import annotations

import numpy as np

from .drift import DriftField
from .problems import CostLedger, NoiseSchedule, SdeProblem, Trajectory
from .rng import NoiseDriver

__all__ = ["em_step", "em_solve", "advance_state"]


def advance_state(y, eta: float, drift_value, sigma_t: float, sqrt_eta: float, z):
    """Single shared update expression: y + eta f + sqrt(eta) sigma z.

    Both solvers route their updates through this function so that runs which
    agree on (y, drift_value, z) agree bit for bit.
    """
    return y + eta * drift_value + (sigma_t * sqrt_eta) * z


def em_step(
    y: np.ndarray,
    t: float,
    eta: float,
    drift: DriftField,
    sigma: NoiseSchedule,
    z: np.ndarray,
) -> np.ndarray:
    """One Euler-Maruyama step with normalized noise z ~ N(0, I)."""
    y = np.asarray(y, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError(f"state shape {y.shape} does not match noise shape {z.shape}")
    value = drift.eval(t, y)
    if np.shape(value) != y.shape:
        raise ValueError("drift dimension does not match state dimension")
    return advance_state(y, eta, value, sigma(t), eta**0.5, z)


def em_rollout_batch(
    problem,
    n_steps: int,
    driver,
    noise_streams,
    *,
    level: int | None = None,
    field=None,
    init_states=None,
) -> np.ndarray:
    """Final states of plain EM runs over a batch of noise streams.

    field overrides level; default is the ladder's top level.  No ledger, no
    intermediate states: this is the cheap reference path for batched
    comparisons.
    """
    if field is None:
        field = problem.ladder.field(problem.ladder.k_max if level is None else level)
    batch = len(noise_streams)
    times = problem.times(n_steps)
    eta = problem.step_size(n_steps)
    sqrt_eta = eta**0.5
    z = np.empty((batch, n_steps, problem.dim))
    for b, stream in enumerate(noise_streams):
        z[b] = problem.noise_block(driver, stream, n_steps)
    if init_states is not None:
        y = np.array(init_states, dtype=np.float64, copy=True)
        if y.shape != (batch, problem.dim):
            raise ValueError("init_states must have shape (batch, dim)")
    else:
        y = np.stack([problem.initial_state(driver, s) for s in noise_streams])
    for i in range(n_steps):
        t = float(times[i])
        y = advance_state(y, eta, field.eval(t, y), problem.sigma(t), sqrt_eta, z[:, i, :])
    return y


def em_solve(
    problem: SdeProblem,
    level: int,
    n_steps: int,
    driver: NoiseDriver,
    stream: int,
) -> Trajectory:
    """Integrate with the level-`level` drift for n_steps equal steps."""
    if n_steps <= 0:
        raise ValueError("n_steps must be positive")
    field = problem.ladder.field(level)
    cost = problem.ladder.cost_units(level)
    times = problem.times(n_steps)
    eta = problem.step_size(n_steps)
    sqrt_eta = eta**0.5
    z = problem.noise_block(driver, stream, n_steps)
    y = problem.initial_state(driver, stream)
    states = np.empty((n_steps + 1, problem.dim))
    states[0] = y
    ledger = CostLedger()
    for i in range(n_steps):
        t = float(times[i])
        y = advance_state(y, eta, field.eval(t, y), problem.sigma(t), sqrt_eta, z[i])
        states[i + 1] = y
        ledger.add(i, level, cost)
    return Trajectory(times=times, states=states, ledger=ledger)
