"""Randomized multilevel Euler-Maruyama solver.

Each step draws a Bernoulli coin per active level and adds the importance-
weighted telescoping differences of the drift ladder:

    y' = y + eta * sum_j (B_j / p_j) [f^{a_j}(y) - f^{comp(a_j)}(y)] + sqrt(eta) sigma z

where a_0 < a_1 < ... are the active levels, comp(a_j) = a_{j-1}, and the
companion of the lowest active level is the ladder's zero base, so the update
is conditionally unbiased for the top-level Euler-Maruyama step at any step
size.  Probabilities come from a LevelSchedule; the guarantee-tuned variant is
produced by theorem_parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drift import DriftLadder
from .em import advance_state
from .problems import CostLedger, NoiseSchedule, SdeProblem, Trajectory
from .rng import NoiseDriver
from . import theory

__all__ = [
    "LevelSchedule",
    "BernoulliPlan",
    "TheoremParameters",
    "theorem_parameters",
    "mlem_step",
    "mlem_solve",
    "mlem_rollout_batch",
    "BatchResult",
    "expected_cost",
    "best_of_n",
    "BestOfN",
    "derive_plan_seed",
]


class LevelSchedule:
    """Per-level activation probabilities p_k(t), clamped to [0, 1]."""

    def __init__(self, kind: str, levels: tuple, fn, time_dependent: bool = False):
        self.kind = kind
        self.levels = tuple(levels)
        if len(self.levels) == 0 or list(self.levels) != sorted(set(self.levels)):
            raise ValueError("levels must be a nonempty strictly increasing sequence")
        self._fn = fn
        self.time_dependent = time_dependent

    def prob(self, k: int, t: float) -> float:
        if k not in self.levels:
            raise KeyError(f"level {k} not in schedule levels {self.levels}")
        p = float(self._fn(k, t))
        if not (0.0 <= p <= 1.0 + 1e-12):
            raise ValueError(f"p_{k}({t}) = {p} outside [0, 1]")
        return min(p, 1.0)

    def prob_matrix(self, times: np.ndarray) -> np.ndarray:
        """(n_times, n_levels) matrix of probabilities."""
        return np.array([[self.prob(k, float(t)) for k in self.levels] for t in times])

    @classmethod
    def constant(cls, probs: dict) -> "LevelSchedule":
        table = {int(k): float(p) for k, p in probs.items()}
        for k, p in table.items():
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"p_{k}={p} outside [0, 1]")
        return cls("constant", tuple(sorted(table)), lambda k, t: table[k])

    @classmethod
    def inverse_cost(cls, C: float, ladder: DriftLadder, levels) -> "LevelSchedule":
        """p_k = min(C / cost_units(k), 1): equal expected spend per level."""
        if C <= 0:
            raise ValueError("C must be positive")
        costs = {int(k): ladder.cost_units(k) for k in levels}
        return cls("inverse_cost", tuple(sorted(costs)), lambda k, t: min(C / costs[k], 1.0))

    @classmethod
    def power_law(cls, C: float, exponent: float, levels) -> "LevelSchedule":
        """p_k = min(C 2^{-exponent k}, 1)."""
        if C <= 0:
            raise ValueError("C must be positive")
        return cls(
            "power_law",
            tuple(sorted(int(k) for k in levels)),
            lambda k, t: min(C * 2.0 ** (-exponent * k), 1.0),
        )


@dataclass(frozen=True)
class BernoulliPlan:
    """Materialized coin flips: draws[i, j] for step i, active level levels[j]."""

    levels: tuple
    probs: np.ndarray  # (n_steps, K)
    draws: np.ndarray  # (n_steps, K) bool
    plan_seed: int

    @classmethod
    def sample(
        cls,
        schedule: LevelSchedule,
        step_times: np.ndarray,
        plan_seed: int,
        batch: int | None = None,
    ) -> "BernoulliPlan":
        probs = schedule.prob_matrix(step_times)
        rng = np.random.default_rng(np.random.SeedSequence(plan_seed))
        shape = probs.shape if batch is None else (batch,) + probs.shape
        draws = rng.random(shape) < probs
        return cls(levels=schedule.levels, probs=probs, draws=draws, plan_seed=plan_seed)

    @property
    def n_steps(self) -> int:
        return self.probs.shape[0]


@dataclass(frozen=True)
class TheoremParameters:
    """Guarantee-tuned solver parameters for a target accuracy epsilon."""

    epsilon: float
    L: float
    T: float
    eta: float
    c: float
    gamma: float
    k_min: int
    k_max: int
    k_max_proof: int
    big_c: float
    probs: tuple
    predicted_cost_bound: float
    predicted_cost_bound_headline: float

    @property
    def levels(self) -> tuple:
        return tuple(range(self.k_min, self.k_max + 1))

    def schedule(self) -> LevelSchedule:
        table = dict(zip(self.levels, self.probs))
        return LevelSchedule("theorem", self.levels, lambda k, t: table[k])


def theorem_parameters(
    epsilon: float,
    L: float,
    T: float,
    eta: float,
    c: float,
    gamma: float,
) -> TheoremParameters:
    """Level range and probabilities that certify E||x_T - y_T||^2 <= eps^2.

    k_min = -floor(log2 c), k_max = -floor(log2((2/L) e^{L(T+eta)} eps)), and
    p_k = min(C 2^{-(1+gamma/2)k}, 1) with the constant C sized so the
    Bernoulli-variance share of the error budget is eps^2/2.  The alternative
    resolution cutoff -floor(log2((L/2) e^{-L(T+eta)} eps)) is recorded as
    k_max_proof.
    """
    if min(epsilon, L, T, eta, c, gamma) <= 0:
        raise ValueError("all theorem parameters must be positive")
    k_min = -math.floor(math.log2(c))
    k_max = -math.floor(math.log2((2.0 / L) * math.exp(L * (T + eta)) * epsilon))
    k_max_proof = -math.floor(math.log2((L / 2.0) * math.exp(-L * (T + eta)) * epsilon))
    if k_max < k_min:
        raise ValueError(
            f"epsilon={epsilon} too large: k_max={k_max} < k_min={k_min}; "
            "the ladder has no room between its coarsest and finest useful level"
        )
    s = sum(2.0 ** ((gamma / 2.0 - 1.0) * k) for k in range(k_min, k_max + 1))
    big_c = 18.0 * eta * (L * T**2 + 1.0 / (2.0 * L)) * math.exp(2.0 * L * (T + eta)) * s / epsilon**2
    probs = tuple(min(big_c * 2.0 ** (-(1.0 + gamma / 2.0) * k), 1.0) for k in range(k_min, k_max + 1))
    canonical, headline = theory.predicted_cost_bound_both(epsilon, L, T, eta, c, gamma)
    return TheoremParameters(
        epsilon=epsilon,
        L=L,
        T=T,
        eta=eta,
        c=c,
        gamma=gamma,
        k_min=k_min,
        k_max=k_max,
        k_max_proof=k_max_proof,
        big_c=big_c,
        probs=probs,
        predicted_cost_bound=canonical,
        predicted_cost_bound_headline=headline,
    )


def _level_pairs(ladder: DriftLadder, active_levels) -> list:
    """(upper, companion) per active level; lowest active telescopes to the base."""
    if active_levels is None:
        active = list(range(ladder.k_min, ladder.k_max + 1))
    else:
        active = sorted(int(k) for k in active_levels)
        if len(set(active)) != len(active):
            raise ValueError("active_levels must be distinct")
        for k in active:
            if not (ladder.k_min <= k <= ladder.k_max):
                raise ValueError(f"active level {k} outside ladder range")
    pairs = []
    for j, k in enumerate(active):
        comp = ladder.k_min - 1 if j == 0 else active[j - 1]
        pairs.append((k, comp))
    return pairs


def mlem_step(
    y: np.ndarray,
    t: float,
    eta: float,
    ladder: DriftLadder,
    probs: np.ndarray,
    bernoullis: np.ndarray,
    sigma: NoiseSchedule,
    z: np.ndarray,
    active_levels=None,
):
    """One randomized multilevel step.

    probs and bernoullis are aligned with the active levels (ascending).
    Returns (next state, list of ladder levels evaluated, one entry per
    activated endpoint role).  The telescoped drift is assembled by grouping
    the +-B/p coefficients per field, so exact cancellations (all coins up at
    probability one) reproduce the top-level Euler-Maruyama step bit for bit.
    """
    y = np.asarray(y, dtype=np.float64)
    pairs = _level_pairs(ladder, active_levels)
    if len(bernoullis) != len(pairs) or len(probs) != len(pairs):
        raise ValueError("probs/bernoullis must align with active levels")
    coef: dict[int, float] = {}
    evaluated: list[int] = []
    for (upper, comp), p, b in zip(pairs, probs, bernoullis):
        if not b:
            continue
        if p <= 0.0:
            raise ValueError(f"level {upper} drawn with zero probability")
        w = 1.0 / float(p)
        coef[upper] = coef.get(upper, 0.0) + w
        coef[comp] = coef.get(comp, 0.0) - w
        evaluated.extend((upper, comp))
    drift = None
    for level in sorted(coef):
        w = coef[level]
        if w == 0.0:
            continue
        term = w * ladder.field(level).eval(t, y)
        drift = term if drift is None else drift + term
    if drift is None:
        drift = np.zeros_like(y)
    y_next = advance_state(y, eta, drift, sigma(t), eta**0.5, z)
    return y_next, evaluated


def mlem_solve(
    problem: SdeProblem,
    schedule: LevelSchedule,
    n_steps: int,
    driver: NoiseDriver,
    noise_stream: int,
    plan_seed: int,
    shared_across_batch: bool = False,
    *,
    active_levels=None,
    cost_mode: str = "full",
    batch_streams=None,
):
    """Integrate with randomized level activation; returns Trajectory.

    With batch_streams, returns a list of Trajectory, one per stream; a shared
    plan (shared_across_batch=True) reuses one coin sequence for all members
    while noise stays per member.  cost_mode "full" charges both endpoint
    evaluations of each activated difference; "paper" charges only the upper
    one.
    """
    if cost_mode not in ("full", "paper"):
        raise ValueError("cost_mode must be 'full' or 'paper'")
    if batch_streams is not None:
        out = []
        for idx, stream in enumerate(batch_streams):
            seed = plan_seed if shared_across_batch else derive_plan_seed(plan_seed, idx)
            out.append(
                mlem_solve(
                    problem,
                    schedule,
                    n_steps,
                    driver,
                    stream,
                    seed,
                    active_levels=active_levels,
                    cost_mode=cost_mode,
                )
            )
        return out

    ladder = problem.ladder
    pairs = _level_pairs(ladder, active_levels)
    times = problem.times(n_steps)
    eta = problem.step_size(n_steps)
    plan = BernoulliPlan.sample(schedule, times[:-1], plan_seed)
    if tuple(schedule.levels) != tuple(k for k, _ in pairs):
        raise ValueError("schedule levels must match the active levels")
    z = problem.noise_block(driver, noise_stream, n_steps)
    y = problem.initial_state(driver, noise_stream)
    states = np.empty((n_steps + 1, problem.dim))
    states[0] = y
    ledger = CostLedger()
    for i in range(n_steps):
        t = float(times[i])
        y, evaluated = mlem_step(
            y, t, eta, ladder, plan.probs[i], plan.draws[i], problem.sigma, z[i], active_levels
        )
        states[i + 1] = y
        if cost_mode == "full":
            for level in evaluated:
                ledger.add(i, level, ladder.cost_units(level))
        else:
            for level in evaluated[0::2]:  # upper endpoints only
                ledger.add(i, level, ladder.cost_units(level))
    return Trajectory(times=times, states=states, ledger=ledger)


@dataclass
class BatchResult:
    """Vectorized rollout summary (no per-step state storage)."""

    finals: np.ndarray  # (batch, dim)
    cost_totals: np.ndarray  # (batch,)
    eval_counts: np.ndarray  # (batch, K) activations per active level
    levels: tuple
    times: np.ndarray


def mlem_rollout_batch(
    problem: SdeProblem,
    schedule: LevelSchedule,
    n_steps: int,
    driver: NoiseDriver,
    *,
    batch: int,
    noise_streams=None,
    shared_noise_stream: int | None = None,
    plan_seeds=None,
    shared_plan_seed: int | None = None,
    active_levels=None,
    cost_mode: str = "full",
    init_states: np.ndarray | None = None,
) -> BatchResult:
    """Vectorized rollouts over a batch of plans and/or noise streams.

    Exactly one of noise_streams (length batch) / shared_noise_stream must be
    given, and likewise for plan_seeds / shared_plan_seed.
    """
    if (noise_streams is None) == (shared_noise_stream is None):
        raise ValueError("give exactly one of noise_streams / shared_noise_stream")
    if (plan_seeds is None) == (shared_plan_seed is None):
        raise ValueError("give exactly one of plan_seeds / shared_plan_seed")
    if cost_mode not in ("full", "paper"):
        raise ValueError("cost_mode must be 'full' or 'paper'")

    ladder = problem.ladder
    pairs = _level_pairs(ladder, active_levels)
    levels = tuple(k for k, _ in pairs)
    if tuple(schedule.levels) != levels:
        raise ValueError("schedule levels must match the active levels")
    K = len(pairs)
    times = problem.times(n_steps)
    step_times = times[:-1]
    eta = problem.step_size(n_steps)
    sqrt_eta = eta**0.5
    probs = schedule.prob_matrix(step_times)  # (n, K)

    if shared_plan_seed is not None:
        plan = BernoulliPlan.sample(schedule, step_times, shared_plan_seed)
        draws = np.broadcast_to(plan.draws, (batch,) + plan.draws.shape)
    else:
        if len(plan_seeds) != batch:
            raise ValueError("plan_seeds must have length batch")
        draws = np.empty((batch, n_steps, K), dtype=bool)
        for b, seed in enumerate(plan_seeds):
            draws[b] = BernoulliPlan.sample(schedule, step_times, seed).draws

    if shared_noise_stream is not None:
        z = problem.noise_block(driver, shared_noise_stream, n_steps)[None, :, :]
    else:
        if len(noise_streams) != batch:
            raise ValueError("noise_streams must have length batch")
        z = np.empty((batch, n_steps, problem.dim))
        for b, stream in enumerate(noise_streams):
            z[b] = problem.noise_block(driver, stream, n_steps)

    if init_states is not None:
        y = np.array(init_states, dtype=np.float64, copy=True)
        if y.shape != (batch, problem.dim):
            raise ValueError("init_states must have shape (batch, dim)")
    elif shared_noise_stream is not None:
        y = np.broadcast_to(
            problem.initial_state(driver, shared_noise_stream), (batch, problem.dim)
        ).copy()
    else:
        y = np.stack([problem.initial_state(driver, s) for s in noise_streams])

    upper_cost = np.array([ladder.cost_units(u) for u, _ in pairs])
    comp_cost = np.array([ladder.cost_units(c) for _, c in pairs])
    role_cost = upper_cost if cost_mode == "paper" else upper_cost + comp_cost

    cost_totals = np.zeros(batch)
    eval_counts = np.zeros((batch, K), dtype=np.int64)

    # coefficient bookkeeping: field level -> list of (column, sign)
    field_roles: dict[int, list] = {}
    for j, (upper, comp) in enumerate(pairs):
        field_roles.setdefault(upper, []).append((j, +1.0))
        field_roles.setdefault(comp, []).append((j, -1.0))

    for i in range(n_steps):
        t = float(step_times[i])
        p_i = probs[i]
        if np.any((p_i <= 0.0) & draws[:, i, :].any(axis=0)):
            raise ValueError("level drawn with zero probability")
        with np.errstate(divide="ignore"):
            w_i = np.where(p_i > 0.0, 1.0 / p_i, 0.0)
        drift = np.zeros((batch, problem.dim))
        b_i = draws[:, i, :]  # (batch, K)
        for level in sorted(field_roles):
            coef = np.zeros(batch)
            for col, sign in field_roles[level]:
                coef += sign * w_i[col] * b_i[:, col]
            rows = np.nonzero(coef)[0]
            if rows.size == 0:
                continue
            drift[rows] += coef[rows, None] * ladder.field(level).eval(t, y[rows])
        z_i = z[0, i] if z.shape[0] == 1 else z[:, i, :]
        y = advance_state(y, eta, drift, problem.sigma(t), sqrt_eta, z_i)
        eval_counts += b_i
        cost_totals += b_i @ role_cost
    return BatchResult(finals=y, cost_totals=cost_totals, eval_counts=eval_counts, levels=levels, times=times)


def expected_cost(
    schedule: LevelSchedule,
    ladder: DriftLadder,
    n_steps: int,
    *,
    times: np.ndarray | None = None,
    active_levels=None,
    cost_mode: str = "paper",
) -> float:
    """Closed-form expected ledger total: sum over steps and levels of p * cost.

    "paper" charges p_k * cost(upper level k); "full" adds the companion
    endpoint.  Time-dependent schedules need the actual step times.
    """
    if cost_mode not in ("full", "paper"):
        raise ValueError("cost_mode must be 'full' or 'paper'")
    pairs = _level_pairs(ladder, active_levels)
    if tuple(schedule.levels) != tuple(k for k, _ in pairs):
        raise ValueError("schedule levels must match the active levels")
    if times is None:
        if schedule.time_dependent:
            raise ValueError("time-dependent schedules need explicit step times")
        times = np.zeros(n_steps)
    elif len(times) != n_steps:
        raise ValueError("times must have length n_steps")
    probs = schedule.prob_matrix(np.asarray(times))
    per_level = np.array(
        [
            ladder.cost_units(u) + (ladder.cost_units(c) if cost_mode == "full" else 0.0)
            for u, c in pairs
        ]
    )
    return float(probs.sum(axis=0) @ per_level)


@dataclass
class BestOfN:
    """Outcome of repeated plan draws on fixed noise."""

    best_trial: int
    best_plan_seed: int
    best_mse: float
    mses: list
    plan_seeds: list
    best_trajectory: Trajectory


def derive_plan_seed(base: int, index: int) -> int:
    """Deterministic child seed for trial `index`."""
    return (base * 1_000_003 + index) % (2**63)


def best_of_n(
    problem: SdeProblem,
    schedule: LevelSchedule,
    n_steps: int,
    driver: NoiseDriver,
    n_trials: int,
    reference_final: np.ndarray,
    *,
    noise_stream: int,
    plan_seed: int = 0,
    active_levels=None,
    cost_mode: str = "full",
) -> BestOfN:
    """Rerun the sampler n_trials times on fixed noise, keep the best MSE.

    Ties break toward the lowest trial index.
    """
    if n_trials <= 0:
        raise ValueError("n_trials must be positive")
    reference_final = np.asarray(reference_final, dtype=np.float64)
    mses, seeds, trajs = [], [], []
    for j in range(n_trials):
        seed = derive_plan_seed(plan_seed, j)
        traj = mlem_solve(
            problem,
            schedule,
            n_steps,
            driver,
            noise_stream,
            seed,
            active_levels=active_levels,
            cost_mode=cost_mode,
        )
        mses.append(float(np.mean((traj.final_state - reference_final) ** 2)))
        seeds.append(seed)
        trajs.append(traj)
    best = int(np.argmin(mses))
    return BestOfN(
        best_trial=best,
        best_plan_seed=seeds[best],
        best_mse=mses[best],
        mses=mses,
        plan_seeds=seeds,
        best_trajectory=trajs[best],
    )
