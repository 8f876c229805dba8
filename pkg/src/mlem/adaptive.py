"""Learned activation schedules.

Each active level k gets a sigmoid-in-log-time probability

    p_k(t) = sigmoid(alpha_k * log(t + delta) + beta_k)

and the (alpha, beta) parameters are trained by stochastic gradient descent
on  E[||y_T - y*_T||^2] + lam * ExpectedCost.  The gradient estimator splits
into three parts:

  * a likelihood-ratio ("score") term, loss * sum_i (B - p) * dlogit/dtheta,
    covering the dependence of the coin distribution on theta;
  * a pathwise term for the 1/p importance weights inside the drift, taken
    along a random parameter direction v ~ N(0, I) via forward-mode duals
    (E[(grad.v) v] recovers the gradient);
  * the exact regularizer gradient, lam * sum_i cost_k p(1-p) dlogit/dtheta.

Costs inside the regularizer are normalized so the top active level costs 1,
which keeps lam on a problem-independent scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import dual as dm
from .drift import DriftLadder
from .em import advance_state, em_rollout_batch
from .mlem import BernoulliPlan, LevelSchedule, _level_pairs, derive_plan_seed
from .problems import SdeProblem
from .rng import NoiseDriver

__all__ = [
    "AdaptiveParams",
    "GradEstimate",
    "sigmoid",
    "logit",
    "prob_at",
    "score_function_grad",
    "frozen_plan_loss",
    "forward_directional_grad",
    "estimate_gradient",
    "sgd_train",
    "beta_shift_sweep",
    "shift_to_match_cost",
    "save_params",
    "load_params",
]


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError("logit needs p strictly inside (0, 1)")
    return math.log(p / (1.0 - p))


@dataclass
class AdaptiveParams:
    """Sigmoid-in-log-time schedule parameters, one (alpha, beta) per level."""

    levels: tuple
    alpha: np.ndarray
    beta: np.ndarray
    delta: float = 0.1

    def __post_init__(self):
        self.levels = tuple(int(k) for k in self.levels)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        if self.alpha.shape != (len(self.levels),) or self.beta.shape != (len(self.levels),):
            raise ValueError("alpha/beta must have one entry per level")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    def prob(self, k: int, t: float) -> float:
        j = self.levels.index(k)
        return float(sigmoid(self.alpha[j] * math.log(t + self.delta) + self.beta[j]))

    def prob_matrix(self, times: np.ndarray) -> np.ndarray:
        feats = np.log(np.asarray(times) + self.delta)
        return sigmoid(feats[:, None] * self.alpha[None, :] + self.beta[None, :])

    def as_schedule(self) -> LevelSchedule:
        return LevelSchedule("learned", self.levels, self.prob, time_dependent=True)

    def shifted(self, shift: float) -> "AdaptiveParams":
        """Same shape in time, all logits moved by a common offset."""
        return AdaptiveParams(self.levels, self.alpha.copy(), self.beta + shift, self.delta)

    @classmethod
    def from_probs(cls, probs: dict, delta: float = 0.1) -> "AdaptiveParams":
        """Flat-in-time initialization matching the given constant probabilities."""
        levels = tuple(sorted(int(k) for k in probs))
        beta = np.array([logit(float(probs[k])) for k in levels])
        return cls(levels, np.zeros(len(levels)), beta, delta)


def prob_at(params: AdaptiveParams, k: int, t: float) -> float:
    """Activation probability sigmoid(alpha_k log(t + delta) + beta_k)."""
    return params.prob(k, t)


def beta_shift_sweep(params: AdaptiveParams, deltas) -> list:
    """One copy of params per offset, each with every beta_k moved by that offset."""
    return [params.shifted(float(d)) for d in deltas]


@dataclass
class GradEstimate:
    """Gradient estimate and its three components (score, pathwise, regularizer)."""

    levels: tuple
    d_alpha: np.ndarray
    d_beta: np.ndarray
    score_alpha: np.ndarray
    score_beta: np.ndarray
    path_alpha: np.ndarray
    path_beta: np.ndarray
    reg_alpha: np.ndarray
    reg_beta: np.ndarray
    loss_mean: float
    reg_cost: float
    samples_alpha: np.ndarray | None = None  # (batch, K) stochastic part per member
    samples_beta: np.ndarray | None = None


def _training_cost_vec(ladder: DriftLadder, pairs) -> np.ndarray:
    """Upper-endpoint costs normalized so the top active level costs 1."""
    uppers = [u for u, _ in pairs]
    top = ladder.cost_units(max(uppers))
    return np.array([ladder.cost_units(u) / top for u in uppers])


def score_function_grad(
    loss_value: float,
    plan: BernoulliPlan,
    params: AdaptiveParams,
    step_times: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Likelihood-ratio part of the schedule gradient for one frozen rollout.

    With B_ik the realized coins of a plan sampled from params' schedule,

        d_alpha_k = loss * sum_i (B_ik - p_k(t_i)) log(t_i + delta)
        d_beta_k  = loss * sum_i (B_ik - p_k(t_i))

    (the sigmoid-absorbed form: the p(1-p) of the raw likelihood ratio cancels
    against the sigmoid derivative, so no small-probability blowup).
    """
    step_times = np.asarray(step_times, dtype=np.float64)
    if plan.draws.ndim != 2:
        raise ValueError("score_function_grad expects a single plan, draws of shape (n, K)")
    if plan.levels != params.levels or plan.n_steps != len(step_times):
        raise ValueError("plan does not match params levels / step times")
    probs = params.prob_matrix(step_times)
    resid = plan.draws.astype(np.float64) - probs  # (n, K)
    feats = np.log(step_times + params.delta)
    return (
        float(loss_value) * (resid * feats[:, None]).sum(axis=0),
        float(loss_value) * resid.sum(axis=0),
    )


def _dual_rollout(problem, params, n_steps, pairs, draws, z, y0, logit_tan):
    """Forward pass with frozen coins and dual-number importance weights.

    draws (B, n, K) bool, z (B, n, dim), y0 (B, dim); logit_tan (B, n, K) is
    the tangent of alpha_k log(t_i + delta) + beta_k along the probe
    direction.  Returns the Dual final states: value = the rollout, tangent =
    its derivative along the probe with the coins treated as constants.
    """
    ladder = problem.ladder
    step_times = problem.times(n_steps)[:-1]
    eta = problem.step_size(n_steps)
    sqrt_eta = eta**0.5
    probs = params.prob_matrix(step_times)  # (n, K)
    p_tan = probs[None, :, :] * (1.0 - probs[None, :, :]) * logit_tan  # (B, n, K)
    batch, _, K = p_tan.shape

    y = dm.Dual(np.asarray(y0, dtype=np.float64), np.zeros_like(y0))
    for i in range(n_steps):
        t = float(step_times[i])
        p_i = dm.Dual(np.broadcast_to(probs[i], (batch, K)).copy(), p_tan[:, i, :])
        w_i = 1.0 / p_i  # importance weights with tangents
        b_i = draws[:, i, :].astype(np.float64)
        drift = None
        coefs: dict[int, object] = {}
        for j, (upper, comp) in enumerate(pairs):
            w_col = w_i[:, j] * b_i[:, j]
            coefs[upper] = w_col if upper not in coefs else coefs[upper] + w_col
            coefs[comp] = -w_col if comp not in coefs else coefs[comp] - w_col
        for level in sorted(coefs):
            term = coefs[level][:, None] * ladder.field(level).eval(t, y)
            drift = term if drift is None else drift + term
        y = advance_state(y, eta, drift, problem.sigma(t), sqrt_eta, z[:, i, :])
    return y


def _frozen_plan_run(
    problem: SdeProblem,
    params: AdaptiveParams,
    n_steps: int,
    driver: NoiseDriver,
    plan: BernoulliPlan,
    v_alpha: np.ndarray,
    v_beta: np.ndarray,
    *,
    noise_stream: int,
    reference_final: np.ndarray,
    active_levels=None,
) -> tuple[float, float]:
    pairs = _level_pairs(problem.ladder, active_levels)
    levels = tuple(u for u, _ in pairs)
    if levels != params.levels or plan.levels != levels:
        raise ValueError("params/plan levels must match the active levels")
    if plan.draws.ndim != 2 or plan.n_steps != n_steps:
        raise ValueError("need a single plan with draws of shape (n_steps, K)")
    step_times = problem.times(n_steps)[:-1]
    feats = np.log(step_times + params.delta)
    v_alpha = np.asarray(v_alpha, dtype=np.float64)
    v_beta = np.asarray(v_beta, dtype=np.float64)
    logit_tan = (feats[:, None] * v_alpha[None, :] + v_beta[None, :])[None, :, :]
    z = problem.noise_block(driver, noise_stream, n_steps)[None, :, :]
    y0 = problem.initial_state(driver, noise_stream)[None, :]
    y = _dual_rollout(problem, params, n_steps, pairs, plan.draws[None, :, :], z, y0, logit_tan)
    diff = y - np.asarray(reference_final, dtype=np.float64)[None, :]
    loss = dm.dsum(diff * diff, axis=-1)
    return float(dm.value(loss)[0]), float(dm.tangent(loss)[0])


def frozen_plan_loss(
    problem: SdeProblem,
    params: AdaptiveParams,
    n_steps: int,
    driver: NoiseDriver,
    plan: BernoulliPlan,
    *,
    noise_stream: int,
    reference_final: np.ndarray,
    active_levels=None,
) -> float:
    """Squared final-state error of one rollout with the coins held fixed.

    Only the importance weights 1/p_k move when params move, so this is the
    function the pathwise derivative differentiates.
    """
    K = len(params.levels)
    loss, _ = _frozen_plan_run(
        problem,
        params,
        n_steps,
        driver,
        plan,
        np.zeros(K),
        np.zeros(K),
        noise_stream=noise_stream,
        reference_final=reference_final,
        active_levels=active_levels,
    )
    return loss


def forward_directional_grad(
    problem: SdeProblem,
    params: AdaptiveParams,
    n_steps: int,
    driver: NoiseDriver,
    plan: BernoulliPlan,
    v_alpha: np.ndarray,
    v_beta: np.ndarray,
    *,
    noise_stream: int,
    reference_final: np.ndarray,
    active_levels=None,
) -> float:
    """Directional derivative of the frozen-plan loss along (v_alpha, v_beta).

    One forward pass with dual numbers; memory does not grow with n_steps.
    Coins are treated as independent of the parameters, so this is exactly the
    pathwise term of the gradient estimator, and it vanishes when no coin
    fired (no 1/p_k enters the path).
    """
    _, tan = _frozen_plan_run(
        problem,
        params,
        n_steps,
        driver,
        plan,
        v_alpha,
        v_beta,
        noise_stream=noise_stream,
        reference_final=reference_final,
        active_levels=active_levels,
    )
    return tan


def _reference_finals(
    problem: SdeProblem,
    n_steps: int,
    driver: NoiseDriver,
    noise_streams,
    reference: str,
    ref_n_steps: int | None,
) -> np.ndarray:
    if reference == "true-em":
        return em_rollout_batch(
            problem, n_steps, driver, noise_streams, field=problem.ladder.truth
        )
    if reference == "fine-top":
        if ref_n_steps is None:
            raise ValueError("fine-top reference needs ref_n_steps")
        return em_rollout_batch(problem, ref_n_steps, driver, noise_streams)
    raise ValueError(f"unknown reference mode {reference!r}")


def estimate_gradient(
    problem: SdeProblem,
    params: AdaptiveParams,
    n_steps: int,
    driver: NoiseDriver,
    *,
    batch: int,
    lam: float = 0.1,
    reference: str = "true-em",
    ref_n_steps: int | None = None,
    active_levels=None,
    noise_stream_base: int = 0,
    plan_seed: int = 0,
    probe_seed: int = 0,
    reference_finals: np.ndarray | None = None,
    return_samples: bool = False,
) -> GradEstimate:
    """Monte Carlo gradient of loss + lam * cost over a batch of rollouts.

    Every member gets its own noise stream (noise_stream_base + b), its own
    coin sequence, and its own probe direction.  The reference trajectory for
    the loss reuses the member's noise stream, so the loss compares against
    the matched fine path rather than an independent target.
    """
    ladder = problem.ladder
    pairs = _level_pairs(ladder, active_levels)
    levels = tuple(u for u, _ in pairs)
    if levels != params.levels:
        raise ValueError("params.levels must match the active levels")
    K = len(levels)
    step_times = problem.times(n_steps)[:-1]
    feats = np.log(step_times + params.delta)  # (n,)
    probs = params.prob_matrix(step_times)  # (n, K)

    schedule = params.as_schedule()
    plan = BernoulliPlan.sample(schedule, step_times, plan_seed, batch=batch)
    draws = plan.draws  # (batch, n, K)

    streams = [noise_stream_base + b for b in range(batch)]
    z = np.empty((batch, n_steps, problem.dim))
    for b, stream in enumerate(streams):
        z[b] = problem.noise_block(driver, stream, n_steps)
    y0 = np.stack([problem.initial_state(driver, s) for s in streams])
    if reference_finals is None:
        reference_finals = _reference_finals(
            problem, n_steps, driver, streams, reference, ref_n_steps
        )

    probe_rng = np.random.default_rng(np.random.SeedSequence(probe_seed))
    v_alpha = probe_rng.standard_normal((batch, K))
    v_beta = probe_rng.standard_normal((batch, K))

    # tangent of alpha_k log(t_i + delta) + beta_k along each member's probe
    logit_tan = feats[None, :, None] * v_alpha[:, None, :] + v_beta[:, None, :]  # (B, n, K)
    y = _dual_rollout(problem, params, n_steps, pairs, draws, z, y0, logit_tan)

    diff = y - reference_finals
    loss = dm.dsum(diff * diff, axis=-1)  # (batch,) dual
    loss_val = dm.value(loss)
    loss_tan = dm.tangent(loss)  # grad . v per member

    path_samples_a = loss_tan[:, None] * v_alpha  # (batch, K)
    path_samples_b = loss_tan[:, None] * v_beta
    resid = draws.astype(np.float64) - probs[None, :, :]  # (batch, n, K)
    score_feat_a = (resid * feats[None, :, None]).sum(axis=1)  # (batch, K)
    score_feat_b = resid.sum(axis=1)
    score_samples_a = loss_val[:, None] * score_feat_a
    score_samples_b = loss_val[:, None] * score_feat_b

    cost_vec = _training_cost_vec(ladder, pairs)
    pq = probs * (1.0 - probs)  # (n, K)
    reg_alpha = lam * ((pq * feats[:, None]).sum(axis=0) * cost_vec)
    reg_beta = lam * (pq.sum(axis=0) * cost_vec)
    reg_cost = float((probs * cost_vec[None, :]).sum())

    score_alpha = score_samples_a.mean(axis=0)
    score_beta = score_samples_b.mean(axis=0)
    path_alpha = path_samples_a.mean(axis=0)
    path_beta = path_samples_b.mean(axis=0)
    return GradEstimate(
        levels=levels,
        d_alpha=score_alpha + path_alpha + reg_alpha,
        d_beta=score_beta + path_beta + reg_beta,
        score_alpha=score_alpha,
        score_beta=score_beta,
        path_alpha=path_alpha,
        path_beta=path_beta,
        reg_alpha=reg_alpha,
        reg_beta=reg_beta,
        loss_mean=float(loss_val.mean()),
        reg_cost=reg_cost,
        samples_alpha=(path_samples_a + score_samples_a) if return_samples else None,
        samples_beta=(path_samples_b + score_samples_b) if return_samples else None,
    )


def sgd_train(
    problem: SdeProblem,
    params: AdaptiveParams,
    n_steps: int,
    driver: NoiseDriver,
    *,
    iters: int,
    batch: int,
    lr: float,
    lam: float = 0.1,
    reference: str = "true-em",
    ref_n_steps: int | None = None,
    active_levels=None,
    seed: int = 0,
    noise_stream_base: int = 0,
):
    """Plain SGD on (alpha, beta); returns (trained params, history).

    Fresh coins, probes, and noise streams every iteration.  Aborts with
    RuntimeError if the running loss exceeds 1000x its starting value, which
    catches runaway importance weights early.
    """
    params = AdaptiveParams(params.levels, params.alpha.copy(), params.beta.copy(), params.delta)
    history = []
    loss0 = None
    for it in range(iters):
        est = estimate_gradient(
            problem,
            params,
            n_steps,
            driver,
            batch=batch,
            lam=lam,
            reference=reference,
            ref_n_steps=ref_n_steps,
            active_levels=active_levels,
            noise_stream_base=noise_stream_base + it * batch,
            plan_seed=derive_plan_seed(seed, 2 * it),
            probe_seed=derive_plan_seed(seed, 2 * it + 1),
        )
        if loss0 is None:
            loss0 = est.loss_mean
        if not math.isfinite(est.loss_mean) or est.loss_mean > 1e3 * loss0:
            raise RuntimeError(
                f"training diverged at iteration {it}: loss {est.loss_mean:.3g} "
                f"vs initial {loss0:.3g}"
            )
        history.append(
            {
                "iter": it,
                "loss": est.loss_mean,
                "reg_cost": est.reg_cost,
                "objective": est.loss_mean + lam * est.reg_cost,
                "grad_norm": float(np.sqrt((est.d_alpha**2).sum() + (est.d_beta**2).sum())),
            }
        )
        params.alpha = params.alpha - lr * est.d_alpha
        params.beta = params.beta - lr * est.d_beta
    return params, history


def shift_to_match_cost(
    params: AdaptiveParams,
    target_cost: float,
    ladder: DriftLadder,
    n_steps: int,
    times: np.ndarray,
    *,
    active_levels=None,
    cost_mode: str = "paper",
    lo: float = -30.0,
    hi: float = 30.0,
    tol: float = 1e-9,
) -> float:
    """Uniform logit shift making the schedule's expected cost hit a target.

    Expected cost is strictly increasing in the shift, so bisection applies.
    Returns the shift; raises if the target is outside the bracket.
    """
    from .mlem import expected_cost

    def cost_at(s: float) -> float:
        sched = params.shifted(s).as_schedule()
        return expected_cost(
            sched, ladder, n_steps, times=times, active_levels=active_levels, cost_mode=cost_mode
        )

    c_lo, c_hi = cost_at(lo), cost_at(hi)
    if not (c_lo <= target_cost <= c_hi):
        raise ValueError(
            f"target cost {target_cost:.6g} outside bracket [{c_lo:.6g}, {c_hi:.6g}]"
        )
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if cost_at(mid) < target_cost:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def save_params(params: AdaptiveParams, path) -> None:
    """Plain-text key/value serialization (one `key value` pair per line)."""
    lines = [
        "# learned activation schedule",
        f"delta {params.delta!r}",
        "levels " + ",".join(str(k) for k in params.levels),
    ]
    for j, k in enumerate(params.levels):
        lines.append(f"alpha_{k} {float(params.alpha[j])!r}")
        lines.append(f"beta_{k} {float(params.beta[j])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_params(path) -> AdaptiveParams:
    table = {}
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition(" ")
            if not value:
                raise ValueError(f"malformed line in {path}: {raw!r}")
            table[key] = value.strip()
    if "levels" not in table or "delta" not in table:
        raise ValueError("schedule file must define 'levels' and 'delta'")
    levels = tuple(int(tok) for tok in table.pop("levels").split(","))
    delta = float(table.pop("delta"))
    alpha = np.empty(len(levels))
    beta = np.empty(len(levels))
    for j, k in enumerate(levels):
        try:
            alpha[j] = float(table.pop(f"alpha_{k}"))
            beta[j] = float(table.pop(f"beta_{k}"))
        except KeyError as exc:
            raise ValueError(f"missing parameter {exc.args[0]} in {path}") from None
    if table:
        raise ValueError(f"unknown keys in {path}: {sorted(table)}")
    return AdaptiveParams(levels, alpha, beta, delta)
