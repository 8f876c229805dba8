"""Gaussian-mixture diffusion testbed.

The forward noising process is the standard OU channel

    x_t = e^{-t/2} x_0 + sqrt(1 - e^{-t}) xi,    xi ~ N(0, I),

whose marginal of a Gaussian mixture stays a Gaussian mixture in closed form,
so scores are exact.  Reverse-time sampling is an SDE with drift
x/2 + score_t(x) (or the probability-flow ODE with half the score), which is
what the multilevel solver integrates.  Discrete-chain samplers (DDPM, DDIM)
live on the same clock through t_m = -log(alpha_bar_m); the two descriptions
then have identical forward marginals and their per-step mismatch is purely a
discretization gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import dual as dm
from .drift import DriftField, make_synthetic_ladder
from .problems import NoiseSchedule, SdeProblem

__all__ = [
    "GaussianMixture",
    "mixture_score",
    "BackwardSdeDrift",
    "ProbabilityFlowDrift",
    "backward_ode_rhs",
    "estimate_score_drift_lipschitz",
    "backward_sde_drift",
    "make_score_ladder",
    "backward_problem",
    "DiscreteSchedule",
    "make_eps_fn",
    "ddpm_backward_step",
    "ddim_backward_step",
    "ddpm_chain",
    "GapResult",
    "discretization_gap_check",
    "ddim_gap_check",
    "gap_halving_ratios",
]


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture of isotropic Gaussians: weights (m,), means (m, d), variances (m,)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        mu = np.asarray(self.means, dtype=np.float64)
        v = np.asarray(self.variances, dtype=np.float64)
        if mu.ndim != 2:
            raise ValueError("means must have shape (n_components, dim)")
        if w.shape != (mu.shape[0],) or v.shape != (mu.shape[0],):
            raise ValueError("weights/variances must have one entry per component")
        if np.any(w <= 0) or np.any(v <= 0):
            raise ValueError("weights and variances must be positive")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("weights must sum to 1")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)
        object.__setattr__(self, "variances", v)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def from_dict(cls, spec: dict) -> "GaussianMixture":
        return cls(
            weights=np.asarray(spec["weights"], dtype=np.float64),
            means=np.asarray(spec["means"], dtype=np.float64),
            variances=np.asarray(spec["variances"], dtype=np.float64),
        )

    def _log_terms(self, x):
        """Per-component log w_i + log N(x; mu_i, v_i I), shape (..., m)."""
        d = self.dim
        diffs = x[..., None, :] - self.means  # (..., m, d)
        sq = dm.dsum(diffs * diffs, axis=-1) if isinstance(x, dm.Dual) else (diffs * diffs).sum(axis=-1)
        const = np.log(self.weights) - 0.5 * d * np.log(2.0 * math.pi * self.variances)
        return const - sq / (2.0 * self.variances)

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        return logsumexp(self._log_terms(x), axis=-1)

    def score(self, x):
        """grad_x log density; accepts plain arrays or Duals of shape (..., d)."""
        a = self._log_terms(x)  # (..., m)
        if isinstance(x, dm.Dual):
            c = np.max(dm.value(a), axis=-1, keepdims=True)  # constant shift
            e = dm.exp(a - c)
            r = e / dm.dsum(e, axis=-1, keepdims=True)
            pull = (self.means - x[..., None, :]) / self.variances[:, None]
            return dm.dsum(r[..., None] * pull, axis=-2)
        c = np.max(a, axis=-1, keepdims=True)
        e = np.exp(a - c)
        r = e / e.sum(axis=-1, keepdims=True)
        pull = (self.means - np.asarray(x)[..., None, :]) / self.variances[:, None]
        return (r[..., None] * pull).sum(axis=-2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(len(self.weights), size=n, p=self.weights)
        return self.means[idx] + rng.standard_normal((n, self.dim)) * np.sqrt(
            self.variances[idx]
        )[:, None]

    def diffused(self, t: float) -> "GaussianMixture":
        """Marginal after running the forward channel for time t >= 0."""
        if t < 0:
            raise ValueError("diffusion time must be nonnegative")
        decay = math.exp(-t)
        return GaussianMixture(
            weights=self.weights,
            means=self.means * math.sqrt(decay),
            variances=self.variances * decay + (1.0 - decay),
        )


def mixture_score(mixture: GaussianMixture, t: float, x):
    """Exact score of the time-t diffused mixture at x."""
    return mixture.diffused(float(t)).score(x)


def backward_ode_rhs(mixture: GaussianMixture, t: float, x):
    """Probability-flow transport velocity x/2 + score_t(x)/2."""
    return 0.5 * x + 0.5 * mixture_score(mixture, t, x)


class BackwardSdeDrift(DriftField):
    """Reverse-time SDE drift x/2 + score_t(x), unit diffusion."""

    def __init__(self, mixture: GaussianMixture, lipschitz_bound: float):
        self.mixture = mixture
        self.dim = mixture.dim
        self.lipschitz_bound = float(lipschitz_bound)
        self.sup_bound = math.inf

    def eval(self, t, x):
        return 0.5 * x + self.mixture.diffused(float(t)).score(x)


class ProbabilityFlowDrift(DriftField):
    """Deterministic transport drift x/2 + score_t(x)/2 (use with sigma = 0)."""

    def __init__(self, mixture: GaussianMixture, lipschitz_bound: float):
        self.mixture = mixture
        self.dim = mixture.dim
        self.lipschitz_bound = float(lipschitz_bound)
        self.sup_bound = math.inf

    def eval(self, t, x):
        return 0.5 * x + 0.5 * self.mixture.diffused(float(t)).score(x)


def estimate_score_drift_lipschitz(
    field: DriftField,
    mixture: GaussianMixture,
    t_range: tuple[float, float],
    n_samples: int = 256,
    seed: int = 0,
) -> float:
    """Statistical Lipschitz estimate probing where the marginal puts mass."""
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    best = 0.0
    for t in np.linspace(t_range[0], t_range[1], 16):
        x1 = mixture.diffused(float(t)).sample(n_samples, rng)
        scale = np.where(rng.random((n_samples, 1)) < 0.5, 1.0, 1e-3)
        x2 = x1 + rng.standard_normal(x1.shape) * scale
        num = np.linalg.norm(field.eval(float(t), x1) - field.eval(float(t), x2), axis=1)
        den = np.linalg.norm(x1 - x2, axis=1)
        ok = den > 0
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


def backward_sde_drift(
    mixture: GaussianMixture,
    t_range: tuple[float, float],
    *,
    n_samples: int = 256,
    seed: int = 0,
    safety: float = 1.25,
) -> BackwardSdeDrift:
    """Score drift with an empirically calibrated Lipschitz bound."""
    probe = BackwardSdeDrift(mixture, lipschitz_bound=1.0)
    est = estimate_score_drift_lipschitz(probe, mixture, t_range, n_samples, seed)
    return BackwardSdeDrift(mixture, lipschitz_bound=safety * est)


def make_score_ladder(
    mixture: GaussianMixture,
    *,
    c: float,
    gamma: float,
    k_min: int,
    k_max: int,
    seed: int,
    t_range: tuple[float, float],
    n_terms: int = 3,
    freq_range: tuple[float, float] = (4.0, 12.0),
    space_scale: float = 0.2,
):
    """Synthetic estimator ladder around the exact reverse-SDE drift."""
    truth = backward_sde_drift(mixture, t_range, seed=seed)
    return make_synthetic_ladder(
        truth,
        c,
        gamma,
        k_min,
        k_max,
        seed,
        n_terms=n_terms,
        freq_range=freq_range,
        space_scale=space_scale,
    )


def backward_problem(
    mixture: GaussianMixture,
    *,
    c: float,
    gamma: float,
    k_min: int,
    k_max: int,
    seed: int,
    T: float,
    t_min: float = 0.0,
    noise_resolution: int = 1,
    n_terms: int = 3,
    freq_range: tuple[float, float] = (4.0, 12.0),
    space_scale: float = 0.2,
) -> SdeProblem:
    """Reverse-time sampling problem: integrate from t=T down to t_min.

    The initial state is a standard normal draw, matching the diffused
    marginal at large T up to the usual truncation error.
    """
    ladder = make_score_ladder(
        mixture,
        c=c,
        gamma=gamma,
        k_min=k_min,
        k_max=k_max,
        seed=seed,
        t_range=(t_min, T),
        n_terms=n_terms,
        freq_range=freq_range,
        space_scale=space_scale,
    )
    return SdeProblem(
        ladder=ladder,
        sigma=NoiseSchedule.constant(1.0),
        T=T,
        dim=mixture.dim,
        x0=None,
        direction="backward",
        t_min=t_min,
        noise_resolution=noise_resolution,
    )


@dataclass(frozen=True)
class DiscreteSchedule:
    """Noising chain x_m = sqrt(1-beta_m) x_{m-1} + sqrt(beta_m) xi.

    Index m runs 0..n_steps with alpha_bar_0 = 1 (the data itself); arrays are
    laid out so betas[m-1] is the step into index m.
    """

    betas: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=np.float64)
        if b.ndim != 1 or b.size == 0 or np.any((b <= 0) | (b >= 1)):
            raise ValueError("betas must be a nonempty vector inside (0, 1)")
        object.__setattr__(self, "betas", b)

    @classmethod
    def constant(cls, beta: float, n_steps: int) -> "DiscreteSchedule":
        return cls(np.full(n_steps, float(beta)))

    @property
    def n_steps(self) -> int:
        return len(self.betas)

    @property
    def alpha_bar(self) -> np.ndarray:
        """(n_steps + 1,) cumulative products, leading 1 for the data index."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])

    def sigma(self, m: int) -> float:
        return math.sqrt(1.0 - self.alpha_bar[m])

    def chain_time(self, m: int) -> float:
        """Continuous clock t_m = -log(alpha_bar_m); the marginals then agree exactly."""
        return -math.log(self.alpha_bar[m])


def make_eps_fn(mixture: GaussianMixture, schedule: DiscreteSchedule):
    """Exact noise predictor eps(x, m) = -sigma_m * score at the matched clock time."""

    def eps(x: np.ndarray, m: int) -> np.ndarray:
        s_m = schedule.sigma(m)
        return -s_m * mixture.diffused(schedule.chain_time(m)).score(x)

    return eps


def ddpm_backward_step(
    x: np.ndarray, m: int, schedule: DiscreteSchedule, eps_fn, z: np.ndarray
) -> np.ndarray:
    """Ancestral sampling step from index m to m-1."""
    if not 1 <= m <= schedule.n_steps:
        raise ValueError(f"step index {m} outside 1..{schedule.n_steps}")
    beta = schedule.betas[m - 1]
    return (x - beta / schedule.sigma(m) * eps_fn(x, m)) / math.sqrt(1.0 - beta) + math.sqrt(
        beta
    ) * z


def ddim_backward_step(x: np.ndarray, m: int, schedule: DiscreteSchedule, eps_fn) -> np.ndarray:
    """Deterministic step from index m to m-1 keeping the noise estimate."""
    if not 1 <= m <= schedule.n_steps:
        raise ValueError(f"step index {m} outside 1..{schedule.n_steps}")
    ab = schedule.alpha_bar
    eps = eps_fn(x, m)
    x0_hat = (x - schedule.sigma(m) * eps) / math.sqrt(ab[m])
    return math.sqrt(ab[m - 1]) * x0_hat + schedule.sigma(m - 1) * eps


def ddpm_chain(
    schedule: DiscreteSchedule,
    eps_fn,
    n_samples: int,
    dim: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Full reverse chain from N(0, I); last step omits the injected noise."""
    x = rng.standard_normal((n_samples, dim))
    for m in range(schedule.n_steps, 0, -1):
        z = rng.standard_normal((n_samples, dim)) if m > 1 else np.zeros((n_samples, dim))
        x = ddpm_backward_step(x, m, schedule, eps_fn, z)
    return x


@dataclass(frozen=True)
class GapResult:
    beta: float
    context_time: float
    mean_gap: float


def discretization_gap_check(
    mixture: GaussianMixture,
    beta: float,
    *,
    context_time: float = 1.0,
    n_probe: int = 512,
    seed: int = 0,
    z: np.ndarray | None = None,
) -> GapResult:
    """Single-step distance between the DDPM update and reverse-SDE EM.

    Both steps start from the same exact marginal sample at the matched clock
    time and advance one chain index with the same injected noise z.  The
    chain's clock moves by beta per index (up to O(beta^2)), so the EM
    comparison step is eta = beta.  z defaults to zero, which isolates the
    second-order deterministic mismatch; with a live z the sqrt(beta)
    coefficient mismatch enters at order beta^{3/2} and dominates.
    """
    m = max(1, round(context_time / beta))
    schedule = DiscreteSchedule.constant(beta, m)
    t_m = schedule.chain_time(m)
    eps_fn = make_eps_fn(mixture, schedule)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = mixture.diffused(t_m).sample(n_probe, rng)
    if z is None:
        z = np.zeros_like(x)

    ddpm = ddpm_backward_step(x, m, schedule, eps_fn, z)
    drift = 0.5 * x + mixture.diffused(t_m).score(x)
    em = x + beta * drift + math.sqrt(beta) * z
    gap = float(np.mean(np.linalg.norm(ddpm - em, axis=1)))
    return GapResult(beta=float(beta), context_time=t_m, mean_gap=gap)


def ddim_gap_check(
    mixture: GaussianMixture,
    beta: float,
    *,
    context_time: float = 1.0,
    n_probe: int = 512,
    seed: int = 0,
) -> GapResult:
    """Single-step distance between the DDIM update and the Euler transport step."""
    m = max(1, round(context_time / beta))
    schedule = DiscreteSchedule.constant(beta, m)
    t_m = schedule.chain_time(m)
    eps_fn = make_eps_fn(mixture, schedule)

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    x = mixture.diffused(t_m).sample(n_probe, rng)

    ddim = ddim_backward_step(x, m, schedule, eps_fn)
    em = x + beta * backward_ode_rhs(mixture, t_m, x)
    gap = float(np.mean(np.linalg.norm(ddim - em, axis=1)))
    return GapResult(beta=float(beta), context_time=t_m, mean_gap=gap)


def gap_halving_ratios(
    mixture: GaussianMixture,
    betas,
    *,
    context_time: float = 1.0,
    n_probe: int = 512,
    seed: int = 0,
    z_mode: str = "zero",
    kind: str = "ddpm",
):
    """Gaps for a descending beta list plus consecutive ratios gap_i / gap_{i+1}.

    A second-order one-step mismatch shows ratios near 4 when betas halve.
    z_mode "shared" draws one z per probe and reuses it across betas (only
    meaningful for the ddpm kind).
    """
    betas = [float(b) for b in betas]
    if any(b2 >= b1 for b1, b2 in zip(betas, betas[1:])):
        raise ValueError("betas must be strictly decreasing")
    rng = np.random.default_rng(np.random.SeedSequence(seed + 1))
    results = []
    for b in betas:
        if kind == "ddpm":
            z = None
            if z_mode == "shared":
                dim = mixture.dim
                z = rng.standard_normal((n_probe, dim))
            elif z_mode != "zero":
                raise ValueError("z_mode must be 'zero' or 'shared'")
            results.append(
                discretization_gap_check(
                    mixture, b, context_time=context_time, n_probe=n_probe, seed=seed, z=z
                )
            )
        elif kind == "ddim":
            results.append(
                ddim_gap_check(mixture, b, context_time=context_time, n_probe=n_probe, seed=seed)
            )
        else:
            raise ValueError("kind must be 'ddpm' or 'ddim'")
    gaps = [r.mean_gap for r in results]
    ratios = [g1 / g2 for g1, g2 in zip(gaps, gaps[1:])]
    return results, ratios
