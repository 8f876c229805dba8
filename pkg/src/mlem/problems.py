"""SDE problem descriptions, trajectories, and cost ledgers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drift import DriftLadder
from .rng import NoiseDriver

__all__ = [
    "NoiseSchedule",
    "SdeProblem",
    "Trajectory",
    "CostLedger",
    "exact_ou_solution",
]


class NoiseSchedule:
    """Scalar diffusion coefficient sigma(t)."""

    def __init__(self, fn, label: str = "custom"):
        self._fn = fn
        self.label = label

    def __call__(self, t: float) -> float:
        return float(self._fn(t))

    @classmethod
    def constant(cls, value: float) -> "NoiseSchedule":
        return cls(lambda t: value, label=f"constant({value})")

    @classmethod
    def zero(cls) -> "NoiseSchedule":
        return cls(lambda t: 0.0, label="zero")


@dataclass
class CostLedger:
    """Evaluation-by-evaluation cost record: (step, level, cost) triples."""

    records: list = field(default_factory=list)
    total: float = 0.0

    def add(self, step: int, level: int, cost: float) -> None:
        self.records.append((step, level, cost))
        self.total += cost

    def level_counts(self) -> dict:
        counts: dict[int, int] = {}
        for _, level, _ in self.records:
            counts[level] = counts.get(level, 0) + 1
        return counts


@dataclass
class Trajectory:
    """States on the solver grid plus the cost ledger of the run."""

    times: np.ndarray  # (n_steps + 1,)
    states: np.ndarray  # (n_steps + 1, dim) or (n_steps + 1, batch, dim)
    ledger: CostLedger

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]


@dataclass
class SdeProblem:
    """Integration task: ladder of drifts, noise level, horizon, initial state.

    direction "forward" integrates native time 0 -> T; "backward" integrates
    T -> t_min with the drift already written for decreasing time (the usual
    sign flip is baked into the field).  noise_resolution, when set, pins a
    master fine grid: every run's Brownian increments are block sums of the
    fine increments, so runs with different step counts share one Brownian
    path.  n_steps must then divide noise_resolution.
    """

    ladder: DriftLadder
    sigma: NoiseSchedule
    T: float
    dim: int
    x0: np.ndarray | None = None  # fixed initial state; None -> standard normal
    direction: str = "forward"
    t_min: float = 0.0
    noise_resolution: int | None = None

    def __post_init__(self):
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")
        if self.x0 is not None:
            self.x0 = np.asarray(self.x0, dtype=np.float64)
            if self.x0.shape != (self.dim,):
                raise ValueError(f"x0 must have shape ({self.dim},)")
        if self.ladder.dim != self.dim:
            raise ValueError("ladder dimension does not match problem dimension")
        if self.direction == "backward" and not (0.0 <= self.t_min < self.T):
            raise ValueError("backward problems need 0 <= t_min < T")

    @property
    def span(self) -> float:
        return self.T - self.t_min if self.direction == "backward" else self.T

    def times(self, n_steps: int) -> np.ndarray:
        if self.direction == "backward":
            return np.linspace(self.T, self.t_min, n_steps + 1)
        return np.linspace(0.0, self.T, n_steps + 1)

    def step_size(self, n_steps: int) -> float:
        return self.span / n_steps

    def initial_state(self, driver: NoiseDriver, stream: int) -> np.ndarray:
        if self.x0 is not None:
            return self.x0.copy()
        return driver.initial_normal(stream)

    def noise_block(self, driver: NoiseDriver, stream: int, n_steps: int) -> np.ndarray:
        """Normalized increments z_i (rows) consistent across step counts.

        With a noise_resolution n_f, z_i = sum of the fine-step normals in
        block i divided by sqrt(block size), so sqrt(eta) z_i equals the
        Brownian increment over the coarse step.
        """
        if self.noise_resolution is None:
            return driver.normal_block(stream, 0, n_steps)
        n_fine = self.noise_resolution
        if n_fine % n_steps != 0:
            raise ValueError(
                f"reference-grid mismatch: n_steps={n_steps} does not divide noise_resolution={n_fine}"
            )
        m = n_fine // n_steps
        fine = driver.normal_block(stream, 0, n_fine)
        if m == 1:
            return fine
        return fine.reshape(n_steps, m, -1).sum(axis=1) / math.sqrt(m)


def exact_ou_solution(
    x0: np.ndarray,
    a: float,
    t: float,
    driver: NoiseDriver,
    stream: int,
    eta: float,
    sigma: float = 0.0,
) -> np.ndarray:
    """Exact-in-distribution solution of dx = -a x dt + sigma dW at time t.

    Marches the exact transition kernel on the solver grid using the same
    normalized increments the solvers consume, so strong errors of grid
    methods can be measured against it.  t must sit on the eta-grid.
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    if eta <= 0:
        raise ValueError("eta must be positive")
    n_float = t / eta
    n = int(round(n_float))
    if abs(n_float - n) > 1e-9:
        raise ValueError(f"t={t} is not a multiple of eta={eta}")
    x = np.asarray(x0, dtype=np.float64).copy()
    decay = math.exp(-a * eta)
    if a == 0.0:
        std = sigma * math.sqrt(eta)
    else:
        std = sigma * math.sqrt((1.0 - math.exp(-2.0 * a * eta)) / (2.0 * a))
    z = driver.normal_block(stream, 0, n) if n > 0 else np.zeros((0, x.size))
    for i in range(n):
        x = decay * x + std * z[i]
    return x
