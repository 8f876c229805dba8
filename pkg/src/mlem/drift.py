"""Drift fields and estimator ladders.

A ladder is a family of increasingly accurate, increasingly expensive
approximations f^k to a target drift f, with sup-norm error 2^-k at level k
and evaluation cost c^gamma 2^{gamma k}.  Synthetic ladders plant that scaling
exactly by adding normalized sinusoid bumps to a known truth, which gives the
benchmarks a ground truth for both error and cost.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import dual as dm

__all__ = [
    "DriftField",
    "ZeroField",
    "LinearDrift",
    "SinusoidBump",
    "PerturbedField",
    "DriftLadder",
    "make_synthetic_ladder",
    "ladder_error_report",
    "estimate_lipschitz",
    "suggested_k_min",
]


class DriftField:
    """Time-dependent vector field with declared regularity bounds.

    eval(t, x) accepts x of shape (..., dim) as a plain array or a Dual and
    must be a pure function of its inputs.  lipschitz_bound bounds the spatial
    Lipschitz constant; sup_bound bounds the max-abs coordinate (may be inf).
    """

    dim: int
    lipschitz_bound: float
    sup_bound: float

    def eval(self, t: float, x):
        raise NotImplementedError

    def __call__(self, t: float, x):
        return self.eval(t, x)


class ZeroField(DriftField):
    def __init__(self, dim: int):
        self.dim = dim
        self.lipschitz_bound = 0.0
        self.sup_bound = 0.0

    def eval(self, t, x):
        return x * 0.0


class LinearDrift(DriftField):
    """f(t, x) = -rate * x (mean reversion to the origin for rate > 0)."""

    def __init__(self, dim: int, rate: float):
        self.dim = dim
        self.rate = float(rate)
        self.lipschitz_bound = abs(self.rate)
        self.sup_bound = math.inf

    def eval(self, t, x):
        return x * (-self.rate)


class SinusoidBump(DriftField):
    """Smooth field with per-coordinate sup exactly bounded by 1.

    Coordinate i is sum_j a_ij sin(omega_ij t + kappa_ij . x + phi_ij) with
    a_ij >= 0 and sum_j a_ij = 1, so |u_i| <= 1 everywhere and the bound is
    asymptotically attained.  Spatial frequencies kappa control the Lipschitz
    constant, time frequencies omega control how fast errors decorrelate
    along a trajectory.
    """

    def __init__(self, amps: np.ndarray, omegas: np.ndarray, kappas: np.ndarray, phases: np.ndarray):
        amps = np.asarray(amps, dtype=np.float64)
        if np.any(amps < 0):
            raise ValueError("amplitudes must be nonnegative")
        self.amps = amps / amps.sum(axis=1, keepdims=True)
        self.omegas = np.asarray(omegas, dtype=np.float64)
        self.kappas = np.asarray(kappas, dtype=np.float64)
        self.phases = np.asarray(phases, dtype=np.float64)
        d_out, m, d_in = self.kappas.shape
        if d_in != d_out:
            raise ValueError("only square input/output dimensions are supported")
        self.dim = d_out
        self._m = m
        # (d_in, d_out*m) matrix so batched states need one matmul
        self._kmat = self.kappas.reshape(d_out * m, d_in).T.copy()
        row_norms = np.linalg.norm(self.kappas, axis=2)  # (d_out, m)
        row_bounds = np.sum(self.amps * row_norms, axis=1)
        self.lipschitz_bound = float(np.linalg.norm(row_bounds))
        self.sup_bound = 1.0

    @classmethod
    def random(
        cls,
        dim: int,
        seed_seq: np.random.SeedSequence,
        n_terms: int = 3,
        freq_range: tuple[float, float] = (4.0, 12.0),
        space_scale: float = 0.2,
    ) -> "SinusoidBump":
        rng = np.random.default_rng(seed_seq)
        amps = rng.uniform(0.5, 1.5, size=(dim, n_terms))
        omegas = rng.uniform(*freq_range, size=(dim, n_terms))
        phases = rng.uniform(0.0, 2.0 * math.pi, size=(dim, n_terms))
        dirs = rng.normal(size=(dim, n_terms, dim))
        dirs /= np.linalg.norm(dirs, axis=2, keepdims=True)
        mags = rng.uniform(0.3, 1.0, size=(dim, n_terms, 1)) * space_scale
        return cls(amps, omegas, dirs * mags, phases)

    def eval(self, t, x):
        lead = dm.value(x).shape[:-1]
        z = (x @ self._kmat).reshape(lead + (self.dim, self._m))
        arg = z + (self.omegas * t + self.phases)
        return dm.dsum(dm.sin(arg) * self.amps, axis=-1)


class PerturbedField(DriftField):
    """truth + amplitude * bump; the ladder's level-k approximation."""

    def __init__(self, truth: DriftField, bump: DriftField, amplitude: float):
        self.truth = truth
        self.bump = bump
        self.amplitude = float(amplitude)
        self.dim = truth.dim
        self.lipschitz_bound = truth.lipschitz_bound + abs(self.amplitude) * bump.lipschitz_bound
        self.sup_bound = truth.sup_bound + abs(self.amplitude) * bump.sup_bound

    def eval(self, t, x):
        return self.truth.eval(t, x) + self.bump.eval(t, x) * self.amplitude


@dataclass
class DriftLadder:
    """Levels k_min-1 .. k_max of drift approximations plus cost model.

    levels[k_min-1] is the telescoping base (the zero field whenever its
    nominal cost c^gamma 2^{gamma(k_min-1)} is below one evaluation unit).
    """

    levels: dict  # k -> DriftField
    c: float
    gamma: float
    k_min: int
    k_max: int
    truth: DriftField | None = None

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("c must be positive")
        if self.k_max < self.k_min:
            raise ValueError("k_max must be >= k_min")
        expected = set(range(self.k_min - 1, self.k_max + 1))
        if set(self.levels) != expected:
            raise ValueError(f"ladder must define levels {sorted(expected)}")
        dims = {f.dim for f in self.levels.values()}
        if len(dims) != 1:
            raise ValueError("all levels must share one dimension")
        self.dim = dims.pop()

    def cost_units(self, k: int) -> float:
        return self.c**self.gamma * 2.0 ** (self.gamma * k)

    def error_bound(self, k: int) -> float:
        return 2.0**-k

    def field(self, k: int) -> DriftField:
        if k not in self.levels:
            raise ValueError(
                f"level {k} not in ladder (levels {self.k_min - 1}..{self.k_max})"
            )
        return self.levels[k]

    @property
    def top(self) -> DriftField:
        return self.levels[self.k_max]

    def max_lipschitz(self) -> float:
        bounds = [f.lipschitz_bound for f in self.levels.values()]
        if self.truth is not None:
            bounds.append(self.truth.lipschitz_bound)
        return max(bounds)


def make_synthetic_ladder(
    truth: DriftField,
    c: float,
    gamma: float,
    k_min: int,
    k_max: int,
    seed: int,
    n_terms: int = 3,
    freq_range: tuple[float, float] = (4.0, 12.0),
    space_scale: float = 0.2,
) -> DriftLadder:
    """Plant a ladder around `truth` with exact sup-error bounds 2^-k.

    Level k is truth + 2^-k u_k with independent seed-derived sinusoid bumps
    u_k, |u_k|_inf <= 1; level k_min-1 is the zero field.
    """
    levels: dict[int, DriftField] = {k_min - 1: ZeroField(truth.dim)}
    for k in range(k_min, k_max + 1):
        bump = SinusoidBump.random(
            truth.dim,
            np.random.SeedSequence(seed, spawn_key=(k - k_min,)),
            n_terms=n_terms,
            freq_range=freq_range,
            space_scale=space_scale,
        )
        levels[k] = PerturbedField(truth, bump, 2.0**-k)
    return DriftLadder(levels=levels, c=c, gamma=gamma, k_min=k_min, k_max=k_max, truth=truth)


def ladder_error_report(
    ladder: DriftLadder,
    n_samples: int = 10_000,
    seed: int = 0,
    t_range: tuple[float, float] = (0.0, 1.0),
    x_box: tuple[float, float] = (-3.0, 3.0),
) -> list[tuple[int, float, float]]:
    """Rows (k, measured sup error vs truth, cost_units(k)) for k_min..k_max."""
    if ladder.truth is None:
        raise ValueError("ladder has no ground-truth field to measure against")
    rng = np.random.default_rng(seed)
    n_slices = min(64, n_samples)
    ts = rng.uniform(*t_range, size=n_slices)
    per = max(1, n_samples // n_slices)
    rows = []
    for k in range(ladder.k_min, ladder.k_max + 1):
        fk = ladder.field(k)
        err = 0.0
        for t in ts:
            xs = rng.uniform(*x_box, size=(per, ladder.dim))
            diff = fk.eval(float(t), xs) - ladder.truth.eval(float(t), xs)
            err = max(err, float(np.max(np.abs(diff))))
        rows.append((k, err, ladder.cost_units(k)))
    return rows


def estimate_lipschitz(
    field: DriftField,
    n_pairs: int = 2000,
    seed: int = 0,
    t_range: tuple[float, float] = (0.0, 1.0),
    x_box: tuple[float, float] = (-3.0, 3.0),
) -> float:
    """Statistical lower estimate of the spatial Lipschitz constant."""
    rng = np.random.default_rng(seed)
    n_slices = min(32, n_pairs)
    per = max(1, n_pairs // n_slices)
    best = 0.0
    for t in rng.uniform(*t_range, size=n_slices):
        x1 = rng.uniform(*x_box, size=(per, field.dim))
        # half global pairs, half local perturbations to catch the local slope
        x2 = x1 + rng.normal(size=x1.shape) * np.where(rng.random((per, 1)) < 0.5, 1.0, 1e-3)
        num = np.linalg.norm(field.eval(float(t), x1) - field.eval(float(t), x2), axis=1)
        den = np.linalg.norm(x1 - x2, axis=1)
        ok = den > 0
        if np.any(ok):
            best = max(best, float(np.max(num[ok] / den[ok])))
    return best


def suggested_k_min(sup_norm: float) -> int:
    """Coarsest useful level for a drift of the given sup norm: -ceil(log2 |f|)."""
    if not (0.0 < sup_norm < math.inf):
        raise ValueError("sup_norm must be finite and positive")
    return -math.ceil(math.log2(sup_norm))
