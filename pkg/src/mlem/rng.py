"""Counter-based Gaussian noise streams.

Every increment is a pure function of (master_seed, stream, step_index), so
solvers can revisit, reorder, or parallelize steps and always see the same
noise.  Implementation: a Philox bit generator keyed by (master_seed, stream),
with the step index mapped to a disjoint block of the 256-bit counter, and
uniforms pushed through the inverse normal CDF (fixed consumption per step,
unlike rejection samplers).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

__all__ = ["NoiseDriver", "noise_increment", "INIT_STEP"]

# Reserved step index for initial-state draws; path steps must stay below it
# so initial conditions are independent of the step count.
INIT_STEP = 2**40

_U64_SCALE = 2.0**-53


def _words_per_step(dim: int) -> int:
    # Philox emits 4x64-bit words per counter tick; round up so each step
    # owns a whole number of ticks and blocks never straddle steps.
    return 4 * ((dim + 3) // 4)


@dataclass(frozen=True)
class NoiseDriver:
    """Deterministic source of N(0, I_dim) increments indexed by (stream, step)."""

    master_seed: int
    dim: int
    _keys: dict = field(default_factory=dict, repr=False, compare=False)

    def _key(self, stream: int) -> np.ndarray:
        key = self._keys.get(stream)
        if key is None:
            seq = np.random.SeedSequence(self.master_seed, spawn_key=(stream,))
            key = seq.generate_state(2, np.uint64)
            self._keys[stream] = key
        return key

    def normal(self, stream: int, step_index: int) -> np.ndarray:
        """One N(0, I) vector for a single step."""
        return self.normal_block(stream, step_index, 1)[0]

    def normal_block(self, stream: int, start_step: int, n_steps: int) -> np.ndarray:
        """Rows i = increments for steps start_step + i; shape (n_steps, dim)."""
        if start_step < 0 or n_steps < 0:
            raise ValueError("step indices must be nonnegative")
        words = _words_per_step(self.dim)
        ticks = words // 4
        gen = Philox(key=self._key(stream), counter=[start_step * ticks, 0, 0, 0])
        raw = gen.random_raw(n_steps * words).astype(np.uint64).reshape(n_steps, words)
        u = ((raw[:, : self.dim] >> np.uint64(11)).astype(np.float64) + 0.5) * _U64_SCALE
        return ndtri(u)

    def initial_normal(self, stream: int) -> np.ndarray:
        """Step-count independent draw for initial states."""
        return self.normal(stream, INIT_STEP)


def noise_increment(driver: NoiseDriver, stream: int, step_index: int) -> np.ndarray:
    """Standard-normal increment vector for the given stream and step."""
    if step_index < 0:
        raise ValueError("step_index must be nonnegative")
    return driver.normal(stream, step_index)
