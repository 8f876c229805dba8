import numpy as np
import pytest

from mlem.drift import DriftField, LinearDrift, make_synthetic_ladder
from mlem.problems import NoiseSchedule, SdeProblem
from mlem.rng import NoiseDriver


class ConstantField(DriftField):
    """Drift that ignores (t, x); handy for exactly computable updates."""

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)
        self.dim = self.value.size
        self.lipschitz_bound = 0.0
        self.sup_bound = float(np.linalg.norm(self.value))

    def eval(self, t, x):
        return x * 0.0 + self.value


@pytest.fixture
def ou_ladder():
    truth = LinearDrift(dim=2, rate=0.8)
    return make_synthetic_ladder(truth, c=1.0, gamma=3.0, k_min=1, k_max=3, seed=7)


@pytest.fixture
def ou_problem(ou_ladder):
    return SdeProblem(
        ladder=ou_ladder,
        sigma=NoiseSchedule.constant(0.5),
        T=1.0,
        dim=2,
        x0=np.array([1.0, -0.5]),
    )


@pytest.fixture
def driver():
    return NoiseDriver(master_seed=99, dim=2)
