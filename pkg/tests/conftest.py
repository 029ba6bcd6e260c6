import numpy as np
import pytest

from flowlab.core import Condition
from flowlab.gaussian import GaussianConditionalField, GaussianSpec


@pytest.fixture
def shift_pair_1d():
    """The benchmark pair N(0,1) -> N(2,1) with one-hot conditions."""
    src = GaussianSpec.isotropic(0.0, 1.0)
    tar = GaussianSpec.isotropic(2.0, 1.0)
    c_src, c_tar = Condition.one_hot(0, 2), Condition.one_hot(1, 2)
    field = GaussianConditionalField(condition_dim=2, state_dim=1)
    field.register(c_src, src).register(c_tar, tar).register(Condition.null(2), src)
    return field, src, tar, c_src, c_tar


class CountingField:
    """Constant-velocity test double that counts evaluations per condition."""

    def __init__(self, state_dim=1, condition_dim=2, value=1.0):
        self.state_dim = state_dim
        self.condition_dim = condition_dim
        self.value = value
        self.calls = []

    def velocity(self, x, condition, t):
        self.calls.append((condition.is_null, tuple(condition.vector), float(t)))
        return np.full_like(np.asarray(x, dtype=float), self.value)


@pytest.fixture
def counting_field():
    return CountingField
