import numpy as np
import pytest

from arscale.core.models import ARModel, GroundTruthSpec, NoiseSpec
from arscale.services.ground_truth import generate_ground_truth, random_model
from arscale.services.simulator import simulate


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model():
    """p=2, d=3, strictly stable (sum of block norms 0.6)."""
    return random_model(2, 3, seed=7, block_norm_sum=0.6)


@pytest.fixture
def truth():
    return generate_ground_truth(GroundTruthSpec(p=2, d=3, seed=11))


@pytest.fixture
def small_dataset(small_model):
    dataset, noise = simulate(small_model, NoiseSpec(), N=4, T=40, seed=3)
    return dataset


@pytest.fixture
def scalar_model():
    def build(a: float, sigma: float = 1.0) -> ARModel:
        return ARModel.create([[[a]]], sigma=sigma)
    return build
