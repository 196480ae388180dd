import numpy as np
import pytest

from arscale.core.errors import DimensionMismatchError
from arscale.core.models import ARModel, NoiseFamily, NoiseSpec, NoiseTensor
from arscale.services.ground_truth import random_model
from arscale.services.operators import apply_L, build_L_blocks
from arscale.services.simulator import sample_noise, simulate, simulate_from_noise


def test_zero_sigma_gives_zero_noise():
    noise = sample_noise(NoiseSpec(sigma=0.0), N=3, T=5, d=2, seed=0)
    assert noise.values.shape == (10, 3)
    np.testing.assert_array_equal(noise.values, 0.0)


def test_rademacher_support():
    noise = sample_noise(NoiseSpec(family=NoiseFamily.RADEMACHER), N=4, T=50, d=3, seed=1)
    assert set(np.unique(noise.values)) <= {-1.0, 1.0}


@pytest.mark.parametrize("family", list(NoiseFamily))
def test_moments_match_sigma(family):
    sigma = 2.0
    noise = sample_noise(NoiseSpec(family=family, sigma=sigma), N=100, T=200, d=5, seed=2)
    values = noise.values.ravel()
    assert values.size == 10 ** 5
    assert abs(values.mean()) < 0.02 * sigma
    assert abs(values.var() - sigma ** 2) < 0.1


def test_noise_is_isotropic():
    noise = sample_noise(NoiseSpec(), N=1000, T=100, d=3, seed=4)
    samples = noise.as_trajectories().reshape(-1, 3)
    cov = np.cov(samples, rowvar=False)
    # 5 standard errors of a sample covariance entry at 1e5 samples
    np.testing.assert_allclose(cov, np.eye(3), atol=5 * np.sqrt(2.0 / samples.shape[0]))


def test_trajectory_streams_ignore_N():
    few = sample_noise(NoiseSpec(), N=2, T=6, d=2, seed=9)
    many = sample_noise(NoiseSpec(), N=5, T=6, d=2, seed=9)
    np.testing.assert_array_equal(few.values, many.values[:, :2])


def test_zero_blocks_reproduce_noise():
    model = ARModel.zeros(2, 3)
    noise = sample_noise(NoiseSpec(), N=2, T=7, d=3, seed=0)
    ds = simulate_from_noise(model, noise)
    np.testing.assert_array_equal(ds.data, noise.as_trajectories())


def test_scalar_random_walk(scalar_model):
    noise = NoiseTensor(T=3, d=1, values=np.ones((3, 1)))
    ds = simulate_from_noise(scalar_model(1.0), noise)
    np.testing.assert_array_equal(ds.data[0, :, 0], [1.0, 2.0, 3.0])


def test_simulation_matches_L_image():
    for seed in range(5):
        model = random_model(3, 2, seed=seed, block_norm_sum=0.8)
        noise = sample_noise(NoiseSpec(), N=3, T=25, d=2, seed=seed)
        ds = simulate_from_noise(model, noise)
        expected = apply_L(build_L_blocks(model, 25), noise.values)
        np.testing.assert_allclose(ds.stacked(), expected, rtol=1e-10, atol=1e-12)


def test_same_seed_is_bit_identical(small_model):
    first, _ = simulate(small_model, NoiseSpec(), N=3, T=20, seed=5)
    second, _ = simulate(small_model, NoiseSpec(), N=3, T=20, seed=5)
    np.testing.assert_array_equal(first.data, second.data)


def test_different_seeds_differ(small_model):
    first, _ = simulate(small_model, NoiseSpec(), N=3, T=20, seed=5)
    second, _ = simulate(small_model, NoiseSpec(), N=3, T=20, seed=6)
    assert np.any(first.data != second.data)


def test_zero_sigma_gives_zero_data():
    model = ARModel.create([2.0 * np.eye(2)], sigma=0.0)
    ds, _ = simulate(model, NoiseSpec(sigma=0.0), N=2, T=10, seed=0)
    np.testing.assert_array_equal(ds.data, 0.0)


def test_dimension_mismatch():
    noise = sample_noise(NoiseSpec(), N=1, T=4, d=3, seed=0)
    with pytest.raises(DimensionMismatchError):
        simulate_from_noise(ARModel.zeros(1, 2), noise)


def test_invalid_sizes():
    with pytest.raises(ValueError):
        sample_noise(NoiseSpec(), N=0, T=4, d=2, seed=0)
