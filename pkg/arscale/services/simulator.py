# arscale/services/simulator.py
# Seeded trajectory generation for x_t = sum_k A_k x_{t-k} + xi_t with x_s = 0 for s <= 0.
#
# Stream derivation: trajectory n draws from
#   Generator(Philox(SeedSequence(seed, spawn_key=(n,))))
# and consumes T*d variates in (t, i) row-major order, so every trajectory is
# independent of N and of the order in which trajectories are generated.

import logging
import math
from typing import Optional, Tuple

import numpy as np

from arscale.core.errors import DimensionMismatchError
from arscale.core.models import ARModel, Dataset, NoiseFamily, NoiseSpec, NoiseTensor, validate_model

logger = logging.getLogger(__name__)


def trajectory_generator(seed: int, n: int) -> np.random.Generator:
    """Counter-based Philox stream dedicated to trajectory n."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(n,))))


def _draw(rng: np.random.Generator, family: NoiseFamily, sigma: float, size: int) -> np.ndarray:
    if family == NoiseFamily.GAUSSIAN:
        return sigma * rng.standard_normal(size)
    if family == NoiseFamily.RADEMACHER:
        return sigma * (2.0 * rng.integers(0, 2, size=size) - 1.0)
    if family == NoiseFamily.UNIFORM:
        half_width = sigma * math.sqrt(3.0)
        return rng.uniform(-half_width, half_width, size=size)
    raise ValueError(f"Unknown noise family: {family}")


def sample_noise(spec: NoiseSpec, N: int, T: int, d: int, seed: int) -> NoiseTensor:
    """Td x N matrix of i.i.d. centered coordinates with variance sigma^2."""
    if min(N, T, d) < 1:
        raise ValueError(f"N, T, d must be >= 1, got N={N}, T={T}, d={d}")
    values = np.empty((T * d, N))
    for n in range(N):
        values[:, n] = _draw(trajectory_generator(seed, n), spec.family, spec.sigma, T * d)
    return NoiseTensor(T=T, d=d, values=values)


def simulate_from_noise(
    m: ARModel, e: NoiseTensor, seed: Optional[int] = None, noise: Optional[NoiseSpec] = None
) -> Dataset:
    """Run the recursion on each noise column; deterministic in (m, e)."""
    validate_model(m)
    if e.d != m.d:
        raise DimensionMismatchError(f"noise dimension {e.d} does not match model dimension {m.d}")

    N, T, d, p = e.N, e.T, m.d, m.p
    xi = e.as_trajectories()
    # Columns of the lag window are ordered x_{t-1}, ..., x_{t-p}
    concat = m.concatenated
    states = np.zeros((N, T + p, d))
    for t in range(T):
        window = states[:, t:t + p][:, ::-1].reshape(N, p * d)
        states[:, t + p] = window @ concat.T + xi[:, t]
    return Dataset(data=states[:, p:], seed=seed, noise=noise)


def simulate(m: ARModel, spec: NoiseSpec, N: int, T: int, seed: int) -> Tuple[Dataset, NoiseTensor]:
    """Sample noise, run the recursion and keep the noise for operator identities."""
    noise = sample_noise(spec, N, T, m.d, seed)
    dataset = simulate_from_noise(m, noise, seed=seed, noise=spec)
    logger.debug(f"Simulated N={N} T={T} d={m.d} p={m.p} family={spec.family.value} seed={seed}")
    return dataset, noise
