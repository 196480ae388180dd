import numpy as np
import pytest

from arscale.core.models import GroundTruthSpec
from arscale.services.ground_truth import (
    generate_ground_truth,
    haar_orthogonal,
    random_model,
    student_init,
)


def test_haar_is_orthogonal(rng):
    q = haar_orthogonal(6, rng)
    np.testing.assert_allclose(q @ q.T, np.eye(6), atol=1e-12)


@pytest.mark.parametrize("p, d, alpha", [(1, 1, 0.5), (3, 4, 0.5), (5, 2, 0.9)])
def test_block_norms_sum_to_alpha(p, d, alpha):
    model = generate_ground_truth(GroundTruthSpec(p=p, d=d, alpha=alpha, seed=3))
    norms = np.linalg.norm(model.stacked, ord=2, axis=(1, 2))
    assert norms.sum() == pytest.approx(alpha)
    np.testing.assert_allclose(norms, alpha / p)


def test_low_rank_truth():
    model = generate_ground_truth(GroundTruthSpec(p=3, d=6, rank=2, seed=1))
    for block in model.blocks:
        s = np.linalg.svd(block, compute_uv=False)
        np.testing.assert_allclose(s[:2], 0.5 / 3)
        np.testing.assert_allclose(s[2:], 0.0, atol=1e-12)


def test_rank_must_be_below_d():
    with pytest.raises(ValueError):
        GroundTruthSpec(p=1, d=3, rank=3)


def test_generation_is_deterministic():
    spec = GroundTruthSpec(p=2, d=3, seed=9)
    np.testing.assert_array_equal(generate_ground_truth(spec).stacked, generate_ground_truth(spec).stacked)
    other = generate_ground_truth(spec.model_copy(update={"seed": 10}))
    assert not np.array_equal(generate_ground_truth(spec).stacked, other.stacked)


def test_student_init_recipe():
    blocks = student_init(4, 3, seed=2)
    assert blocks.shape == (4, 3, 3)
    assert np.linalg.norm(blocks, ord=2, axis=(1, 2)).sum() == pytest.approx(1.0)
    np.testing.assert_array_equal(blocks, student_init(4, 3, seed=2))


def test_student_init_differs_from_truth():
    truth = generate_ground_truth(GroundTruthSpec(p=2, d=3, seed=0, alpha=1.0))
    assert not np.allclose(truth.stacked, student_init(2, 3, alpha_init=1.0, seed=0))


def test_random_model_scaling():
    model = random_model(3, 4, seed=0, block_norm_sum=0.8)
    assert np.linalg.norm(model.stacked, ord=2, axis=(1, 2)).sum() == pytest.approx(0.8)
