# arscale/services/ground_truth.py
# Ground-truth and student-initialization recipes: p Haar-orthogonal d x d blocks
# scaled by alpha / p, optionally with the trailing d - r singular values zeroed.

import logging
from typing import Optional

import numpy as np
from scipy.linalg import qr

from arscale.core.config import settings
from arscale.core.models import ARModel, GroundTruthSpec

logger = logging.getLogger(__name__)

# Stream tags keep ground truth, student init and noise draws from sharing a stream
TRUTH_STREAM = 1
STUDENT_STREAM = 2
RANDOM_MODEL_STREAM = 3


def _generator(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def haar_orthogonal(d: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed orthogonal matrix: QR of a Gaussian matrix with sign-fixed diagonal of R."""
    q, r = qr(rng.standard_normal((d, d)))
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs


def scaled_orthogonal_blocks(p: int, d: int, alpha: float, rng: np.random.Generator) -> np.ndarray:
    """A_k = (alpha / p) Q_k, so that sum_k ||A_k||_op = alpha."""
    return np.stack([(alpha / p) * haar_orthogonal(d, rng) for _ in range(p)])


def zero_trailing_singular_values(blocks: np.ndarray, rank: int) -> np.ndarray:
    U, s, Vt = np.linalg.svd(blocks)
    s[:, rank:] = 0.0
    return (U * s[:, None, :]) @ Vt


def generate_ground_truth(spec: GroundTruthSpec) -> ARModel:
    rng = _generator(spec.seed, TRUTH_STREAM)
    blocks = scaled_orthogonal_blocks(spec.p, spec.d, spec.alpha, rng)
    if spec.rank is not None:
        blocks = zero_trailing_singular_values(blocks, spec.rank)
    logger.debug(f"Ground truth p={spec.p} d={spec.d} alpha={spec.alpha} rank={spec.rank} seed={spec.seed}")
    return ARModel.create(blocks, sigma=spec.sigma)


def student_init(p_student: int, d: int, alpha_init: Optional[float] = None, seed: int = 0) -> np.ndarray:
    """Initial student blocks, same recipe as the truth with p' blocks and alpha = 1 by default."""
    alpha = settings.STUDENT_ALPHA if alpha_init is None else alpha_init
    return scaled_orthogonal_blocks(p_student, d, alpha, _generator(seed, STUDENT_STREAM))


def random_model(p: int, d: int, seed: int, block_norm_sum: Optional[float] = None, sigma: float = 1.0) -> ARModel:
    """Gaussian blocks, optionally rescaled so that sum_k ||A_k||_op equals block_norm_sum."""
    rng = _generator(seed, RANDOM_MODEL_STREAM)
    blocks = rng.standard_normal((p, d, d)) / np.sqrt(d * p)
    if block_norm_sum is not None:
        total = float(np.sum(np.linalg.norm(blocks, ord=2, axis=(1, 2))))
        if total > 0:
            blocks *= block_norm_sum / total
    return ARModel.create(blocks, sigma=sigma)
