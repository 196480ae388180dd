# arscale/services/estimators.py
# Square loss, its gradient, and the four fitting procedures:
# OLS, projected gradient descent on the operator-norm ball, iterative hard
# thresholding for rank-constrained blocks, and proximal gradient descent on
# the group-nuclear regularized loss.

import logging
import math
from typing import Callable, List, Optional, Tuple

import numpy as np

from arscale.core.config import settings
from arscale.core.errors import DimensionMismatchError
from arscale.core.models import (
    ARModel,
    CertificateReport,
    Dataset,
    EstimateReport,
    EstimatorConfig,
    EstimatorKind,
    InitMode,
    RangeMode,
    align_truth,
    concat_blocks,
    split_blocks,
)
from arscale.services.ground_truth import student_init

logger = logging.getLogger(__name__)


# ==================== LOSS ====================

def regression_design(ds: Dataset, p_prime: int, range_mode: RangeMode = RangeMode.FULL) -> Tuple[np.ndarray, np.ndarray]:
    """Rows (z_t, x_t) with z_t = (x_{t-1}, ..., x_{t-p'}) and x_s = 0 for s <= 0.

    ``full`` keeps t = 1..T, ``from_p`` keeps t = p'..T.
    """
    if p_prime < 1 or p_prime > ds.T:
        raise DimensionMismatchError(f"p_prime={p_prime} must lie in [1, T={ds.T}]")
    N, T, d = ds.N, ds.T, ds.d
    padded = np.concatenate([np.zeros((N, p_prime, d)), ds.data], axis=1)
    lags = [padded[:, p_prime - k:p_prime - k + T] for k in range(1, p_prime + 1)]
    Z = np.concatenate(lags, axis=2)
    Y = np.asarray(ds.data)
    if RangeMode(range_mode) == RangeMode.FROM_P:
        Z, Y = Z[:, p_prime - 1:], Y[:, p_prime - 1:]
    return Z.reshape(-1, p_prime * d), Y.reshape(-1, d)


def _check_blocks(a: np.ndarray, ds: Dataset) -> np.ndarray:
    blocks = np.asarray(a, dtype=np.float64)
    if blocks.ndim != 3 or blocks.shape[1:] != (ds.d, ds.d):
        raise DimensionMismatchError(f"blocks of shape {blocks.shape} do not match d={ds.d}")
    return blocks


def loss(a: np.ndarray, ds: Dataset, range_mode: RangeMode = RangeMode.FULL) -> float:
    """(1/NT) * sum of squared one-step prediction residuals over the chosen range."""
    blocks = _check_blocks(a, ds)
    Z, Y = regression_design(ds, blocks.shape[0], range_mode)
    residual = Y - Z @ concat_blocks(blocks).T
    return float(np.sum(residual ** 2) / (ds.N * ds.T))


def grad_loss(a: np.ndarray, ds: Dataset, range_mode: RangeMode = RangeMode.FULL) -> np.ndarray:
    """Gradient of ``loss`` as a d x p'd matrix; block k is -(2/NT) sum r_t x_{t-k}^T."""
    blocks = _check_blocks(a, ds)
    Z, Y = regression_design(ds, blocks.shape[0], range_mode)
    residual = Y - Z @ concat_blocks(blocks).T
    return -(2.0 / (ds.N * ds.T)) * residual.T @ Z


class _Moments:
    """Second moments of the design; objective and gradient without revisiting the data."""

    def __init__(self, ds: Dataset, p_prime: int, range_mode: RangeMode):
        Z, Y = regression_design(ds, p_prime, range_mode)
        self.p_prime = p_prime
        self.scale = 1.0 / (ds.N * ds.T)
        self.gram = Z.T @ Z
        self.cross = Z.T @ Y
        self.yy = float(np.sum(Y ** 2))

    def objective(self, A: np.ndarray) -> float:
        value = self.yy - 2.0 * np.sum(A * self.cross.T) + np.sum((A @ self.gram) * A)
        return max(0.0, float(value) * self.scale)

    def gradient(self, A: np.ndarray) -> np.ndarray:
        return -2.0 * self.scale * (self.cross.T - A @ self.gram)

    def lipschitz(self) -> float:
        return 2.0 * self.scale * float(np.linalg.eigvalsh(self.gram)[-1])


# ==================== OLS ====================

def ols(ds: Dataset, p_prime: int, range_mode: RangeMode = RangeMode.FULL) -> EstimateReport:
    """Least-squares fit; minimum-Frobenius-norm solution when the Gram is singular."""
    Z, Y = regression_design(ds, p_prime, range_mode)
    # Singular values of Z below sqrt(rcond)*s_1 are those of the Gram below rcond*lambda_1
    solution, *_ = np.linalg.lstsq(Z, Y, rcond=math.sqrt(settings.PINV_RCOND))
    blocks = split_blocks(solution.T, p_prime)
    final = loss(blocks, ds, range_mode)
    return EstimateReport(kind=EstimatorKind.OLS, blocks=blocks, p_student=p_prime,
                          final_loss=final, objective=final, iters=1, converged=True)


# ==================== PRIMITIVES ====================

def project_op_ball(a: np.ndarray, radius: float) -> np.ndarray:
    """Frobenius projection of [A_1 ... A_p'] onto {||.||_op <= radius}."""
    if radius <= 0:
        raise ValueError(f"radius must be > 0, got {radius}")
    blocks = np.asarray(a, dtype=np.float64)
    concat = concat_blocks(blocks)
    U, s, Vt = np.linalg.svd(concat, full_matrices=False)
    if s[0] <= radius:
        return blocks.copy()
    return split_blocks((U * np.minimum(s, radius)) @ Vt, blocks.shape[0])


def truncate_rank(a: np.ndarray, r: int) -> np.ndarray:
    """Best rank-r approximation of every block."""
    blocks = np.asarray(a, dtype=np.float64)
    d = blocks.shape[1]
    if not 1 <= r <= d:
        raise ValueError(f"rank r={r} must lie in [1, d={d}]")
    if r == d:
        return blocks.copy()
    U, s, Vt = np.linalg.svd(blocks)
    return (U[:, :, :r] * s[:, None, :r]) @ Vt[:, :r, :]


def svt_block(a: np.ndarray, tau: float) -> np.ndarray:
    """Blockwise singular-value soft thresholding (prox of tau * sum_k ||A_k||_*)."""
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    blocks = np.asarray(a, dtype=np.float64)
    if tau == 0:
        return blocks.copy()
    U, s, Vt = np.linalg.svd(blocks)
    return (U * np.maximum(s - tau, 0.0)[:, None, :]) @ Vt


def group_nuclear_norm(a: np.ndarray) -> float:
    return float(np.sum(np.linalg.svd(np.asarray(a, dtype=np.float64), compute_uv=False)))


# ==================== ITERATIVE FITS ====================

def initial_blocks(cfg: EstimatorConfig, d: int, init: Optional[np.ndarray] = None) -> np.ndarray:
    if init is not None:
        blocks = np.array(init, dtype=np.float64)
        if blocks.shape != (cfg.p_student, d, d):
            raise DimensionMismatchError(f"init blocks have shape {blocks.shape}, expected {(cfg.p_student, d, d)}")
        return blocks
    if cfg.init == InitMode.ORTHOGONAL:
        return student_init(cfg.p_student, d, alpha_init=cfg.alpha_init, seed=cfg.init_seed)
    return np.zeros((cfg.p_student, d, d))


def _descend(
    kind: EstimatorKind,
    ds: Dataset,
    cfg: EstimatorConfig,
    prox: Callable[[np.ndarray, float], np.ndarray],
    penalty: Callable[[np.ndarray], float],
    init: Optional[np.ndarray],
    on_iterate: Optional[Callable[[np.ndarray], None]] = None,
) -> EstimateReport:
    """a <- prox(a - step * grad, step) until the relative objective change drops below tol."""
    p_prime, d = cfg.p_student, ds.d
    moments = _Moments(ds, p_prime, cfg.loss_range)
    step = cfg.step_size
    if step is None:
        lipschitz = moments.lipschitz()
        step = settings.STEP_SAFETY / lipschitz if lipschitz > 0 else 1.0

    blocks = initial_blocks(cfg, d, init)
    A = concat_blocks(blocks)
    objective = moments.objective(A) + penalty(blocks)
    history: List[float] = [objective]
    converged = False
    iters = 0

    for iters in range(1, cfg.max_iters + 1):
        candidate = concat_blocks(prox(split_blocks(A - step * moments.gradient(A), p_prime), step))
        candidate_blocks = split_blocks(candidate, p_prime)
        value = moments.objective(candidate) + penalty(candidate_blocks)
        if not (math.isfinite(value) and np.all(np.isfinite(candidate))):
            logger.warning(f"⚠️ {kind.value}: non-finite iterate at step {iters} (step size {step:.3g}) - stopping")
            break
        A = candidate
        if on_iterate is not None:
            on_iterate(candidate_blocks)
        history.append(value)
        change = abs(objective - value)
        objective = value
        if change <= cfg.tol * max(abs(history[-2]), np.finfo(float).tiny):
            converged = True
            break

    if not converged:
        logger.warning(f"⚠️ {kind.value}: not converged after {iters} iterations (objective {objective:.6g})")

    blocks = split_blocks(A, p_prime)
    return EstimateReport(
        kind=kind,
        blocks=blocks,
        p_student=p_prime,
        final_loss=loss(blocks, ds, cfg.loss_range),
        objective=objective,
        iters=iters,
        converged=converged,
        step_size=step,
        history=history,
    )


def _ball_radius(D: float, p_prime: int) -> float:
    return D / math.sqrt(p_prime)


def estimate_constrained(ds: Dataset, p_prime: int, D: float, cfg: Optional[EstimatorConfig] = None,
                         init: Optional[np.ndarray] = None) -> EstimateReport:
    """Projected gradient descent over {||[A_1 ... A_p']||_op <= D / sqrt(p')}, hence ||M_A||_op <= D."""
    if D < 1:
        raise ValueError(f"D must be >= 1, got {D}")
    cfg = (cfg or EstimatorConfig()).model_copy(update={"p_student": p_prime, "D": D})
    radius = _ball_radius(D, p_prime)
    return _descend(EstimatorKind.CONSTRAINED_PGD, ds, cfg,
                    prox=lambda blocks, _step: project_op_ball(blocks, radius),
                    penalty=lambda _blocks: 0.0, init=init)


def estimate_low_rank(ds: Dataset, p_prime: int, r: int, D: float, cfg: Optional[EstimatorConfig] = None,
                      init: Optional[np.ndarray] = None,
                      on_iterate: Optional[Callable[[np.ndarray], None]] = None) -> EstimateReport:
    """Iterative hard thresholding: gradient step, per-block rank-r truncation, operator-norm projection."""
    if not 1 <= r <= ds.d:
        raise ValueError(f"rank r={r} must lie in [1, d={ds.d}]")
    if D < 1:
        raise ValueError(f"D must be >= 1, got {D}")
    cfg = (cfg or EstimatorConfig()).model_copy(update={"p_student": p_prime, "D": D, "r": r})
    radius = _ball_radius(D, p_prime)
    # Projecting onto the ball left-multiplies each block, so ranks never grow
    return _descend(EstimatorKind.IHT_LOW_RANK, ds, cfg,
                    prox=lambda blocks, _step: project_op_ball(truncate_rank(blocks, r), radius),
                    penalty=lambda _blocks: 0.0, init=init, on_iterate=on_iterate)


def estimate_group_nuclear(ds: Dataset, p_prime: int, lam: float, cfg: Optional[EstimatorConfig] = None,
                           init: Optional[np.ndarray] = None) -> EstimateReport:
    """Proximal gradient descent on L(A) + lam * sum_k ||A_k||_*.

    ``objective`` is the regularized value, ``final_loss`` the plain loss.
    With ``cfg.project_ball`` the iterate is also projected onto the D-ball.
    """
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    cfg = (cfg or EstimatorConfig()).model_copy(update={"p_student": p_prime, "lam": lam})
    radius = _ball_radius(cfg.D, p_prime)

    def prox(blocks: np.ndarray, step: float) -> np.ndarray:
        shrunk = svt_block(blocks, step * lam)
        return project_op_ball(shrunk, radius) if cfg.project_ball else shrunk

    penalty = (lambda blocks: lam * group_nuclear_norm(blocks)) if lam > 0 else (lambda _blocks: 0.0)
    return _descend(EstimatorKind.GROUP_NUCLEAR_PROX, ds, cfg, prox=prox, penalty=penalty, init=init)


def fit(ds: Dataset, cfg: EstimatorConfig, init: Optional[np.ndarray] = None) -> EstimateReport:
    """Dispatch on ``cfg.kind``."""
    if cfg.kind == EstimatorKind.OLS:
        return ols(ds, cfg.p_student, cfg.loss_range)
    if cfg.kind == EstimatorKind.CONSTRAINED_PGD:
        return estimate_constrained(ds, cfg.p_student, cfg.D, cfg, init)
    if cfg.kind == EstimatorKind.IHT_LOW_RANK:
        if cfg.r is None:
            raise ValueError("iht_low_rank requires the target rank r")
        return estimate_low_rank(ds, cfg.p_student, cfg.r, cfg.D, cfg, init)
    if cfg.kind == EstimatorKind.GROUP_NUCLEAR_PROX:
        return estimate_group_nuclear(ds, cfg.p_student, cfg.lam, cfg, init)
    raise ValueError(f"Unknown estimator kind: {cfg.kind}")


# ==================== CERTIFICATES ====================

def check_erm_certificate(
    a_tilde: np.ndarray,
    ds: Dataset,
    a_star: ARModel,
    eps_tr: Optional[float] = None,
    range_mode: RangeMode = RangeMode.FULL,
    a_hat: Optional[np.ndarray] = None,
) -> CertificateReport:
    """Compare L(a_tilde) with the truncated truth and, when given, with a reference minimizer plus eps_tr."""
    blocks = _check_blocks(a_tilde, ds)
    p_prime = blocks.shape[0]
    current = loss(blocks, ds, range_mode)
    gap_truth = current - loss(align_truth(a_star, p_prime), ds, range_mode)

    surplus_ok = gap_reference = None
    if a_hat is not None:
        gap_reference = current - loss(_check_blocks(a_hat, ds), ds, range_mode)
        surplus_ok = gap_reference <= (eps_tr or 0.0)
    return CertificateReport(truth_certificate=gap_truth <= 0.0, gap_vs_truth=gap_truth,
                             surplus_certificate=surplus_ok, gap_vs_reference=gap_reference)


def attach_certificates(report: EstimateReport, ds: Dataset, truth: Optional[ARModel] = None,
                        reference: Optional[EstimateReport] = None, range_mode: RangeMode = RangeMode.FULL
                        ) -> EstimateReport:
    """Fill ``certificate_vs_truth`` and ``surplus_eps`` on a fitted report."""
    updates = {}
    if truth is not None:
        cert = check_erm_certificate(report.blocks, ds, truth, range_mode=range_mode,
                                     a_hat=None if reference is None else reference.blocks)
        updates["certificate_vs_truth"] = cert.truth_certificate
        if cert.gap_vs_reference is not None:
            updates["surplus_eps"] = cert.gap_vs_reference
    elif reference is not None:
        updates["surplus_eps"] = report.final_loss - reference.final_loss
    return report.model_copy(update=updates)
