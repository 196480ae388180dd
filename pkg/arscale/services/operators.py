# arscale/services/operators.py
# Prediction operator M_A, data-generating operator L* = (I - M_A*)^{-1},
# and the scalar diagnostics derived from them.
#
# Stacked vectors have length T*d with block t holding the d coordinates at time t.
# Every apply_* function also accepts a Td x m matrix and acts column-wise.

import logging
import math
from typing import Callable, Optional, Tuple, Union

import numpy as np
from scipy.sparse.linalg import LinearOperator, aslinearoperator

from arscale.core.config import settings
from arscale.core.errors import DenseCapExceededError, DimensionMismatchError, InsufficientDataError
from arscale.core.models import (
    ARModel,
    Diagnostics,
    LBlocks,
    NormConditionReport,
    NormEstimate,
    Stability,
    StabilityReport,
    concat_blocks,
    validate_model,
)

logger = logging.getLogger(__name__)

BlocksLike = Union[ARModel, np.ndarray, list]


def as_blocks(a: BlocksLike) -> np.ndarray:
    """(p, d, d) float array from a model or a block sequence."""
    if isinstance(a, ARModel):
        return a.stacked
    blocks = np.asarray(a, dtype=np.float64)
    if blocks.ndim != 3 or blocks.shape[1] != blocks.shape[2]:
        raise DimensionMismatchError(f"expected (p, d, d) blocks, got shape {blocks.shape}")
    return blocks


def _as_time_major(v: np.ndarray, d: int) -> Tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=np.float64)
    vector = v.ndim == 1
    cols = v[:, None] if vector else v
    if cols.ndim != 2 or cols.shape[0] % d != 0:
        raise DimensionMismatchError(f"stacked length {cols.shape[0]} is not a multiple of d={d}")
    return cols.reshape(cols.shape[0] // d, d, cols.shape[1]), vector


def _restore(out: np.ndarray, vector: bool) -> np.ndarray:
    flat = out.reshape(out.shape[0] * out.shape[1], out.shape[2])
    return flat[:, 0] if vector else flat


def _check_cap(size: int) -> None:
    if size > settings.DENSE_CAP:
        raise DenseCapExceededError(size, settings.DENSE_CAP)


# ==================== M_A ====================

def apply_M(a: BlocksLike, v: np.ndarray, T: Optional[int] = None) -> np.ndarray:
    """Block t of the output is sum_{k=1}^{min(t-1, p')} A_k v_{t-k}."""
    blocks = as_blocks(a)
    V, vector = _as_time_major(v, blocks.shape[1])
    if T is not None and V.shape[0] != T:
        raise DimensionMismatchError(f"vector covers {V.shape[0]} steps, expected T={T}")
    out = np.zeros_like(V)
    steps = V.shape[0]
    for k in range(1, min(blocks.shape[0], steps - 1) + 1):
        out[k:] += blocks[k - 1] @ V[:steps - k]
    return _restore(out, vector)


def apply_M_adjoint(a: BlocksLike, v: np.ndarray) -> np.ndarray:
    blocks = as_blocks(a)
    V, vector = _as_time_major(v, blocks.shape[1])
    out = np.zeros_like(V)
    steps = V.shape[0]
    for k in range(1, min(blocks.shape[0], steps - 1) + 1):
        out[:steps - k] += blocks[k - 1].T @ V[k:]
    return _restore(out, vector)


def _toeplitz_dense(lag_blocks: np.ndarray, T: int, first_lag: int) -> np.ndarray:
    """Dense lower-block-Toeplitz matrix with block (i, j) = lag_blocks[i - j - first_lag]."""
    d = lag_blocks.shape[1]
    full = np.zeros((T, d, T, d))
    for offset, block in enumerate(lag_blocks):
        lag = offset + first_lag
        if lag >= T:
            break
        cols = np.arange(T - lag)
        full[cols + lag, :, cols, :] = block
    return full.reshape(T * d, T * d)


def materialize_M(a: BlocksLike, T: int) -> np.ndarray:
    blocks = as_blocks(a)
    _check_cap(T * blocks.shape[1])
    return _toeplitz_dense(blocks, T, first_lag=1)


def m_operator(a: BlocksLike, T: int) -> LinearOperator:
    blocks = as_blocks(a)
    n = T * blocks.shape[1]
    return LinearOperator(
        (n, n), matvec=lambda v: apply_M(blocks, v), rmatvec=lambda v: apply_M_adjoint(blocks, v),
        matmat=lambda V: apply_M(blocks, V), dtype=np.float64,
    )


def identity_minus_m_operator(a: BlocksLike, T: int) -> LinearOperator:
    blocks = as_blocks(a)
    n = T * blocks.shape[1]
    return LinearOperator(
        (n, n),
        matvec=lambda v: np.ravel(v) - apply_M(blocks, np.ravel(v)),
        rmatvec=lambda v: np.ravel(v) - apply_M_adjoint(blocks, np.ravel(v)),
        dtype=np.float64,
    )


# ==================== L* ====================

def build_L_blocks(m: ARModel, T: int) -> LBlocks:
    """L^(1,1) = I and L^(i,1) = sum_{k=1}^{min(i-1,p)} A_k L^(i-k,1)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    validate_model(m)
    blocks = np.zeros((T, m.d, m.d))
    blocks[0] = np.eye(m.d)
    A = m.stacked
    # Explosive systems overflow to inf/nan; block_norms maps those blocks to inf
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, T):
            for k in range(1, min(i, m.p) + 1):
                blocks[i] += A[k - 1] @ blocks[i - k]
    return LBlocks(T=T, blocks=blocks)


def apply_L(l: LBlocks, v: np.ndarray) -> np.ndarray:
    """Block t of the output is sum_{s<=t} L^(t-s+1,1) v_s."""
    V, vector = _as_time_major(v, l.d)
    if V.shape[0] != l.T:
        raise DimensionMismatchError(f"vector covers {V.shape[0]} steps, expected T={l.T}")
    out = np.zeros_like(V)
    for lag in range(l.T):
        out[lag:] += l.blocks[lag] @ V[:l.T - lag]
    return _restore(out, vector)


def apply_L_adjoint(l: LBlocks, v: np.ndarray) -> np.ndarray:
    V, vector = _as_time_major(v, l.d)
    if V.shape[0] != l.T:
        raise DimensionMismatchError(f"vector covers {V.shape[0]} steps, expected T={l.T}")
    out = np.zeros_like(V)
    for lag in range(l.T):
        out[:l.T - lag] += l.blocks[lag].T @ V[lag:]
    return _restore(out, vector)


def materialize_L(l: LBlocks) -> np.ndarray:
    _check_cap(l.T * l.d)
    return _toeplitz_dense(l.blocks, l.T, first_lag=0)


def l_operator(l: LBlocks) -> LinearOperator:
    n = l.T * l.d
    return LinearOperator(
        (n, n), matvec=lambda v: apply_L(l, v), rmatvec=lambda v: apply_L_adjoint(l, v),
        matmat=lambda V: apply_L(l, V), dtype=np.float64,
    )


# ==================== NORMS ====================

def op_norm(
    apply: Union[LinearOperator, np.ndarray],
    dim: Optional[int] = None,
    tol: Optional[float] = None,
    max_iters: Optional[int] = None,
    seed: Optional[int] = None,
) -> NormEstimate:
    """Largest singular value by power iteration on the normal map.

    Starts from a fixed-seed random unit vector; on non-convergence the best
    estimate is returned with ``converged=False``.
    """
    operator = aslinearoperator(apply)
    tol = settings.POWER_TOL if tol is None else tol
    max_iters = settings.POWER_MAX_ITERS if max_iters is None else max_iters
    if tol <= 0:
        raise ValueError(f"tol must be > 0, got {tol}")
    n = operator.shape[1] if dim is None else dim
    if n != operator.shape[1]:
        raise DimensionMismatchError(f"dim={n} does not match operator shape {operator.shape}")

    rng = np.random.default_rng(settings.POWER_SEED if seed is None else seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    previous = 0.0
    best = 0.0
    for iteration in range(1, max_iters + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            w = np.ravel(operator.matvec(v))
            sigma = float(np.linalg.norm(w))
        if not math.isfinite(sigma):
            logger.warning(f"⚠️ Power iteration overflowed at step {iteration} - reporting an infinite norm")
            return NormEstimate(value=math.inf, converged=True, iterations=iteration)
        best = max(best, sigma)
        if sigma == 0.0:
            return NormEstimate(value=0.0, converged=True, iterations=iteration)
        u = np.ravel(operator.rmatvec(w))
        u_norm = np.linalg.norm(u)
        if u_norm == 0.0:
            return NormEstimate(value=sigma, converged=True, iterations=iteration)
        v = u / u_norm
        if abs(sigma - previous) <= tol * sigma:
            return NormEstimate(value=best, converged=True, iterations=iteration)
        previous = sigma

    logger.warning(f"⚠️ Power iteration did not converge after {max_iters} iterations (estimate {best:.6g})")
    return NormEstimate(value=best, converged=False, iterations=max_iters)


def _norm(size: int, dense: Callable[[], np.ndarray], operator: Callable[[], LinearOperator],
          tol: Optional[float] = None) -> NormEstimate:
    """Exact 2-norm below the dense cap, power iteration above it."""
    if size <= settings.DENSE_CAP:
        with np.errstate(over="ignore", invalid="ignore"):
            matrix = dense()
        if not np.all(np.isfinite(matrix)):
            return NormEstimate(value=math.inf, converged=True, iterations=0)
        return NormEstimate(value=float(np.linalg.norm(matrix, 2)), converged=True, iterations=0)
    return op_norm(operator(), tol=tol)


def m_op_norm(a: BlocksLike, T: int, tol: Optional[float] = None) -> NormEstimate:
    blocks = as_blocks(a)
    return _norm(T * blocks.shape[1], lambda: materialize_M(blocks, T), lambda: m_operator(blocks, T), tol)


def _l_norms(m: ARModel, T: int, tol: Optional[float] = None) -> Tuple[NormEstimate, NormEstimate]:
    """(||L*||_op, ||I - M_A*||_op)."""
    l = build_L_blocks(m, T)
    size = T * m.d
    top = _norm(size, lambda: materialize_L(l), lambda: l_operator(l), tol)
    inverse = _norm(
        size,
        lambda: np.eye(size) - materialize_M(m, T),
        lambda: identity_minus_m_operator(m, T),
        tol,
    )
    return top, inverse


def sigma_min_L(m: ARModel, T: int) -> float:
    """sigma_min(L*) = 1 / ||I - M_A*||_op."""
    _, inverse = _l_norms(m, T)
    return 1.0 / inverse.value


def _condition(m: ARModel, T: int) -> Tuple[float, bool]:
    top, inverse = _l_norms(m, T)
    kappa = max(1.0, top.value * inverse.value)
    return kappa, top.converged and inverse.converged


def condition_number(m: ARModel, T: int) -> float:
    """kappa = ||L*||_op / sigma_min(L*)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    kappa, converged = _condition(m, T)
    if not converged:
        logger.warning(f"⚠️ Condition number at T={T} computed from non-converged norm estimates")
    return kappa


def block_norms(l: LBlocks) -> np.ndarray:
    """Operator norm of every block; inf for blocks that overflowed."""
    finite = np.all(np.isfinite(l.blocks), axis=(1, 2))
    norms = np.full(l.T, math.inf)
    if finite.any():
        norms[finite] = np.linalg.norm(l.blocks[finite], ord=2, axis=(1, 2))
    return norms


def zeta(m: ARModel, T: int) -> float:
    """Largest operator norm among the blocks of L* (first block-column suffices)."""
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    return float(np.max(block_norms(build_L_blocks(m, T))))


# ==================== STABILITY ====================

def classify_stability(m: ARModel, T: int, margin: Optional[float] = None) -> StabilityReport:
    """Fit the growth of ||L^(k,1)||_op over the tail k >= T/2.

    Exponential fit gives the rate rho, polynomial fit the degree; the label
    comes from rho against 1 -/+ margin.
    """
    if T < 8:
        raise InsufficientDataError(f"classify_stability needs T >= 8, got {T}")
    margin = settings.STABILITY_MARGIN if margin is None else margin

    norms = block_norms(build_L_blocks(m, T))
    k = np.arange(1, T + 1, dtype=np.float64)
    tail = k >= T / 2.0

    if np.all(norms[1:] == 0.0) or np.any(norms[tail] == 0.0):
        return StabilityReport(stability=Stability.STRICTLY_STABLE, rho=0.0, exp_residual=0.0,
                               poly_degree=0.0, poly_residual=0.0, n_points=int(tail.sum()))
    if not np.all(np.isfinite(norms[tail])):
        return StabilityReport(stability=Stability.EXPLOSIVE, rho=math.inf, exp_residual=0.0,
                               poly_degree=math.inf, poly_residual=0.0, n_points=int(tail.sum()))

    log_norms = np.log(norms[tail])
    exp_fit, exp_res, *_ = np.polyfit(k[tail], log_norms, 1, full=True)
    poly_fit, poly_res, *_ = np.polyfit(np.log(k[tail]), log_norms, 1, full=True)
    n_points = int(tail.sum())
    rho = float(np.exp(exp_fit[0]))

    if rho < 1.0 - margin:
        label = Stability.STRICTLY_STABLE
    elif rho > 1.0 + margin:
        label = Stability.EXPLOSIVE
    else:
        label = Stability.MARGINALLY_STABLE

    def rms(res: np.ndarray) -> float:
        return float(np.sqrt(res[0] / n_points)) if len(res) else 0.0

    return StabilityReport(stability=label, rho=rho, exp_residual=rms(exp_res),
                           poly_degree=float(poly_fit[0]), poly_residual=rms(poly_res), n_points=n_points)


def companion(m: ARModel) -> Tuple[np.ndarray, float]:
    """Block companion matrix (shift rows on top, [A_p ... A_1] last) and its spectral radius."""
    validate_model(m)
    p, d = m.p, m.d
    _check_cap(p * d)
    matrix = np.zeros((p * d, p * d))
    matrix[:-d, d:] = np.eye((p - 1) * d)
    matrix[-d:, :] = concat_blocks(m.stacked[::-1])
    radius = float(np.max(np.abs(np.linalg.eigvals(matrix))))
    return matrix, radius


# ==================== MISSPECIFICATION & NORM CONDITIONS ====================

def _misspec(m: ARModel, p_prime: int, T: int, tol: Optional[float]) -> Tuple[float, float, bool]:
    if not 1 <= p_prime <= m.p:
        raise ValueError(f"p_prime={p_prime} out of range [1, {m.p}]")
    if p_prime == m.p:
        return 1.0, 0.0, True
    tail = m.stacked.copy()
    tail[:p_prime] = 0.0
    l = build_L_blocks(m, T)

    def composite() -> LinearOperator:
        n = T * m.d
        return LinearOperator(
            (n, n),
            matvec=lambda v: apply_M(tail, apply_L(l, np.ravel(v))),
            rmatvec=lambda v: apply_L_adjoint(l, apply_M_adjoint(tail, np.ravel(v))),
            dtype=np.float64,
        )

    estimate = _norm(T * m.d, lambda: materialize_M(tail, T) @ materialize_L(l), composite, tol)
    d_prime = estimate.value
    return max(1.0, 1.0 + d_prime), d_prime, estimate.converged


def misspec_factors(m: ARModel, p_prime: int, T: int, tol: Optional[float] = None) -> Tuple[float, float]:
    """(eta, D') with D' = ||(M_A* - M_A*_{1:p'}) L*||_op and eta = 1 when p' = p."""
    eta, d_prime, converged = _misspec(m, p_prime, T, tol)
    if not converged:
        logger.warning(f"⚠️ D' estimate for p'={p_prime}, T={T} did not converge")
    return eta, d_prime


def check_norm_conditions(a: BlocksLike, D: float, T: int, rel_tol: float = 1e-6) -> NormConditionReport:
    """Compare the block-sum, concatenated and direct bounds on ||M_A||_op against D."""
    blocks = as_blocks(a)
    p_student = blocks.shape[0]
    sum_norms = float(np.sum(np.linalg.norm(blocks, ord=2, axis=(1, 2))))
    concat_norm = float(np.linalg.norm(concat_blocks(blocks), 2))
    sqrt_p_concat = math.sqrt(p_student) * concat_norm
    estimate = m_op_norm(blocks, T)
    m_norm = estimate.value

    slack = 1.0 + rel_tol
    # ||A||_op <= ||M_A||_op needs a full block-row of M_A, i.e. T > p'
    lower_ok = T <= p_student or concat_norm <= m_norm * slack + rel_tol
    upper_ok = m_norm <= sqrt_p_concat * slack + rel_tol
    return NormConditionReport(
        D=D,
        sum_block_norms=sum_norms,
        sqrt_p_concat_norm=sqrt_p_concat,
        concat_norm=concat_norm,
        op_norm_M=m_norm,
        sum_within_D=sum_norms <= D,
        concat_within_D=sqrt_p_concat <= D,
        M_within_D=m_norm <= D,
        sandwich_holds=lower_ok and upper_ok,
        sum_bound_holds=m_norm <= sum_norms * slack + rel_tol,
        converged=estimate.converged,
    )


# ==================== DIAGNOSTICS ====================

def diagnose(m: ARModel, T: int, p_prime: Optional[int] = None) -> Diagnostics:
    """All scalar diagnostics of a system at horizon T."""
    validate_model(m)
    m_norm = m_op_norm(m, T)
    kappa, kappa_converged = _condition(m, T)
    spectral_radius = None
    if m.p * m.d <= settings.DENSE_CAP:
        _, spectral_radius = companion(m)
    else:
        logger.warning(f"⚠️ Companion matrix of size {m.p * m.d} exceeds the dense cap - spectral radius skipped")
    stability = classify_stability(m, max(T, 8)).stability

    eta = d_prime = None
    misspec_converged = True
    if p_prime is not None and p_prime < m.p:
        eta, d_prime, misspec_converged = _misspec(m, p_prime, T, None)

    converged = m_norm.converged and kappa_converged and misspec_converged
    if not converged:
        logger.warning(f"⚠️ Some diagnostics at T={T} are based on non-converged power iterations")
    return Diagnostics(
        op_norm_M=m_norm.value,
        kappa=kappa,
        zeta=zeta(m, T),
        spectral_radius=spectral_radius,
        stability=stability,
        eta=eta,
        d_prime=d_prime,
        converged=converged,
    )
