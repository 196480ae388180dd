# arscale/services/property_suite.py
# Numerical self-checks behind the `validate` command: operator identities,
# norm inequalities, loss/gradient correctness, noise-level concentration and
# the projection/prox primitives. Every check is seeded and deterministic.

import logging
import math
import time
from typing import Callable, Dict, List, Tuple

import numpy as np

from arscale.core.models import (
    CheckResult,
    EstimatorConfig,
    EstimatorKind,
    GroundTruthSpec,
    NoiseSpec,
    RangeMode,
    SuiteReport,
    align_truth,
    concat_blocks,
)
from arscale.services.estimators import (
    fit,
    grad_loss,
    loss,
    project_op_ball,
    svt_block,
    truncate_rank,
)
from arscale.services.ground_truth import generate_ground_truth, random_model
from arscale.services.operators import (
    apply_L,
    build_L_blocks,
    check_norm_conditions,
    m_op_norm,
    materialize_L,
    materialize_M,
    misspec_factors,
    sigma_min_L,
)
from arscale.services.simulator import sample_noise, simulate, simulate_from_noise

logger = logging.getLogger(__name__)

SUITE_SEED = 20240101

# instances per check: (quick, full)
SIZES: Dict[str, Tuple[int, int]] = {
    "operator_identities": (10, 50),
    "norm_inequalities": (20, 100),
    "gradient": (20, 20),
    "loss_decomposition": (5, 20),
    "erm_optimality": (5, 20),
    "noise_concentration": (50, 200),
    "primitives": (20, 100),
}


def _rng(name: str) -> np.random.Generator:
    return np.random.default_rng([SUITE_SEED, sum(map(ord, name))])


def _random_instance(rng: np.random.Generator, max_d: int = 4, max_p: int = 4, max_T: int = 30,
                     norm_cap: float = 0.9):
    d = int(rng.integers(1, max_d + 1))
    p = int(rng.integers(1, max_p + 1))
    T = int(rng.integers(p + 1, max_T + 1))
    seed = int(rng.integers(0, 2 ** 31))
    model = random_model(p, d, seed, block_norm_sum=float(rng.uniform(0.05, norm_cap)))
    return model, T, seed


def _result(name: str, instances: int, worst: float, tolerance: float, started: float,
            passed: bool = None, detail: str = "") -> CheckResult:
    passed = worst <= tolerance if passed is None else passed
    return CheckResult(name=name, passed=bool(passed), instances=instances, worst=float(worst),
                       tolerance=tolerance, runtime_ms=(time.perf_counter() - started) * 1000.0, detail=detail)


# ==================== CHECKS ====================

def check_operator_identities(n: int) -> CheckResult:
    """(I - M_A*) L* = I entrywise, and simulating equals applying L* to the noise."""
    started, rng, worst = time.perf_counter(), _rng("operator_identities"), 0.0
    for _ in range(n):
        model, T, seed = _random_instance(rng)
        size = T * model.d
        L = materialize_L(build_L_blocks(model, T))
        identity_gap = np.max(np.abs((np.eye(size) - materialize_M(model, T)) @ L - np.eye(size)))

        noise = sample_noise(NoiseSpec(), 3, T, model.d, seed)
        ds = simulate_from_noise(model, noise)
        via_L = apply_L(build_L_blocks(model, T), noise.values)
        sim_gap = np.linalg.norm(ds.stacked() - via_L) / max(np.linalg.norm(via_L), 1e-300)
        worst = max(worst, identity_gap, sim_gap)
    return _result("operator_identities", n, worst, 1e-10, started)


def check_norm_inequalities(n: int) -> CheckResult:
    """Block-sum and concatenated bounds on ||M_A||, the sandwich, sigma_min(L*) and eta bounds."""
    started, rng = time.perf_counter(), _rng("norm_inequalities")
    rel = 1e-6
    worst = -math.inf
    failures: List[str] = []
    for index in range(n):
        # Sum of block norms at most 0.5 keeps the misspecification bound in its valid regime
        model, T, _ = _random_instance(rng, norm_cap=0.5)
        report = check_norm_conditions(model, D=1.0, T=T, rel_tol=rel)
        if not (report.sum_bound_holds and report.sandwich_holds):
            failures.append(f"#{index} sum/sandwich")

        m_norm = m_op_norm(model, T).value
        # sigma_min(L*) >= 1 / (1 + ||M||)
        lower = 1.0 / (1.0 + m_norm)
        s_min = sigma_min_L(model, T)
        worst = max(worst, (lower - s_min) / lower)

        # Frobenius sandwich: (T - p') ||A - B||^2 <= ||M_A - M_B||_F^2 <= T ||A - B||^2
        other = rng.standard_normal(model.stacked.shape)
        diff = model.stacked - other
        frob_blocks = float(np.sum(diff ** 2))
        frob_M = float(np.sum(materialize_M(diff, T) ** 2))
        p_prime = model.p
        if not ((T - p_prime) * frob_blocks * (1 - rel) <= frob_M <= T * frob_blocks * (1 + rel)):
            failures.append(f"#{index} frobenius")

        if model.p > 1 and m_norm < 1:
            p_short = int(rng.integers(1, model.p))
            eta, _ = misspec_factors(model, p_short, T)
            bound = 2.0 / (1.0 - m_norm)
            worst = max(worst, (eta - bound) / bound)
    detail = "; ".join(failures[:5])
    return _result("norm_inequalities", n, max(worst, 0.0), rel, started,
                   passed=not failures and worst <= rel, detail=detail)


def check_gradient(n: int) -> CheckResult:
    """Central finite differences against grad_loss, every coordinate."""
    started, rng, worst = time.perf_counter(), _rng("gradient"), 0.0
    h = 1e-6
    for _ in range(n):
        model, T, seed = _random_instance(rng, max_d=3, max_p=3, max_T=20)
        ds, _ = simulate(model, NoiseSpec(), 2, T, seed)
        p_prime = int(rng.integers(1, model.p + 1))
        mode = RangeMode.FULL if rng.random() < 0.5 else RangeMode.FROM_P
        blocks = rng.standard_normal((p_prime, model.d, model.d)) * 0.3
        analytic = grad_loss(blocks, ds, mode)
        numeric = np.zeros_like(blocks)
        for idx in np.ndindex(*blocks.shape):
            bump = np.zeros_like(blocks)
            bump[idx] = h
            numeric[idx] = (loss(blocks + bump, ds, mode) - loss(blocks - bump, ds, mode)) / (2 * h)
        numeric = concat_blocks(numeric)
        scale = max(np.linalg.norm(analytic), 1e-12)
        worst = max(worst, np.linalg.norm(numeric - analytic) / scale)
    return _result("gradient", n, worst, 1e-5, started)


def _decomposition_terms(model, T: int, seed: int, blocks: np.ndarray, N: int = 3):
    """Both sides of NT (L(A) - L(A*_{p'})) = ||Delta L* E||^2 + 2 Tr(E' L*' Delta' (M_{A*_{p'}} - I) L* E)."""
    noise = sample_noise(NoiseSpec(), N, T, model.d, seed)
    ds = simulate_from_noise(model, noise)
    p_prime = blocks.shape[0]
    truncated = align_truth(model, p_prime)
    X = apply_L(build_L_blocks(model, T), noise.values)
    M_trunc = materialize_M(truncated, T)
    delta = materialize_M(blocks, T) - M_trunc
    delta_X = delta @ X
    lhs = N * T * (loss(blocks, ds) - loss(truncated, ds))
    rhs = float(np.sum(delta_X ** 2)) + 2.0 * float(np.sum(delta_X * ((M_trunc - np.eye(T * model.d)) @ X)))
    return lhs, rhs


def check_loss_decomposition(n: int) -> CheckResult:
    started, rng, worst = time.perf_counter(), _rng("loss_decomposition"), 0.0
    for _ in range(n):
        model, T, seed = _random_instance(rng, max_T=20)
        p_prime = int(rng.integers(1, model.p + 1))
        blocks = rng.standard_normal((p_prime, model.d, model.d)) * 0.3
        lhs, rhs = _decomposition_terms(model, T, seed, blocks)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-12))
    return _result("loss_decomposition", n, worst, 1e-8, started)


def check_erm_optimality(n: int) -> CheckResult:
    """For the OLS fit with p' = p: ||Delta L* E||^2 <= 2 Tr(E' Delta L* E)."""
    started, rng, worst = time.perf_counter(), _rng("erm_optimality"), 0.0
    for _ in range(n):
        model, T, seed = _random_instance(rng, max_T=20)
        noise = sample_noise(NoiseSpec(), 3, T, model.d, seed)
        ds = simulate_from_noise(model, noise)
        fitted = fit(ds, EstimatorConfig(kind=EstimatorKind.OLS, p_student=model.p)).blocks
        delta_X = (materialize_M(fitted, T) - materialize_M(model, T)) @ apply_L(build_L_blocks(model, T), noise.values)
        quadratic = float(np.sum(delta_X ** 2))
        slack = 2.0 * float(np.sum(noise.values * delta_X)) - quadratic
        worst = max(worst, -slack / max(1.0, quadratic))
    return _result("erm_optimality", n, max(worst, 0.0), 1e-8, started)


def check_noise_concentration(n: int) -> CheckResult:
    """Mean L(A*) over independent datasets sits within 5 standard errors of sigma^2 d."""
    started = time.perf_counter()
    d, p, N, T, sigma = 5, 3, 2, 100, 1.0
    truth = generate_ground_truth(GroundTruthSpec(p=p, d=d, seed=0, sigma=sigma))
    values = np.array([
        loss(truth.stacked, simulate(truth, NoiseSpec(sigma=sigma), N, T, seed)[0])
        for seed in range(n)
    ])
    mean = float(values.mean())
    stderr = float(values.std(ddof=1) / math.sqrt(n))
    z = abs(mean - sigma ** 2 * d) / stderr
    return _result("noise_concentration", n, z, 5.0, started, detail=f"mean={mean:.4f} target={sigma ** 2 * d:.1f}")


def check_primitives(n: int) -> CheckResult:
    """Projection, hard and soft thresholding against oracles on small instances."""
    started, rng = time.perf_counter(), _rng("primitives")
    worst = 0.0
    for _ in range(n):
        a = rng.standard_normal((1, 2, 2)) * 2.0
        radius = float(rng.uniform(0.2, 2.0))

        # Projection: feasible and <A - P, Y - P> <= 0 for sampled feasible Y
        proj = project_op_ball(a, radius)
        over = max(0.0, np.linalg.norm(proj[0], 2) - radius)
        candidates = rng.standard_normal((200, 2, 2))
        norms = np.linalg.norm(candidates, ord=2, axis=(1, 2))
        candidates *= (radius * rng.uniform(0, 1, size=200) / norms)[:, None, None]
        variational = np.max(np.einsum("ij,kij->k", (a - proj)[0], candidates - proj[0]))
        idempotent = np.max(np.abs(project_op_ball(proj, radius) - proj))
        worst = max(worst, over, variational, idempotent)

        # Soft thresholding: minimizes 0.5 ||X - A||^2 + tau ||X||_* over scaled-SVD candidates
        tau = float(rng.uniform(0.0, 1.5))
        prox = svt_block(a, tau)[0]

        def prox_objective(x: np.ndarray) -> float:
            return 0.5 * float(np.sum((x - a[0]) ** 2)) + tau * float(np.sum(np.linalg.svd(x, compute_uv=False)))

        U, s, Vt = np.linalg.svd(a[0])
        grid = np.linspace(0.0, s[0], 41)
        best_grid = min(prox_objective((U * np.array([c1, c2])) @ Vt) for c1 in grid for c2 in grid)
        worst = max(worst, prox_objective(prox) - best_grid)

        # Hard thresholding: Frobenius error equals the dropped singular value (Eckart-Young)
        b = rng.standard_normal((1, 3, 3))
        s_b = np.linalg.svd(b[0], compute_uv=False)
        error = np.linalg.norm(truncate_rank(b, 2)[0] - b[0])
        worst = max(worst, abs(error - s_b[2]))
    return _result("primitives", n, worst, 1e-8, started)


CHECKS: Dict[str, Callable[[int], CheckResult]] = {
    "operator_identities": check_operator_identities,
    "norm_inequalities": check_norm_inequalities,
    "gradient": check_gradient,
    "loss_decomposition": check_loss_decomposition,
    "erm_optimality": check_erm_optimality,
    "noise_concentration": check_noise_concentration,
    "primitives": check_primitives,
}


def run_property_suite(quick: bool = True) -> SuiteReport:
    mode = "quick" if quick else "full"
    report = SuiteReport(mode=mode)
    for name, check in CHECKS.items():
        instances = SIZES[name][0 if quick else 1]
        logger.info(f"🧪 Testing {name.replace('_', ' ')} ({instances} instances)...")
        try:
            result = check(instances)
        except Exception as e:
            logger.error(f"❌ Check {name} raised: {e}", exc_info=True)
            result = CheckResult(name=name, passed=False, instances=instances, worst=math.inf,
                                 tolerance=0.0, detail=f"error: {e}")
        logger.info(f"{'✅' if result.passed else '❌'} worst={result.worst:.3e} tol={result.tolerance:.1e} "
                    f"({result.runtime_ms:.0f} ms) {result.detail}".rstrip())
        report.results.append(result)
    return report


def format_table(report: SuiteReport) -> str:
    lines = ["", "=" * 60, f"📊 PROPERTY SUITE ({report.mode})", "=" * 60]
    for result in report.results:
        status = "✅ PASS" if result.passed else "❌ FAIL"
        lines.append(f"{result.name.replace('_', ' ').title():<28} {status}  "
                     f"worst={result.worst:.2e}  n={result.instances}")
    passed = sum(r.passed for r in report.results)
    lines.append("=" * 60)
    lines.append(f"Total: {passed}/{len(report.results)} checks passed")
    lines.append("🎉 All checks passed!" if report.passed else "⚠️ Some checks failed.")
    return "\n".join(lines)
