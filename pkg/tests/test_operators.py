import math

import numpy as np
import pytest

from arscale.core.config import settings
from arscale.core.errors import DenseCapExceededError, InsufficientDataError
from arscale.core.models import ARModel, Stability
from arscale.services.ground_truth import random_model
from arscale.services.operators import (
    apply_L,
    apply_L_adjoint,
    apply_M,
    apply_M_adjoint,
    block_norms,
    build_L_blocks,
    check_norm_conditions,
    classify_stability,
    companion,
    condition_number,
    diagnose,
    l_operator,
    m_op_norm,
    materialize_L,
    materialize_M,
    misspec_factors,
    op_norm,
    sigma_min_L,
    zeta,
)


def test_shift_operator():
    v = np.arange(1.0, 4.0)
    np.testing.assert_array_equal(apply_M([np.eye(1)], v), [0.0, 1.0, 2.0])


def test_zero_blocks_give_zero():
    v = np.ones(12)
    np.testing.assert_array_equal(apply_M(np.zeros((2, 3, 3)), v), 0.0)


def test_apply_M_matches_dense(rng):
    for _ in range(5):
        blocks = rng.standard_normal((3, 4, 4))
        v = rng.standard_normal(4 * 20)
        dense = materialize_M(blocks, 20) @ v
        np.testing.assert_allclose(apply_M(blocks, v), dense, rtol=1e-12, atol=1e-12)


def test_adjoints(rng):
    model = random_model(3, 2, seed=0, block_norm_sum=0.7)
    u, v = rng.standard_normal(30), rng.standard_normal(30)
    assert apply_M(model, u) @ v == pytest.approx(u @ apply_M_adjoint(model, v), rel=1e-12)
    l = build_L_blocks(model, 15)
    assert apply_L(l, u) @ v == pytest.approx(u @ apply_L_adjoint(l, v), rel=1e-12)


def test_materialize_M_scalar():
    np.testing.assert_array_equal(materialize_M([[[0.3]]], 2), [[0.0, 0.0], [0.3, 0.0]])


def test_M_is_nilpotent(rng):
    blocks = rng.standard_normal((2, 2, 2))
    T = 4
    M = materialize_M(blocks, T)
    np.testing.assert_allclose(np.linalg.matrix_power(M, T), 0.0, atol=1e-12)


def test_L_blocks_scalar_geometric(scalar_model):
    l = build_L_blocks(scalar_model(0.5), 6)
    np.testing.assert_allclose(l.blocks[:, 0, 0], 0.5 ** np.arange(6))


def test_L_blocks_zero_model():
    l = build_L_blocks(ARModel.zeros(2, 2), 4)
    np.testing.assert_array_equal(l.blocks[0], np.eye(2))
    np.testing.assert_array_equal(l.blocks[1:], 0.0)


def test_L_inverts_identity_minus_M():
    for seed in range(5):
        model = random_model(3, 3, seed=seed, block_norm_sum=0.9)
        T = 20
        I = np.eye(T * 3)
        product = (I - materialize_M(model, T)) @ materialize_L(build_L_blocks(model, T))
        np.testing.assert_allclose(product, I, atol=1e-10)


def test_apply_L_zero_model_is_identity(rng):
    v = rng.standard_normal(10)
    np.testing.assert_array_equal(apply_L(build_L_blocks(ARModel.zeros(1, 2), 5), v), v)


def test_apply_L_matches_dense(rng):
    model = random_model(2, 4, seed=3, block_norm_sum=0.5)
    l = build_L_blocks(model, 25)
    v = rng.standard_normal(100)
    np.testing.assert_allclose(apply_L(l, v), materialize_L(l) @ v, rtol=1e-12, atol=1e-12)


def test_op_norm_simple_maps():
    assert op_norm(np.eye(5)).value == pytest.approx(1.0)
    assert op_norm(np.diag([3.0, 1.0])).value == pytest.approx(3.0)


def test_op_norm_matches_svd(rng):
    A = rng.standard_normal((50, 50))
    estimate = op_norm(A, tol=1e-12, max_iters=100_000)
    assert estimate.converged
    assert estimate.value == pytest.approx(np.linalg.norm(A, 2), rel=1e-6)


def test_power_iteration_path_matches_dense(monkeypatch):
    model = random_model(2, 3, seed=4, block_norm_sum=0.6)
    T = 30
    dense_L = np.linalg.norm(materialize_L(build_L_blocks(model, T)), 2)
    dense_M = np.linalg.norm(materialize_M(model, T), 2)
    estimate = op_norm(l_operator(build_L_blocks(model, T)), tol=1e-12, max_iters=100_000)
    assert estimate.value == pytest.approx(dense_L, rel=1e-6)

    monkeypatch.setattr(settings, "DENSE_CAP", 10)
    assert m_op_norm(model, T, tol=1e-12).value == pytest.approx(dense_M, rel=1e-6)


def test_dense_cap(monkeypatch):
    monkeypatch.setattr(settings, "DENSE_CAP", 10)
    with pytest.raises(DenseCapExceededError):
        materialize_M(np.zeros((1, 2, 2)), 6)


def test_condition_number_zero_model():
    assert condition_number(ARModel.zeros(2, 2), 10) == pytest.approx(1.0)


def test_condition_number_scalar(scalar_model):
    L = np.array([[1.0, 0.0], [0.5, 1.0]])
    s = np.linalg.svd(L, compute_uv=False)
    assert condition_number(scalar_model(0.5), 2) == pytest.approx(s[0] / s[-1], rel=1e-10)


def test_condition_number_at_least_one():
    for seed in range(5):
        assert condition_number(random_model(2, 2, seed=seed), 12) >= 1.0


def test_sigma_min_identity():
    model = random_model(2, 3, seed=8, block_norm_sum=0.8)
    T = 15
    s = np.linalg.svd(materialize_L(build_L_blocks(model, T)), compute_uv=False)
    assert sigma_min_L(model, T) == pytest.approx(s[-1], rel=1e-8)


def test_zeta_examples(scalar_model):
    assert zeta(scalar_model(1.0), 7) == pytest.approx(1.0)
    assert zeta(ARModel.zeros(1, 3), 5) == pytest.approx(1.0)
    assert zeta(scalar_model(2.0), 4) == pytest.approx(8.0)


def test_zeta_bound_chain():
    model = random_model(2, 3, seed=2, block_norm_sum=0.9)
    T = 20
    L = materialize_L(build_L_blocks(model, T))
    scale = math.sqrt(3) * T
    assert zeta(model, T) >= np.linalg.norm(L, "fro") / scale >= np.linalg.norm(L, 2) / scale


@pytest.mark.parametrize("a, label", [
    (0.5, Stability.STRICTLY_STABLE),
    (1.0, Stability.MARGINALLY_STABLE),
    (1.5, Stability.EXPLOSIVE),
])
def test_classify_stability_scalar(scalar_model, a, label):
    assert classify_stability(scalar_model(a), 40).stability == label


def test_classify_stability_zero_model():
    assert classify_stability(ARModel.zeros(2, 2), 10).stability == Stability.STRICTLY_STABLE


def test_classify_stability_needs_points(scalar_model):
    with pytest.raises(InsufficientDataError):
        classify_stability(scalar_model(0.5), 5)


def test_companion_examples():
    matrix, radius = companion(ARModel.zeros(2, 1))
    np.testing.assert_array_equal(matrix, [[0.0, 1.0], [0.0, 0.0]])
    assert radius == pytest.approx(0.0, abs=1e-12)

    block = np.array([[0.2, 0.1], [0.0, 0.3]])
    matrix, _ = companion(ARModel.create([block]))
    np.testing.assert_array_equal(matrix, block)

    _, radius = companion(ARModel.create([[[0.5]], [[0.5]]]))
    assert radius == pytest.approx(1.0)


def test_misspec_full_order():
    model = random_model(3, 2, seed=1, block_norm_sum=0.5)
    eta, d_prime = misspec_factors(model, 3, 10)
    assert eta == 1.0
    assert d_prime == 0.0


def test_misspec_zero_tail():
    blocks = np.zeros((3, 2, 2))
    blocks[0] = 0.3 * np.eye(2)
    eta, d_prime = misspec_factors(ARModel.create(blocks), 1, 10)
    assert d_prime == 0.0
    assert eta == 1.0


def test_misspec_bound_for_stable_model():
    model = random_model(4, 2, seed=6, block_norm_sum=0.5)
    T = 30
    m_norm = m_op_norm(model, T).value
    assert m_norm <= 0.5 + 1e-12
    eta, _ = misspec_factors(model, 2, T)
    assert eta <= 2.0 / (1.0 - m_norm)


def test_norm_conditions_single_block():
    block = np.array([[0.4, 0.2], [0.1, 0.3]])
    report = check_norm_conditions([block], D=1.0, T=10)
    expected = np.linalg.norm(block, 2)
    assert report.sum_block_norms == pytest.approx(expected)
    assert report.sqrt_p_concat_norm == pytest.approx(expected)
    assert report.op_norm_M == pytest.approx(expected, rel=1e-10)


def test_norm_conditions_random(rng):
    for _ in range(10):
        blocks = rng.standard_normal((3, 3, 3))
        report = check_norm_conditions(blocks, D=2.0, T=12)
        assert report.sandwich_holds
        assert report.sum_bound_holds


def test_strictly_stable_L_bounds():
    model = random_model(3, 2, seed=12, block_norm_sum=0.7)
    T = 25
    m_norm = m_op_norm(model, T).value
    L_norm = np.linalg.norm(materialize_L(build_L_blocks(model, T)), 2)
    assert 1.0 / (1.0 + m_norm) <= L_norm * (1 + 1e-6)
    assert L_norm <= 1.0 / (1.0 - m_norm) * (1 + 1e-6)


def test_diagnose_zero_model():
    diagnostics = diagnose(ARModel.zeros(1, 2), 10)
    assert diagnostics.kappa == pytest.approx(1.0)
    assert diagnostics.stability == Stability.STRICTLY_STABLE
    assert diagnostics.eta is None
    assert diagnostics.converged
    assert set(diagnostics.public_dict()) == {
        "op_norm_M", "kappa", "zeta", "spectral_radius", "stability", "eta", "d_prime"}


def test_diagnose_with_truncation():
    model = random_model(3, 2, seed=2, block_norm_sum=0.5)
    diagnostics = diagnose(model, 20, p_prime=1)
    assert diagnostics.eta >= 1.0
    assert diagnostics.d_prime >= 0.0
    assert diagnostics.spectral_radius < 1.0


@pytest.mark.parametrize("D", [1.5, 2.0, 3.0])
def test_L_bounds_beyond_unit_ball(D):
    model = random_model(3, 2, seed=int(10 * D), block_norm_sum=D)
    T = 6
    s = np.linalg.svd(materialize_L(build_L_blocks(model, T)), compute_uv=False)
    assert s[-1] >= 1.0 / (D + 1.0) * (1 - 1e-9)
    assert sigma_min_L(model, T) >= 1.0 / (D + 1.0) * (1 - 1e-9)
    assert s[0] <= (D ** T - 1.0) / (D - 1.0) * (1 + 1e-9)


def test_explosive_model_is_classified_without_overflow():
    model = ARModel.create([1.5 * np.eye(2)])
    report = classify_stability(model, 2000)
    assert report.stability == Stability.EXPLOSIVE
    assert report.rho > 1.0


@pytest.mark.parametrize("blocks", [[1.5 * np.eye(2)], [[[1.5]]]])
def test_zeta_of_explosive_model_is_infinite(blocks):
    assert zeta(ARModel.create(blocks), 2000) == math.inf


def test_block_norms_of_overflowed_blocks(scalar_model):
    norms = block_norms(build_L_blocks(scalar_model(1.5), 2000))
    assert norms[0] == pytest.approx(1.0)
    assert norms[10] == pytest.approx(1.5 ** 10)
    assert norms[-1] == math.inf


def test_diagnose_explosive_model(scalar_model):
    diagnostics = diagnose(scalar_model(1.5), 2000)
    assert diagnostics.stability == Stability.EXPLOSIVE
    assert diagnostics.kappa == math.inf
    assert diagnostics.zeta == math.inf
    assert diagnostics.spectral_radius == pytest.approx(1.5)
