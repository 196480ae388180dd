# arscale/services/harness.py
# Sweep orchestration: expand a SweepSpec into cells, run each cell
# (simulate -> fit -> score), average over seeds, pick tuned hyperparameters.

import itertools
import logging
import math
import time
from collections import defaultdict
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
from joblib import Parallel, delayed

from arscale.core.config import settings
from arscale.core.models import (
    ARModel,
    CellConfig,
    EstimatorKind,
    GroundTruthSpec,
    NoiseSpec,
    RecordStatus,
    ResultRecord,
    ResultTable,
    SweepSpec,
    align_truth,
)
from arscale.services.estimators import fit
from arscale.services.ground_truth import generate_ground_truth
from arscale.services.operators import condition_number, misspec_factors
from arscale.services.simulator import simulate

logger = logging.getLogger(__name__)

ITERATIVE_KINDS = (EstimatorKind.CONSTRAINED_PGD, EstimatorKind.IHT_LOW_RANK, EstimatorKind.GROUP_NUCLEAR_PROX)
AVERAGED_FIELDS = ("error_frob_sq", "train_loss", "kappa", "eta", "runtime_ms")


# ==================== CELLS ====================

def horizon_for(p: int, d: int, r: int, N: int, multiplier: float, p_student: int) -> int:
    """T = ceil(multiplier * p * d * r / N), never below p' + 1."""
    raw = multiplier * p * d * r / N
    # round() absorbs float noise such as 25.000000000000004
    return max(math.ceil(round(raw, 9)), p_student + 1)


def truth_spec_for(cell: CellConfig) -> GroundTruthSpec:
    return GroundTruthSpec(
        p=cell.p, d=cell.d, alpha=cell.alpha,
        rank=cell.r if cell.low_rank_truth else None,
        seed=cell.seed, sigma=cell.sigma,
    )


def build_cells(spec: SweepSpec) -> List[CellConfig]:
    """Cartesian product of the grids; lambda only varies for group-nuclear fits, steps only for iterative ones."""
    cells: List[CellConfig] = []
    for d, p in itertools.product(spec.d, spec.p):
        ranks = spec.r or [d]
        for r in ranks:
            if r > d:
                logger.warning(f"⚠️ Skipping r={r} > d={d}")
                continue
            for p_student, N, multiplier, seed in itertools.product(spec.p_student or [p], spec.N, spec.T_multipliers, spec.seeds):
                T = horizon_for(p, d, r, N, multiplier, p_student)
                for est in spec.estimators:
                    lams = (spec.lambda_grid or [est.lam]) if est.kind == EstimatorKind.GROUP_NUCLEAR_PROX else [est.lam]
                    steps = (spec.step_grid or [est.step_size]) if est.kind in ITERATIVE_KINDS else [None]
                    for lam, step in itertools.product(lams, steps):
                        update = {"p_student": p_student, "lam": lam, "step_size": step,
                                  "loss_range": spec.range_mode, "init_seed": seed}
                        if est.kind == EstimatorKind.IHT_LOW_RANK and est.r is None:
                            update["r"] = r
                        cells.append(CellConfig(
                            d=d, p=p, p_student=p_student, r=r, N=N, T=T, seed=seed,
                            estimator=est.model_copy(update=update),
                            alpha=spec.alpha, sigma=spec.sigma, noise_family=spec.noise_family,
                        ))
    return sorted(cells, key=lambda c: c.sort_key())


# ==================== DIAGNOSTICS ====================

def truth_diagnostics(truth: ARModel, p_student: int, T: int) -> Tuple[float, float]:
    """(kappa, eta) of the truth at min(T, DIAGNOSTIC_HORIZON); eta = 1 without truncation."""
    horizon = max(1, min(T, settings.DIAGNOSTIC_HORIZON))
    kappa = condition_number(truth, horizon)
    eta = misspec_factors(truth, p_student, horizon)[0] if p_student < truth.p else 1.0
    return kappa, eta


@lru_cache(maxsize=256)
def _cached_truth(spec_json: str) -> ARModel:
    return generate_ground_truth(GroundTruthSpec.model_validate_json(spec_json))


@lru_cache(maxsize=1024)
def _cached_diagnostics(spec_json: str, p_student: int, T: int) -> Tuple[float, float]:
    return truth_diagnostics(_cached_truth(spec_json), p_student, T)


# ==================== RUN ====================

def _record(cell: CellConfig, **values) -> ResultRecord:
    beta = float(cell.N * cell.T)
    est = cell.estimator
    return ResultRecord(
        d=cell.d, p=cell.p, p_student=cell.p_student, r=cell.r, N=cell.N, T=cell.T, seed=cell.seed,
        estimator=est.kind,
        lam=est.lam if est.kind == EstimatorKind.GROUP_NUCLEAR_PROX else None,
        step_size=est.step_size if est.kind in ITERATIVE_KINDS else None,
        beta=beta,
        gamma=float(cell.p_student * cell.d * cell.r),
        beta_tilde=beta / math.log1p(math.sqrt(cell.N)),
        **values,
    )


def run_cell(truth: ARModel, cell: CellConfig, diagnostics: Optional[Tuple[float, float]] = None) -> ResultRecord:
    """Simulate N trajectories of length T, fit, and score against the first p' truth blocks."""
    if cell.T < cell.p_student:
        raise ValueError(f"T={cell.T} must be >= p_student={cell.p_student}")
    if truth.d != cell.d or truth.p != cell.p:
        raise ValueError(f"truth (p={truth.p}, d={truth.d}) does not match cell (p={cell.p}, d={cell.d})")

    noise = NoiseSpec(family=cell.noise_family, sigma=cell.sigma)
    dataset, _ = simulate(truth, noise, cell.N, cell.T, cell.seed)

    started = time.perf_counter()
    report = fit(dataset, cell.estimator)
    runtime_ms = (time.perf_counter() - started) * 1000.0 if settings.RECORD_RUNTIME else 0.0

    error = float(np.sum((report.blocks - align_truth(truth, cell.p_student)) ** 2))
    kappa, eta = diagnostics if diagnostics is not None else truth_diagnostics(truth, cell.p_student, cell.T)
    return _record(
        cell,
        error_frob_sq=error,
        train_loss=report.final_loss,
        kappa=kappa,
        eta=eta,
        runtime_ms=runtime_ms,
        status=RecordStatus.OK if report.converged else RecordStatus.NOT_CONVERGED,
    )


def run_cell_safe(cell: CellConfig) -> ResultRecord:
    """Worker entry point: failures become a ``failed`` record instead of aborting the sweep."""
    try:
        spec_json = truth_spec_for(cell).model_dump_json()
        truth = _cached_truth(spec_json)
        return run_cell(truth, cell, _cached_diagnostics(spec_json, cell.p_student, cell.T))
    except Exception as e:
        logger.error(f"❌ Cell d={cell.d} p={cell.p} p'={cell.p_student} N={cell.N} T={cell.T} "
                     f"seed={cell.seed} {cell.estimator.kind.value} failed: {e}", exc_info=True)
        return _record(cell, status=RecordStatus.FAILED)


def average_records(raw: Sequence[ResultRecord]) -> List[ResultRecord]:
    """One record per configuration: arithmetic mean over seeds of the non-failed records."""
    groups: Dict[Tuple, List[ResultRecord]] = defaultdict(list)
    for record in raw:
        groups[record.cell_key()].append(record)

    averaged = []
    for key in sorted(groups):
        members = groups[key]
        usable = [r for r in members if r.status != RecordStatus.FAILED]
        values = {
            name: float(np.mean([getattr(r, name) for r in usable])) if usable else math.nan
            for name in AVERAGED_FIELDS
        }
        if not usable:
            logger.warning(f"⚠️ Every seed failed for configuration {key}")
        first = members[0]
        averaged.append(first.model_copy(update={
            **values,
            "seed": None,
            "status": RecordStatus.AVERAGED if usable else RecordStatus.FAILED,
        }))
    return averaged


def run_sweep(spec: SweepSpec, workers: Optional[int] = None) -> ResultTable:
    """Run every cell of the sweep; output order never depends on completion order."""
    cells = build_cells(spec)
    workers = workers or settings.SWEEP_WORKERS
    logger.info(f"🧪 Sweep: {len(cells)} cells on {workers} worker(s)")

    if workers == 1:
        records = [run_cell_safe(cell) for cell in cells]
    else:
        records = Parallel(n_jobs=workers)(delayed(run_cell_safe)(cell) for cell in cells)

    raw = sorted(records, key=lambda r: r.sort_key())
    failed = sum(1 for r in raw if r.status == RecordStatus.FAILED)
    stalled = sum(1 for r in raw if r.status == RecordStatus.NOT_CONVERGED)
    if failed:
        logger.warning(f"⚠️ {failed} of {len(raw)} cells failed")
    if stalled:
        logger.warning(f"⚠️ {stalled} of {len(raw)} fits did not converge")
    logger.info(f"✅ Sweep finished: {len(raw)} raw records")
    return ResultTable(raw=raw, averaged=average_records(raw))


# ==================== TUNING ====================

def averaged_view(table: Union[ResultTable, Iterable[ResultRecord]]) -> List[ResultRecord]:
    if isinstance(table, ResultTable):
        return list(table.averaged) if table.averaged else average_records(table.raw)
    records = list(table)
    averaged = [r for r in records if r.seed is None]
    return averaged or average_records(records)


def tune_grid(table: Union[ResultTable, Iterable[ResultRecord]]) -> Dict[Tuple, ResultRecord]:
    """Best (lambda, step) per configuration by seed-averaged error; ties go to the larger lambda."""
    records = [r for r in averaged_view(table) if math.isfinite(r.error_frob_sq)]
    groups: Dict[Tuple, List[ResultRecord]] = defaultdict(list)
    for record in records:
        groups[record.tuning_key()].append(record)

    grids: Dict[str, set] = defaultdict(set)
    for record in records:
        grids[record.estimator.value].add((record.lam, record.step_size))

    best: Dict[Tuple, ResultRecord] = {}
    for key in sorted(groups):
        members = groups[key]
        seen = {(r.lam, r.step_size) for r in members}
        missing = grids[key[-1]] - seen
        if missing:
            logger.warning(f"⚠️ Incomplete grid for {key}: {len(missing)} of {len(grids[key[-1]])} points missing")
        best[key] = min(members, key=lambda r: (r.error_frob_sq, -(r.lam or 0.0), -(r.step_size or 0.0)))
    return best
