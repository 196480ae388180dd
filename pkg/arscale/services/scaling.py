# arscale/services/scaling.py
# Log-log checks on sweep results: slope against beta/gamma, the spread of
# error * beta / gamma, collapse of per-p' curves, and the low-rank benefit.

import itertools
import logging
import math
from typing import Iterable, List, Union

import numpy as np
import pandas as pd
from scipy.stats import linregress

from arscale.core.errors import InsufficientDataError
from arscale.core.models import (
    CollapseReport,
    EstimatorKind,
    LowRankComparison,
    RateBand,
    RecordStatus,
    ResultRecord,
    ResultTable,
    SlopeFit,
)
from arscale.services.harness import averaged_view, tune_grid

logger = logging.getLogger(__name__)

X_AXES = ("beta/gamma", "beta_tilde/gamma")

TableLike = Union[ResultTable, Iterable[ResultRecord]]


def results_frame(table: TableLike, estimator: Union[EstimatorKind, str, None] = None) -> pd.DataFrame:
    """Seed-averaged usable records as a DataFrame with both x axes attached."""
    rows = [r.row() for r in averaged_view(table) if r.status != RecordStatus.FAILED]
    frame = pd.DataFrame(rows)
    if frame.empty:
        return frame
    if estimator is not None:
        frame = frame[frame["estimator"] == EstimatorKind(estimator).value]
    frame = frame.assign(error_frob_sq=frame["error_frob_sq"].astype(float))
    frame = frame[np.isfinite(frame["error_frob_sq"]) & (frame["error_frob_sq"] > 0)].copy()
    frame["beta/gamma"] = frame["beta"] / frame["gamma"]
    frame["beta_tilde/gamma"] = frame["beta_tilde"] / frame["gamma"]
    return frame


def _check_axis(x: str) -> None:
    if x not in X_AXES:
        raise ValueError(f"x must be one of {X_AXES}, got '{x}'")


def fit_slope(table: TableLike, x: str = "beta/gamma", estimator: Union[EstimatorKind, str, None] = None) -> SlopeFit:
    """Least squares of log(error) on log(x); the parametric rate predicts slope -1."""
    _check_axis(x)
    frame = results_frame(table, estimator)
    if frame.empty or frame[x].nunique() < 3:
        found = 0 if frame.empty else frame[x].nunique()
        raise InsufficientDataError(f"fit_slope needs at least 3 distinct x values, got {found}")
    result = linregress(np.log(frame[x].to_numpy()), np.log(frame["error_frob_sq"].to_numpy()))
    return SlopeFit(
        slope=float(result.slope),
        intercept=float(result.intercept),
        r_squared=float(result.rvalue ** 2),
        n_points=len(frame),
        x=x,
    )


def rate_band(table: TableLike, estimator: Union[EstimatorKind, str, None] = None) -> RateBand:
    frame = results_frame(table, estimator)
    if frame.empty:
        raise InsufficientDataError("rate_band needs at least one usable record")
    normalized = frame["error_frob_sq"] * frame["beta/gamma"]
    low, high = float(normalized.min()), float(normalized.max())
    return RateBand(low=low, high=high, ratio=high / low, n_points=len(frame))


def curve_collapse(table: TableLike, by: str = "p_student", x: str = "beta/gamma",
                   estimator: Union[EstimatorKind, str, None] = None) -> CollapseReport:
    """Largest pairwise ratio between per-group curves, interpolated in log-log over their shared x-range."""
    _check_axis(x)
    frame = results_frame(table, estimator)
    if frame.empty:
        raise InsufficientDataError("curve_collapse needs usable records")

    curves = {}
    for key, group in frame.groupby(by, sort=True):
        # Several cells can share an x value (e.g. different N); average them in log space
        points = group.assign(logx=np.log(group[x]), logy=np.log(group["error_frob_sq"]))
        points = points.groupby("logx", sort=True)["logy"].mean()
        curves[key] = (points.index.to_numpy(), points.to_numpy())

    pairs = {}
    for a, b in itertools.combinations(sorted(curves), 2):
        xa, ya = curves[a]
        xb, yb = curves[b]
        lo, hi = max(xa[0], xb[0]), min(xa[-1], xb[-1])
        if lo > hi:
            logger.warning(f"⚠️ Curves {by}={a} and {by}={b} share no x-range")
            continue
        grid = np.union1d(xa, xb)
        grid = grid[(grid >= lo) & (grid <= hi)]
        gap = np.max(np.abs(np.interp(grid, xa, ya) - np.interp(grid, xb, yb)))
        pairs[f"{a}~{b}"] = float(math.exp(gap))

    if not pairs:
        raise InsufficientDataError(f"curve_collapse needs two {by} curves with overlapping x-ranges")
    return CollapseReport(max_ratio=max(pairs.values()), pairs=pairs)


def lowrank_benefit(table: TableLike) -> List[LowRankComparison]:
    """Tuned group-nuclear error against OLS error for every configuration that has both."""
    tuned = tune_grid(table)
    comparisons = []
    for key, best in tuned.items():
        if best.estimator != EstimatorKind.GROUP_NUCLEAR_PROX:
            continue
        ols_record = tuned.get(key[:-1] + (EstimatorKind.OLS.value,))
        if ols_record is None:
            continue
        comparisons.append(LowRankComparison(
            d=best.d, p=best.p, p_student=best.p_student, r=best.r, N=best.N, T=best.T,
            tuned_error=best.error_frob_sq, ols_error=ols_record.error_frob_sq,
            lam=best.lam, step_size=best.step_size,
        ))
    if not comparisons:
        logger.warning("⚠️ No configuration has both a group-nuclear and an OLS fit")
    return comparisons
