# arscale/services/presets.py
# Named sweep configurations; "full" presets carry the large reference grids,
# "desk" presets shrink them to laptop scale.

from typing import Callable, Dict, List

from arscale.core.models import EstimatorConfig, EstimatorKind, SweepSpec

SEEDS = [0, 1, 2]


def _powers(first: int, last: int) -> List[float]:
    return [10.0 ** -k for k in range(first, last + 1)]


def rate_full() -> SweepSpec:
    return SweepSpec(
        d=[5, 10, 15], p=[5, 10, 15], N=[1, 5, 10],
        T_multipliers=[1, 5, 10, 25, 50],
        estimators=[EstimatorConfig(kind=EstimatorKind.OLS)],
        seeds=SEEDS,
    )


def rate_desk() -> SweepSpec:
    return SweepSpec(
        d=[5, 10], p=[5, 10], N=[5],
        T_multipliers=[5, 25, 50],
        estimators=[EstimatorConfig(kind=EstimatorKind.OLS)],
        seeds=SEEDS,
    )


def misspec_desk() -> SweepSpec:
    return SweepSpec(
        d=[5], p=[15], p_student=[5, 10, 15], N=[5],
        T_multipliers=[5, 25, 50],
        estimators=[EstimatorConfig(kind=EstimatorKind.OLS)],
        seeds=SEEDS,
    )


def lowrank_desk() -> SweepSpec:
    return SweepSpec(
        d=[10], r=[3], p=[5], N=[5],
        T_multipliers=[5, 25],
        estimators=[
            EstimatorConfig(kind=EstimatorKind.OLS),
            EstimatorConfig(kind=EstimatorKind.GROUP_NUCLEAR_PROX),
        ],
        lambda_grid=_powers(1, 5),
        step_grid=[1e-1, 1e-2],
        seeds=SEEDS,
    )


def lowrank_full() -> SweepSpec:
    return SweepSpec(
        d=[15], r=[5], p=[5, 10, 15], N=[1, 5, 10],
        T_multipliers=[1, 5, 10, 25, 50],
        estimators=[
            EstimatorConfig(kind=EstimatorKind.OLS),
            EstimatorConfig(kind=EstimatorKind.GROUP_NUCLEAR_PROX),
        ],
        lambda_grid=_powers(1, 7),
        step_grid=[1e-1, 1e-2, 1e-3],
        seeds=SEEDS,
    )


PRESETS: Dict[str, Callable[[], SweepSpec]] = {
    "appendix-e-full": rate_full,
    "appendix-e-desk": rate_desk,
    "misspec-desk": misspec_desk,
    "lowrank-desk": lowrank_desk,
    "lowrank-full": lowrank_full,
}


def get_preset(name: str) -> SweepSpec:
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}'. Available: {', '.join(sorted(PRESETS))}")
    return PRESETS[name]()
