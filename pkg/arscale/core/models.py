# arscale/core/models.py
# Domain types shared by the simulator, operators, estimators and the harness.
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple
import math

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from arscale.core.config import settings
from arscale.core.errors import ModelValidationError


def _frozen_array(value: Any) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    arr.setflags(write=False)
    return arr


class NoiseFamily(str, Enum):
    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    UNIFORM = "uniform"


class RangeMode(str, Enum):
    FULL = "full"          # t = 1..T with zero-padded lags
    FROM_P = "from_p"      # t = p'..T


class EstimatorKind(str, Enum):
    OLS = "ols"
    CONSTRAINED_PGD = "constrained_pgd"
    IHT_LOW_RANK = "iht_low_rank"
    GROUP_NUCLEAR_PROX = "group_nuclear_prox"


class InitMode(str, Enum):
    ZEROS = "zeros"
    ORTHOGONAL = "orthogonal"


class Stability(str, Enum):
    STRICTLY_STABLE = "strictly_stable"
    MARGINALLY_STABLE = "marginally_stable"
    EXPLOSIVE = "explosive"


class RecordStatus(str, Enum):
    OK = "ok"
    NOT_CONVERGED = "not_converged"
    FAILED = "failed"
    AVERAGED = "averaged"


# Sub-Gaussian constant c with ||xi_i||_psi2 <= c * sigma, per family.
SUBGAUSS_CONSTANTS: Dict[NoiseFamily, float] = {
    NoiseFamily.GAUSSIAN: math.sqrt(8.0 / 3.0),
    NoiseFamily.RADEMACHER: 1.0 / math.sqrt(math.log(2.0)),
    NoiseFamily.UNIFORM: math.sqrt(3.0) / math.sqrt(math.log(2.0)),
}


# ==================== SYSTEMS ====================

class ARModel(BaseModel):
    """Order-p autoregressive system x_t = sum_k A_k x_{t-k} + xi_t.

    Construction does not check invariants; use ``ARModel.create`` or call
    ``validate_model`` explicitly.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    p: int
    d: int
    blocks: Tuple[np.ndarray, ...]
    sigma: float = 1.0

    @field_validator("blocks", mode="before")
    @classmethod
    def _coerce_blocks(cls, value: Any) -> Tuple[np.ndarray, ...]:
        return tuple(_frozen_array(b) for b in value)

    @classmethod
    def create(cls, blocks: Any, sigma: float = 1.0) -> "ARModel":
        blocks = [np.asarray(b, dtype=np.float64) for b in blocks]
        if not blocks:
            raise ModelValidationError(ModelValidationError.DIMENSION_MISMATCH, "at least one block is required")
        d = blocks[0].shape[0] if blocks[0].ndim >= 1 else 0
        model = cls(p=len(blocks), d=d, blocks=blocks, sigma=sigma)
        validate_model(model)
        return model

    @classmethod
    def zeros(cls, p: int, d: int, sigma: float = 1.0) -> "ARModel":
        return cls.create(np.zeros((p, d, d)), sigma=sigma)

    @property
    def stacked(self) -> np.ndarray:
        """Blocks as a (p, d, d) array."""
        return np.stack(self.blocks)

    @property
    def concatenated(self) -> np.ndarray:
        """The d x pd matrix [A_1 ... A_p]."""
        return concat_blocks(self.stacked)


def validate_model(m: ARModel) -> None:
    """Raise ModelValidationError unless every ARModel invariant holds."""
    if m.p < 1 or m.d < 1 or len(m.blocks) != m.p:
        raise ModelValidationError(
            ModelValidationError.DIMENSION_MISMATCH,
            f"expected {m.p} blocks of size {m.d}x{m.d}, got {len(m.blocks)}",
        )
    for k, block in enumerate(m.blocks, start=1):
        if block.shape != (m.d, m.d):
            raise ModelValidationError(
                ModelValidationError.DIMENSION_MISMATCH,
                f"block A_{k} has shape {block.shape}, expected ({m.d}, {m.d})",
            )
    for k, block in enumerate(m.blocks, start=1):
        if not np.all(np.isfinite(block)):
            raise ModelValidationError(ModelValidationError.NON_FINITE_ENTRY, f"block A_{k} has non-finite entries")
    if not math.isfinite(m.sigma):
        raise ModelValidationError(ModelValidationError.NON_FINITE_ENTRY, f"sigma={m.sigma}")
    if m.sigma < 0:
        raise ModelValidationError(ModelValidationError.NEGATIVE_SIGMA, f"sigma={m.sigma} must be >= 0")


def truncate_truth(m: ARModel, p_prime: int) -> ARModel:
    """Keep A_1..A_{p'} and zero the remaining p - p' blocks."""
    if not 1 <= p_prime <= m.p:
        raise ValueError(f"p_prime={p_prime} out of range [1, {m.p}]")
    blocks = m.stacked.copy()
    blocks[p_prime:] = 0.0
    return ARModel.create(blocks, sigma=m.sigma)


def align_truth(m: ARModel, p_student: int) -> np.ndarray:
    """First p' blocks of the truth, zero-padded when p' > p; shape (p', d, d)."""
    out = np.zeros((p_student, m.d, m.d))
    keep = min(p_student, m.p)
    out[:keep] = m.stacked[:keep]
    return out


def concat_blocks(blocks: np.ndarray) -> np.ndarray:
    blocks = np.asarray(blocks, dtype=np.float64)
    p, d, _ = blocks.shape
    return blocks.transpose(1, 0, 2).reshape(d, p * d)


def split_blocks(concat: np.ndarray, p: int) -> np.ndarray:
    d = concat.shape[0]
    return concat.reshape(d, p, d).transpose(1, 0, 2).copy()


# ==================== NOISE & DATA ====================

class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    family: NoiseFamily = NoiseFamily.GAUSSIAN
    sigma: float = Field(default=1.0, ge=0.0)
    subgauss_c: float = Field(default=1.0, ge=1.0)

    @model_validator(mode="before")
    @classmethod
    def _derive_constant(cls, data: Any) -> Any:
        # subgauss_c is reporting metadata derived from the family
        if isinstance(data, dict) and data.get("subgauss_c") is None:
            family = NoiseFamily(data.get("family", NoiseFamily.GAUSSIAN))
            data = {**data, "subgauss_c": SUBGAUSS_CONSTANTS[family]}
        return data


class NoiseTensor(BaseModel):
    """Td x N matrix; column n stacks xi_1..xi_T of trajectory n."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    T: int = Field(ge=1)
    d: int = Field(ge=1)
    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def _coerce(cls, value: Any) -> np.ndarray:
        arr = _frozen_array(value)
        if arr.ndim != 2 or not np.all(np.isfinite(arr)):
            raise ValueError("noise values must be a finite 2-D array")
        return arr

    @model_validator(mode="after")
    def _check_shape(self) -> "NoiseTensor":
        if self.values.shape[0] != self.T * self.d:
            raise ValueError(f"noise has {self.values.shape[0]} rows, expected T*d={self.T * self.d}")
        return self

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def as_trajectories(self) -> np.ndarray:
        """Noise as an (N, T, d) array."""
        return self.values.T.reshape(self.N, self.T, self.d)


class Dataset(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    data: np.ndarray
    seed: Optional[int] = None
    noise: Optional[NoiseSpec] = None

    @field_validator("data", mode="before")
    @classmethod
    def _coerce(cls, value: Any) -> np.ndarray:
        arr = _frozen_array(value)
        if arr.ndim != 3 or 0 in arr.shape:
            raise ValueError(f"data must be a non-empty N x T x d array, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("data has non-finite entries")
        return arr

    @property
    def N(self) -> int:
        return self.data.shape[0]

    @property
    def T(self) -> int:
        return self.data.shape[1]

    @property
    def d(self) -> int:
        return self.data.shape[2]

    def stacked(self) -> np.ndarray:
        """States as the Td x N matrix matching NoiseTensor.values."""
        return self.data.reshape(self.N, self.T * self.d).T.copy()


class DatasetMetadata(BaseModel):
    N: int
    T: int
    d: int
    seed: Optional[int] = None
    noise_family: Optional[NoiseFamily] = None
    sigma: Optional[float] = None


# ==================== ESTIMATION ====================

class EstimatorConfig(BaseModel):
    model_config = ConfigDict(populate_by_name=True, frozen=True)

    kind: EstimatorKind = EstimatorKind.OLS
    p_student: int = Field(default=1, ge=1)
    D: float = Field(default_factory=lambda: settings.DEFAULT_D, ge=1.0)
    r: Optional[int] = Field(default=None, ge=1)
    lam: float = Field(default=0.0, ge=0.0, alias="lambda")
    step_size: Optional[float] = Field(default=None, gt=0.0)
    max_iters: int = Field(default_factory=lambda: settings.FIT_MAX_ITERS, ge=1)
    tol: float = Field(default_factory=lambda: settings.FIT_TOL, gt=0.0)
    loss_range: RangeMode = RangeMode.FULL
    init: InitMode = InitMode.ZEROS
    init_seed: int = 0
    alpha_init: float = Field(default_factory=lambda: settings.STUDENT_ALPHA, gt=0.0)
    project_ball: bool = False


class EstimateReport(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    kind: EstimatorKind
    blocks: np.ndarray
    p_student: int
    final_loss: float = Field(ge=0.0)
    objective: float
    iters: int
    converged: bool
    step_size: Optional[float] = None
    certificate_vs_truth: Optional[bool] = None
    surplus_eps: Optional[float] = None
    history: List[float] = Field(default_factory=list)

    def summary(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", exclude={"blocks", "history"})


class CertificateReport(BaseModel):
    truth_certificate: bool
    gap_vs_truth: float
    surplus_certificate: Optional[bool] = None
    gap_vs_reference: Optional[float] = None


# ==================== OPERATORS ====================

class LBlocks(BaseModel):
    """First block-column L^(1,1)..L^(T,1) of the lower-block-Toeplitz L*."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    T: int = Field(ge=1)
    blocks: np.ndarray

    @field_validator("blocks", mode="before")
    @classmethod
    def _coerce(cls, value: Any) -> np.ndarray:
        return _frozen_array(value)

    @property
    def d(self) -> int:
        return self.blocks.shape[1]


class NormEstimate(BaseModel):
    value: float
    converged: bool
    iterations: int


class StabilityReport(BaseModel):
    stability: Stability
    rho: float
    exp_residual: float
    poly_degree: float
    poly_residual: float
    n_points: int


class NormConditionReport(BaseModel):
    D: float
    sum_block_norms: float
    sqrt_p_concat_norm: float
    concat_norm: float
    op_norm_M: float
    sum_within_D: bool
    concat_within_D: bool
    M_within_D: bool
    sandwich_holds: bool
    sum_bound_holds: bool
    converged: bool


DIAGNOSTIC_FIELDS = ("op_norm_M", "kappa", "zeta", "spectral_radius", "stability", "eta", "d_prime")


class Diagnostics(BaseModel):
    op_norm_M: float
    kappa: float
    zeta: float
    spectral_radius: Optional[float] = None
    stability: Stability
    eta: Optional[float] = None
    d_prime: Optional[float] = None
    converged: bool = True

    def public_dict(self) -> Dict[str, Any]:
        return self.model_dump(mode="json", include=set(DIAGNOSTIC_FIELDS))


# ==================== HARNESS ====================

class GroundTruthSpec(BaseModel):
    p: int = Field(ge=1)
    d: int = Field(ge=1)
    alpha: float = Field(default=0.5, gt=0.0)
    rank: Optional[int] = None
    seed: int = 0
    sigma: float = Field(default=1.0, ge=0.0)

    @model_validator(mode="after")
    def _check_rank(self) -> "GroundTruthSpec":
        if self.rank is not None and not 1 <= self.rank < self.d:
            raise ValueError(f"rank={self.rank} must lie in [1, d={self.d})")
        return self


class SweepSpec(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    d: List[int]
    p: List[int]
    p_student: Optional[List[int]] = None
    N: List[int]
    T_multipliers: List[float]
    r: Optional[List[int]] = None
    estimators: List[EstimatorConfig] = Field(default_factory=lambda: [EstimatorConfig()])
    lambda_grid: List[float] = Field(default_factory=list)
    step_grid: List[float] = Field(default_factory=list)
    seeds: List[int] = Field(default_factory=lambda: [0, 1, 2])
    range_mode: RangeMode = RangeMode.FULL
    alpha: float = Field(default=0.5, gt=0.0)
    sigma: float = Field(default=1.0, ge=0.0)
    noise_family: NoiseFamily = NoiseFamily.GAUSSIAN

    @model_validator(mode="after")
    def _check_grids(self) -> "SweepSpec":
        grids = {
            "d": self.d, "p": self.p, "p_student": self.p_student or [1], "N": self.N,
            "T_multipliers": self.T_multipliers, "r": self.r or [1],
            "lambda_grid": self.lambda_grid or [1], "step_grid": self.step_grid or [1],
        }
        for name, grid in grids.items():
            if not grid or any(v <= 0 for v in grid):
                raise ValueError(f"grid '{name}' must be non-empty with positive entries")
        if not self.seeds:
            raise ValueError("seeds must be non-empty")
        if not self.estimators:
            raise ValueError("at least one estimator is required")
        return self


class CellConfig(BaseModel):
    d: int
    p: int
    p_student: int
    r: int
    N: int
    T: int
    seed: int
    estimator: EstimatorConfig
    alpha: float = 0.5
    sigma: float = 1.0
    noise_family: NoiseFamily = NoiseFamily.GAUSSIAN

    @property
    def low_rank_truth(self) -> bool:
        return self.r < self.d

    def sort_key(self) -> Tuple:
        est = self.estimator
        return (self.d, self.p, self.p_student, self.r, self.N, self.T, self.seed,
                est.kind.value, est.lam, est.step_size or 0.0)


CSV_COLUMNS = (
    "d", "p", "p_student", "r", "N", "T", "seed", "estimator", "lambda", "step_size",
    "error_frob_sq", "train_loss", "beta", "gamma", "beta_tilde", "kappa", "eta",
    "runtime_ms", "status",
)


class ResultRecord(BaseModel):
    model_config = ConfigDict(populate_by_name=True)

    d: int
    p: int
    p_student: int
    r: int
    N: int
    T: int
    seed: Optional[int] = None
    estimator: EstimatorKind
    lam: Optional[float] = Field(default=None, alias="lambda")
    step_size: Optional[float] = None
    error_frob_sq: float = math.nan
    train_loss: float = math.nan
    beta: float
    gamma: float
    beta_tilde: float
    kappa: float = math.nan
    eta: float = math.nan
    runtime_ms: float = 0.0
    status: RecordStatus = RecordStatus.OK

    def cell_key(self) -> Tuple:
        """Configuration without the seed; identifies the seed-averaging group."""
        return (self.d, self.p, self.p_student, self.r, self.N, self.T,
                self.estimator.value, self.lam if self.lam is not None else -1.0,
                self.step_size if self.step_size is not None else -1.0)

    def tuning_key(self) -> Tuple:
        """Configuration without seed and hyperparameters."""
        return (self.d, self.p, self.p_student, self.r, self.N, self.T, self.estimator.value)

    def sort_key(self) -> Tuple:
        return self.cell_key()[:6] + (self.seed if self.seed is not None else -1,) + self.cell_key()[6:]

    def row(self) -> Dict[str, Any]:
        data = self.model_dump(mode="json", by_alias=True)
        return {column: data[column] for column in CSV_COLUMNS}


class ResultTable(BaseModel):
    raw: List[ResultRecord] = Field(default_factory=list)
    averaged: List[ResultRecord] = Field(default_factory=list)

    def records(self) -> List[ResultRecord]:
        return list(self.raw) + list(self.averaged)

    def __len__(self) -> int:
        return len(self.raw) + len(self.averaged)


# ==================== SCALING CHECKS ====================

class SlopeFit(BaseModel):
    slope: float
    intercept: float
    r_squared: float
    n_points: int
    x: str


class RateBand(BaseModel):
    """Spread of error * beta / gamma across cells."""

    low: float
    high: float
    ratio: float
    n_points: int


class CollapseReport(BaseModel):
    max_ratio: float
    pairs: Dict[str, float] = Field(default_factory=dict)


class LowRankComparison(BaseModel):
    d: int
    p: int
    p_student: int
    r: int
    N: int
    T: int
    tuned_error: float
    ols_error: float
    lam: Optional[float] = None
    step_size: Optional[float] = None

    @property
    def benefit(self) -> bool:
        return self.tuned_error < self.ols_error


# ==================== PROPERTY SUITE ====================

class CheckResult(BaseModel):
    name: str
    passed: bool
    instances: int
    worst: float
    tolerance: float
    runtime_ms: float = 0.0
    detail: str = ""


class SuiteReport(BaseModel):
    mode: str
    results: List[CheckResult] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)
