from datetime import datetime
from enum import Enum
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from deautoconv.grid import GridFn


# -----------------------
# Selector Models
# -----------------------
class DataCase(str, Enum):
    """Full data lives on [0,2]^n, limited data on [0,1]^n."""

    FULL = "full"
    LIMITED = "limited"


class PhantomId(str, Enum):
    X1 = "x1"
    X2 = "x2"
    X3 = "x3"
    PRODUCT2D = "product2d"
    PRODUCT3D = "product3d"
    CONSTANT = "constant"


# -----------------------
# Solver Models
# -----------------------
class StepRule(BaseModel):
    """Barzilai-Borwein step seeding with monotone Armijo backtracking."""

    model_config = ConfigDict(frozen=True)

    variant: Literal["bb1", "bb2", "alternate"] = Field(default="alternate", description="bb1/bb2/alternate")
    armijo: float = Field(default=1e-4, gt=0, lt=1)
    shrink: float = Field(default=0.5, gt=0, lt=1, description="Backtracking factor")
    max_backtracks: int = Field(default=40, ge=1)
    step_min: float = Field(default=1e-12, gt=0)
    step_max: float = Field(default=1e12, gt=0)
    stagnation_window: int = Field(default=10, ge=1)
    stagnation_tol: float = Field(default=1e-12, ge=0)


class TikhonovConfig(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    alpha: float = Field(..., gt=0)
    xbar: GridFn = Field(..., description="Reference element, also the default initial guess")
    case: DataCase = DataCase.FULL
    nonneg: bool = Field(default=False, description="Restrict iterates to nonnegative functions")
    max_iters: int = Field(default=5000, ge=1)
    grad_tol: float = Field(default=1e-8, gt=0)
    step_rule: StepRule = Field(default_factory=StepRule)

    @model_validator(mode="before")
    @classmethod
    def _nonneg_default(cls, data: Any) -> Any:
        # the limited data case defaults to the nonnegative domain
        if isinstance(data, dict) and data.get("nonneg") is None:
            data = dict(data)
            data["nonneg"] = DataCase(data.get("case", DataCase.FULL)) is DataCase.LIMITED
        return data

    @model_validator(mode="after")
    def _xbar_on_unit_cube(self) -> "TikhonovConfig":
        if not self.xbar.spec.is_unit_cube():
            raise ValueError("xbar must live on the unit cube")
        return self


class SolveResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x: GridFn
    objective_value: float
    iterations: int
    converged: bool
    grad_norm: float
    stop_reason: Literal["gradient", "stagnation", "max_iters", "line_search"]
    history: List[float] = Field(default_factory=list, description="Objective of every accepted iterate")


class AlphaTrial(BaseModel):
    alpha: float
    error: Optional[float] = None
    iterations: Optional[int] = None
    converged: bool = False
    stop_reason: Optional[str] = None
    phase: Literal["grid", "refine"] = "grid"
    failure: Optional[str] = None


class AlphaSelection(BaseModel):
    """Oracle choice of the regularization parameter."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    alpha: float
    error: float
    x: GridFn
    iterations: int
    trials: List[AlphaTrial]


# -----------------------
# Experiment Models
# -----------------------
class NoiseSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    delta_rel: float = Field(..., ge=0, description="Relative noise level ||y_delta - y|| / ||y||")
    seed: int = Field(..., ge=0, lt=2**64)


class RunRecord(BaseModel):
    level: float
    level_index: int
    run: int
    seed: int
    rel_error: Optional[float] = None
    alpha: Optional[float] = None
    iterations: Optional[int] = None
    failure: Optional[str] = None


class LevelAggregate(BaseModel):
    level: float
    mean_error: Optional[float] = None
    std_error: Optional[float] = None
    successes: int
    failures: int


class ExperimentReport(BaseModel):
    n: int
    m: int
    case: DataCase
    levels: List[float]
    runs: int
    seed0: int
    records: List[RunRecord]
    aggregates: List[LevelAggregate]
    kappa: Optional[float] = None
    kappa_note: Optional[str] = None
    failures: int = 0
    wall_time: Optional[float] = None
    timestamp: Optional[datetime] = None


class IllposedPoint(BaseModel):
    k: int
    distance: float
    residual: float
    bound: Optional[float] = None


class IllposedSeries(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    variant: DataCase
    n: int
    m: int
    r: float
    points: List[IllposedPoint]
    warnings: List[str] = Field(default_factory=list)
    fields: Dict[int, Tuple[GridFn, GridFn]] = Field(
        default_factory=dict, exclude=True, description="k -> (x_k - x_dagger, y_k - y)"
    )


class CheckOutcome(BaseModel):
    name: str
    passed: bool
    value: float
    threshold: float
    seed: int
    params: Dict[str, Any] = Field(default_factory=dict)
