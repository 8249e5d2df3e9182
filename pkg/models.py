"""
Pydantic-модели данных проекта.

Используются оптимизатором, оценками, модулем устойчивости и CLI
для единообразной валидации и сериализации параметров и результатов.
Численные контейнеры (векторы, датасеты, состояния усреднения) живут
в своих модулях как обычные классы поверх numpy.
"""

from __future__ import annotations

import math
from enum import Enum
from typing import Annotated, Any, Optional

import numpy as np
from pydantic import BaseModel, BeforeValidator, ConfigDict, Field, model_validator


def _listify(value: Any) -> Any:
    if value is None:
        return value
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def _radius(value: Any) -> Any:
    """'unbounded' / 'inf' / пусто — неограниченная область."""
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("", "none", "unbounded", "inf"):
        return None
    if isinstance(value, (int, float)) and math.isinf(value):
        return None
    return value


def _auto(value: Any) -> Any:
    if isinstance(value, str) and value.strip().lower() == "auto":
        return None
    return value


FloatList = Annotated[list[float], BeforeValidator(_listify)]
IntList = Annotated[list[int], BeforeValidator(_listify)]
Radius = Annotated[Optional[float], BeforeValidator(_radius)]
AutoFloat = Annotated[Optional[float], BeforeValidator(_auto)]


# ─── Перечисления ──────────────────────────────────────────────────────────────

class LossKind(str, Enum):
    HINGE = "hinge"
    HINGE_L2 = "hinge+l2"
    LOGISTIC = "logistic"
    LEAST_SQUARES = "least-squares"
    LEAST_SQUARES_L2 = "least-squares+l2"
    PL_SINE = "pl-sine"
    PROXIMAL = "proximal"


class Scheme(str, Enum):
    LAST = "last"
    UNIFORM = "uniform"
    PIWA = "piwa"
    SUFFIX = "suffix"
    POLY_DECAY = "poly-decay"
    EMA = "ema"


class ScheduleKind(str, Enum):
    CONVEX_SQRT = "convex-sqrt"
    STRONGLY_CONVEX = "strongly-convex"
    CONSTANT = "constant"


class TestMetric(str, Enum):
    AUTO = "auto"
    ERROR_RATE = "error-rate"
    OBJECTIVE = "objective"
    NONE = "none"


class SyntheticKind(str, Enum):
    CLASSIFICATION = "classification-margin"
    RANK_DEFICIENT_LS = "rank-deficient-ls"
    REGRESSION = "regression"
    PL_SINE_NOISE = "pl-sine-noise"


class BoundKind(str, Enum):
    AUTO = "auto"
    CONVEX = "convex"
    STRONGLY = "strongly"
    NONE = "none"


class GhatMode(str, Enum):
    DECLARED = "declared"      # Ĝ² = 2G² + 2γ⁻²D_k² с G, объявленной для всей области
    STAGE_BALL = "stage-ball"  # G пересчитывается на шаре стадии B(x_{k−1}, D_k)


class RadiusRule(str, Enum):
    HALVING = "halving"  # D_{k+1} = D_k / 2
    ERROR_SCALED = "error-scaled"  # D_k = √(ε_{k−1}/μ)


# ─── Функции потерь ────────────────────────────────────────────────────────────

class LossConstants(BaseModel):
    """Константы регулярности; None означает «неизвестно»."""

    model_config = ConfigDict(frozen=True)

    G: Optional[float] = Field(None, description="Граница нормы (суб)градиента на области")
    L: Optional[float] = Field(None, description="Константа гладкости")
    strong_convexity: Optional[float] = Field(None, description="Модуль сильной выпуклости")
    rho: Optional[float] = Field(None, description="Модуль слабой выпуклости")
    mu: Optional[float] = Field(None, description="Модуль условия PL")
    bounded_unit: bool = Field(False, description="Потери на образце лежат в [0, 1]")
    normalization: float = Field(1.0, description="Делитель нормировки (для ограниченного логистического варианта)")


# ─── Оптимизатор ───────────────────────────────────────────────────────────────

class StepSchedule(BaseModel):
    model_config = ConfigDict(frozen=True, populate_by_name=True)

    kind: ScheduleKind
    eta1: Optional[float] = Field(None, gt=0)
    lam: Optional[float] = Field(None, gt=0, alias="lambda")
    alpha: float = Field(0.0, ge=0)
    eta_const: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _required(self) -> "StepSchedule":
        if self.kind is ScheduleKind.CONVEX_SQRT and self.eta1 is None:
            raise ValueError("convex-sqrt schedule needs eta1")
        if self.kind is ScheduleKind.STRONGLY_CONVEX and self.lam is None:
            raise ValueError("strongly-convex schedule needs lambda")
        if self.kind is ScheduleKind.CONSTANT and self.eta_const is None:
            raise ValueError("constant schedule needs eta_const")
        return self


class SchemeSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    scheme: Scheme = Scheme.PIWA
    alpha: float = Field(0.0, ge=0)
    fraction: float = Field(0.5, gt=0, le=1)
    eta_pd: float = Field(0.0, ge=0)
    beta: float = Field(0.9, gt=0, lt=1)

    @property
    def label(self) -> str:
        if self.scheme is Scheme.PIWA:
            return f"piwa(alpha={self.alpha:g})"
        if self.scheme is Scheme.EMA:
            return f"ema(beta={self.beta:g})"
        if self.scheme is Scheme.SUFFIX:
            return f"suffix(fraction={self.fraction:g})"
        if self.scheme is Scheme.POLY_DECAY:
            return f"poly-decay(eta={self.eta_pd:g})"
        return self.scheme.value


class RunSettings(BaseModel):
    """Полное описание одного прогона SGD-PIWA (кроме данных и зерна)."""

    model_config = ConfigDict(frozen=True)

    schedule: StepSchedule
    T: int = Field(..., ge=1)
    scheme: SchemeSettings = SchemeSettings()
    radius: Radius = None
    checkpoints: Optional[list[int]] = None
    check_gradient_bound: bool = True
    batch_size: int = Field(1, ge=1, description="> 1 только для невыпуклой pl-sine")


class Checkpoint(BaseModel):
    t: int
    obj_avg: float
    obj_last: float
    test_metric: Optional[float] = None
    wall_ms: float = 0.0


class RunTrace(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    checkpoints: list[Checkpoint] = Field(default_factory=list)
    final_average: np.ndarray
    final_last: np.ndarray
    config_fingerprint: str = ""
    scheme: str = ""
    alpha: float = 0.0
    seed: int = 0
    metadata: dict[str, Any] = Field(default_factory=dict)


class StageParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    k: int = Field(..., ge=1)
    eps_k: float = Field(..., gt=0)
    eta_k: float = Field(..., gt=0)
    T_k: int = Field(..., ge=1)
    D_k: float = Field(..., gt=0)
    gamma: float = Field(..., gt=0)
    Ghat_sq: float = Field(..., gt=0)
    c: float = Field(..., gt=0)
    d: float = Field(..., gt=0)
    eta_capped: bool = False


class StagewiseSettings(BaseModel):
    model_config = ConfigDict(frozen=True)

    K: int = Field(6, ge=1)
    eps0: AutoFloat = Field(None, description="None — F_S(x₁) − F*, если F* известно")
    mu: AutoFloat = None
    c: AutoFloat = None
    d: AutoFloat = None
    Ghat_sq: AutoFloat = None
    alpha: float = Field(1.0, ge=0)
    delta: float = Field(0.1, gt=0, lt=1)
    ghat_mode: GhatMode = GhatMode.STAGE_BALL
    radius_rule: RadiusRule = RadiusRule.HALVING
    batch_size: int = Field(1, ge=1)
    scheme: Optional[SchemeSettings] = None


class StagewiseResult(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    x_final: np.ndarray
    iterates: list[np.ndarray]
    stages: list[StageParams]
    traces: list[RunTrace]
    objectives: list[float]
    metadata: dict[str, Any] = Field(default_factory=dict)

    @property
    def radii(self) -> list[float]:
        return [stage.D_k for stage in self.stages]


# ─── Теоретические оценки ──────────────────────────────────────────────────────

class BoundInputs(BaseModel):
    """Символы теорем; None — «неизвестно», оценка откажет, если символ ей нужен."""

    model_config = ConfigDict(frozen=True, populate_by_name=True)

    alpha: Optional[float] = Field(None, ge=0)
    G: Optional[float] = Field(None, gt=0)
    L: Optional[float] = Field(None, gt=0)
    D: Optional[float] = Field(None, gt=0)
    eta1: Optional[float] = Field(None, gt=0)
    lam: Optional[float] = Field(None, gt=0, alias="lambda")
    mu: Optional[float] = Field(None, gt=0)
    n: Optional[int] = Field(None, ge=1)
    T: Optional[float] = Field(None, ge=1)
    t0: Optional[float] = Field(None, ge=0)
    c: Optional[float] = Field(None, gt=0)
    delta: Optional[float] = Field(None, gt=0, lt=1)
    K: Optional[int] = Field(None, ge=1)
    S_prev: Optional[float] = Field(None, ge=0, description="S_{K−1} = Σ_{k<K} T_k")
    eta: Optional[float] = Field(None, gt=0, description="постоянный шаг стадии")
    Ghat_sq: Optional[float] = Field(None, gt=0)
    eps_prev: Optional[float] = Field(None, gt=0, description="ε_{k−1}")
    loss_bounded_unit: bool = False


# ─── Устойчивость ──────────────────────────────────────────────────────────────

class StabilityTrial(BaseModel):
    alpha: float
    trial: int
    seed: int
    differing_index: int
    param_dev_avg: float = Field(..., ge=0)
    param_dev_last: float = Field(..., ge=0)
    loss_dev_max: float = Field(..., ge=0)
    differing_draws: int = 0
    first_draw_t: Optional[int] = None
    deviation_bound: Optional[float] = None


class StabilityAggregate(BaseModel):
    alpha: float
    trials: int
    mean_param_dev_avg: float
    se_param_dev_avg: float
    max_param_dev_avg: float
    mean_param_dev_last: float
    max_param_dev_last: float
    mean_loss_dev: float
    max_loss_dev: float
    bound: Optional[float] = None
    bound_kind: BoundKind = BoundKind.NONE
    deviation_share: Optional[float] = Field(None, description="доля испытаний, где ‖x_T − x'_T‖ ≤ (2G/n)Σ η_t")
    bound_verified: bool = Field(False, description="предпосылки оценки (гладкость, η₁ ≤ 2/L) проверены по объявленным константам")


class StabilityReport(BaseModel):
    trials: list[StabilityTrial] = Field(default_factory=list)
    aggregates: list[StabilityAggregate] = Field(default_factory=list)
    notes: list[str] = Field(default_factory=list)

    def aggregate(self, alpha: float) -> StabilityAggregate:
        for agg in self.aggregates:
            if agg.alpha == alpha:
                return agg
        raise KeyError(alpha)


# ─── Оценка скорости сходимости ────────────────────────────────────────────────

class RateFit(BaseModel):
    points: list[tuple[float, float]] = Field(..., description="(ln T, ln gap)")
    slope: float
    intercept: float
    r2: float
    skipped: int = Field(0, description="точек с неположительным зазором отброшено")


# ─── Данные ────────────────────────────────────────────────────────────────────

class SyntheticSpec(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: SyntheticKind = SyntheticKind.CLASSIFICATION
    n: int = Field(1000, ge=1)
    d: int = Field(50, ge=1)
    rank: Optional[int] = Field(None, ge=1)
    margin: float = Field(0.1, gt=0, le=1)
    flip_rate: float = Field(0.0, ge=0, le=1)
    noise: float = Field(0.0, ge=0)
    row_norm: Optional[float] = Field(1.0, gt=0)
    seed: int = 0


# ═══════════════════════════════════════════════════════════════════════════════
# КОНФИГУРАЦИЯ ЭКСПЕРИМЕНТА (файл key = value)
# ═══════════════════════════════════════════════════════════════════════════════

class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class ProblemSection(_Section):
    loss: LossKind = LossKind.HINGE
    lam: float = Field(0.0, ge=0, alias="lambda")
    dataset: str = Field("synthetic", description="'synthetic' или путь к файлу LIBSVM")
    test_dataset: Optional[str] = None
    test_fraction: float = Field(0.2, gt=0, lt=1)
    split_seed: int = Field(0, ge=0, description="зерно разбиения train/test и выделения пула/пробного набора")
    zero_one_labels: bool = False
    dim: Optional[int] = Field(None, ge=1)
    scale: bool = False
    bounded: bool = Field(False, description="нормировать логистические потери в [0, 1]")
    synthetic: SyntheticSpec = SyntheticSpec()


class StagewiseSection(_Section):
    K: int = Field(6, ge=1)
    eps0: AutoFloat = None
    mu: AutoFloat = None
    c: AutoFloat = None
    d: AutoFloat = None
    Ghat_sq: AutoFloat = None
    alpha: float = Field(1.0, ge=0)
    delta: float = Field(0.1, gt=0, lt=1)
    ghat_mode: GhatMode = GhatMode.STAGE_BALL
    radius_rule: RadiusRule = RadiusRule.HALVING
    batch_size: int = Field(1, ge=1)


class AlgorithmSection(_Section):
    schedule: ScheduleKind = ScheduleKind.CONVEX_SQRT
    eta1: FloatList = Field(default_factory=lambda: [1.0])
    eta_const: Optional[float] = Field(None, gt=0)
    T: int = Field(1000, ge=1)
    radius: Radius = None
    schemes: Annotated[list[Scheme], BeforeValidator(_listify)] = Field(default_factory=lambda: [Scheme.PIWA])
    alphas: FloatList = Field(default_factory=lambda: [1.0])
    beta: float = Field(0.9, gt=0, lt=1)
    fraction: float = Field(0.5, gt=0, le=1)
    eta_pd: float = Field(0.0, ge=0)
    check_gradient_bound: bool = True
    batch_size: int = Field(1, ge=1)
    stagewise: StagewiseSection = StagewiseSection()


class EvaluationSection(_Section):
    checkpoints: str | list[int] = Field("log2", description="'log2', 'log10:<на декаду>' или список t")
    metric: TestMetric = TestMetric.AUTO
    wall_clock: bool = False
    gap_slack: float = Field(1e-6, ge=0)
    fit_min_fraction: float = Field(0.01, gt=0, le=1)


class StabilitySection(_Section):
    trials: int = Field(50, ge=1)
    probe_size: int = Field(1000, ge=1)
    pool_size: int = Field(1000, ge=1)
    alphas: FloatList = Field(default_factory=lambda: [0.0, 1.0, 5.0])
    bound: BoundKind = BoundKind.AUTO
    replacement: str = Field("pool", pattern="^(pool|identity)$")


class OutputSection(_Section):
    path: Optional[str] = Field(None, description="None — каталог RESULTS_DIR")


class SweepSection(_Section):
    max_workers: Optional[int] = Field(None, ge=1)


class ExperimentConfig(_Section):
    problem: ProblemSection = ProblemSection()
    algorithm: AlgorithmSection = AlgorithmSection()
    evaluation: EvaluationSection = EvaluationSection()
    stability: StabilitySection = StabilitySection()
    seeds: IntList = Field(default_factory=lambda: [0])
    output: OutputSection = OutputSection()
    sweep: SweepSection = SweepSection()
