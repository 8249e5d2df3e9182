"""
SGD-PIWA: проективный SGD с полиномиально возрастающим взвешенным
усреднением, три расписания шага и стадийный проксимальный алгоритм
для слабо выпуклых задач с условием PL.
"""

from __future__ import annotations

import math
import time
from typing import Callable, Iterable, Optional

import numpy as np
import scipy.optimize

from averaging import AveragingState
from config import GRADIENT_BOUND_RTOL, REGULARIZER_CONVENTION
from core import BallDomain, SampleStream, as_vector, project_ball
from data import Dataset
from errors import (
    ConfigError,
    DivergenceError,
    GradientBoundViolation,
    NumericError,
)
from logger import get_logger
from losses import LossModel, ProximalLoss
from models import (
    Checkpoint,
    GhatMode,
    LossKind,
    RadiusRule,
    RunSettings,
    RunTrace,
    ScheduleKind,
    Scheme,
    SchemeSettings,
    StageParams,
    StagewiseResult,
    StagewiseSettings,
    StepSchedule,
    TestMetric,
)

log = get_logger(__name__)

IterateCallback = Callable[[int, np.ndarray], None]


# ═══════════════════════════════════════════════════════════════════════════════
# РАСПИСАНИЯ ШАГА
# ═══════════════════════════════════════════════════════════════════════════════

def step_size(schedule: StepSchedule, t: int) -> float:
    """η_t: η₁/√t, 2(α+1)/(λt) или константа."""
    if t < 1:
        raise ConfigError(f"step index must be >= 1, got {t}")
    if schedule.kind is ScheduleKind.CONVEX_SQRT:
        return schedule.eta1 / math.sqrt(t)
    if schedule.kind is ScheduleKind.STRONGLY_CONVEX:
        return 2.0 * (schedule.alpha + 1.0) / (schedule.lam * t)
    return schedule.eta_const


def step_sizes(schedule: StepSchedule, T: int) -> np.ndarray:
    """η_1..η_T одним вектором."""
    t = np.arange(1, T + 1, dtype=np.float64)
    if schedule.kind is ScheduleKind.CONVEX_SQRT:
        return schedule.eta1 / np.sqrt(t)
    if schedule.kind is ScheduleKind.STRONGLY_CONVEX:
        return 2.0 * (schedule.alpha + 1.0) / (schedule.lam * t)
    return np.full(T, schedule.eta_const)


# ─── Контрольные точки ─────────────────────────────────────────────────────────

def default_checkpoints(T: int) -> list[int]:
    """Степени двойки до T плюс само T."""
    points = {1 << k for k in range(T.bit_length()) if (1 << k) <= T}
    points.add(T)
    return sorted(points)


def log_checkpoints(T: int, per_decade: int = 10) -> list[int]:
    """Логарифмическая сетка: per_decade точек на декаду, плюс T."""
    count = int(math.floor(per_decade * math.log10(T))) + 1 if T > 1 else 1
    points = {int(round(10 ** (k / per_decade))) for k in range(count)}
    points = {p for p in points if 1 <= p <= T}
    points.add(T)
    return sorted(points)


def resolve_checkpoints(rule: str | Iterable[int] | None, T: int) -> list[int]:
    if rule is None:
        return default_checkpoints(T)
    if isinstance(rule, str):
        rule = rule.strip()
        if rule == "log2":
            return default_checkpoints(T)
        if rule.startswith("log10"):
            _, _, per = rule.partition(":")
            return log_checkpoints(T, int(per) if per else 10)
        if rule.isdigit():
            rule = [int(rule)]
        else:
            raise ConfigError(f"unknown checkpoint rule {rule!r}")
    points = {int(t) for t in rule if 1 <= int(t) <= T}
    points.add(T)
    return sorted(points)


# ═══════════════════════════════════════════════════════════════════════════════
# SGD-PIWA
# ═══════════════════════════════════════════════════════════════════════════════

def error_rate(x: np.ndarray, dataset: Dataset) -> float:
    """Доля неверных предсказаний; при aᵀx ≥ 0 предсказывается +1."""
    predictions = np.where(dataset.features @ x >= 0.0, 1.0, -1.0)
    return float(np.mean(predictions != dataset.labels))


def _resolve_metric(loss, metric: TestMetric) -> TestMetric:
    if metric is TestMetric.AUTO:
        return TestMetric.ERROR_RATE if loss.is_classification else TestMetric.OBJECTIVE
    return metric


def evaluate_test(loss, x: np.ndarray, test: Optional[Dataset], metric: TestMetric) -> Optional[float]:
    if test is None or metric is TestMetric.NONE:
        return None
    if metric is TestMetric.ERROR_RATE:
        return error_rate(x, test)
    base = loss.base if isinstance(loss, ProximalLoss) else loss
    return base.objective(x, test)


def _check_batch_size(loss, batch_size: int) -> None:
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    kind = loss.base.kind if isinstance(loss, ProximalLoss) else loss.kind
    if batch_size > 1 and kind is not LossKind.PL_SINE:
        raise ConfigError(f"batch_size > 1 is only supported for pl-sine, not {kind.value}")


def sgd_piwa(
    loss: LossModel | ProximalLoss,
    x1: np.ndarray,
    schedule: StepSchedule,
    T: int,
    domain: BallDomain,
    scheme: AveragingState,
    stream: SampleStream,
    checkpoints: Optional[Iterable[int]] = None,
    dataset: Optional[Dataset] = None,
    test: Optional[Dataset] = None,
    metric: TestMetric = TestMetric.AUTO,
    callback: Optional[IterateCallback] = None,
    check_gradient_bound: bool = True,
    wall_clock: bool = False,
    on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
    batch_size: int = 1,
) -> RunTrace:
    """
    x_{t+1} = Π_Ω[x_t − η_t ∇f(x_t; z_{i_t})] для t = 1..T−1.

    Все итерации x_1..x_T идут в схему усреднения; в контрольных точках
    считается F_S по усреднённой и последней итерации. Прогон
    детерминирован при фиксированном зерне потока.
    При batch_size > 1 (только pl-sine) шаг идёт по среднему градиенту
    batch_size индексов, взятых из потока подряд.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    _check_batch_size(loss, batch_size)
    if dataset is None:
        raise ConfigError("sgd_piwa needs the training dataset")
    if stream.n != dataset.n:
        raise ConfigError(f"sample stream over n={stream.n} but dataset has n={dataset.n}")
    if scheme.t != 0:
        raise ConfigError("averaging state must be fresh")
    x = as_vector(x1, "x1").copy()
    if x.shape[0] != dataset.d:
        raise ConfigError(f"x1 has dimension {x.shape[0]}, dataset has {dataset.d}")
    if not domain.contains(x):
        raise ConfigError(f"x1 lies outside the domain {domain.describe()}")

    G = loss.constants.G if check_gradient_bound else None
    g_limit = G * (1.0 + GRADIENT_BOUND_RTOL) + 1e-12 if G is not None else math.inf
    metric = _resolve_metric(loss, metric)
    marks = set(resolve_checkpoints(checkpoints, T))
    records: list[Checkpoint] = []
    started = time.perf_counter()

    def record(t: int) -> None:
        average = scheme.peek()
        point = Checkpoint(
            t=t,
            obj_avg=loss.objective(average, dataset),
            obj_last=loss.objective(x, dataset),
            test_metric=evaluate_test(loss, average, test, metric),
            wall_ms=(time.perf_counter() - started) * 1000.0 if wall_clock else 0.0,
        )
        records.append(point)
        if on_checkpoint is not None:
            on_checkpoint(point)
        log.debug("t=%d: F(avg)=%.6g, F(last)=%.6g", t, point.obj_avg, point.obj_last)

    scheme.update(x, 1)
    if callback is not None:
        callback(1, x)
    if 1 in marks:
        record(1)

    for t in range(1, T):
        eta = step_size(schedule, t)
        if batch_size == 1:
            g_norm = loss.step(x, dataset.sample(stream.next_index()), eta)
        else:
            g = np.mean([loss.subgrad(x, dataset.sample(i)) for i in stream.take(batch_size)], axis=0)
            x -= eta * g
            g_norm = float(np.sqrt(g @ g))
        if not math.isfinite(float(x @ x)):
            raise DivergenceError("iterate became non-finite", last_finite_t=t)
        if g_norm > g_limit:
            raise GradientBoundViolation(f"gradient norm {g_norm:.6g} exceeds declared G={G:.6g} at t={t}")
        x = project_ball(x, domain)
        scheme.update(x, t + 1)
        if callback is not None:
            callback(t + 1, x)
        if t + 1 in marks:
            record(t + 1)

    return RunTrace(
        checkpoints=records,
        final_average=scheme.finalize(),
        final_last=x.copy(),
        scheme=scheme.scheme.value,
        alpha=scheme.alpha,
        metadata={
            "domain": domain.describe(),
            "schedule": schedule.model_dump(mode="json"),
            "regularizer": REGULARIZER_CONVENTION,
            "T": T,
            "batch_size": batch_size,
        },
    )


def run_sgd(
    loss: LossModel | ProximalLoss,
    dataset: Dataset,
    settings: RunSettings,
    seed: int,
    x1: Optional[np.ndarray] = None,
    test: Optional[Dataset] = None,
    metric: TestMetric = TestMetric.AUTO,
    callback: Optional[IterateCallback] = None,
    wall_clock: bool = False,
    on_checkpoint: Optional[Callable[[Checkpoint], None]] = None,
) -> RunTrace:
    """Прогон по RunSettings: область, схема и поток собираются здесь."""
    domain = BallDomain(radius=settings.radius)
    averaging = AveragingState.from_settings(settings.scheme, horizon=settings.T)
    trace = sgd_piwa(
        loss,
        np.zeros(dataset.d) if x1 is None else x1,
        settings.schedule,
        settings.T,
        domain,
        averaging,
        SampleStream(seed, dataset.n),
        checkpoints=settings.checkpoints,
        dataset=dataset,
        test=test,
        metric=metric,
        callback=callback,
        check_gradient_bound=settings.check_gradient_bound,
        wall_clock=wall_clock,
        on_checkpoint=on_checkpoint,
        batch_size=settings.batch_size,
    )
    trace.seed = seed
    return trace


def reference_minimum(
    loss: LossModel,
    dataset: Dataset,
    domain: Optional[BallDomain] = None,
    x0: Optional[np.ndarray] = None,
) -> tuple[np.ndarray, float]:
    """
    Минимум гладкой F_S методом L-BFGS; если он выходит за шар,
    задача решается заново с ограничением ‖x − c‖ ≤ r (SLSQP).
    """
    if not loss.is_smooth:
        raise ConfigError(f"reference minimum needs a smooth loss, got {loss.kind.value}")
    domain = domain or BallDomain.whole_space()
    x0 = np.zeros(dataset.d) if x0 is None else np.asarray(x0, dtype=np.float64)

    def fun(x):
        return loss.objective(x, dataset), loss.objective_gradient(x, dataset)

    result = scipy.optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", options={"maxiter": 10_000, "gtol": 1e-12, "ftol": 1e-15})
    x_star = result.x
    if not domain.contains(x_star):
        center = domain.center_for(dataset.d)
        radius_sq = domain.radius**2
        constraint = {
            "type": "ineq",
            "fun": lambda x: radius_sq - float((x - center) @ (x - center)),
            "jac": lambda x: -2.0 * (x - center),
        }
        result = scipy.optimize.minimize(fun, project_ball(x_star, domain), jac=True, method="SLSQP", constraints=[constraint], options={"maxiter": 1000, "ftol": 1e-15})
        x_star = project_ball(result.x, domain)
    value = loss.objective(x_star, dataset)
    log.debug("Эталонный минимум: F*=%.10g (%s)", value, result.message)
    return x_star, value


# ═══════════════════════════════════════════════════════════════════════════════
# СТАДИЙНЫЙ АЛГОРИТМ
# ═══════════════════════════════════════════════════════════════════════════════

def stage_radius(k: int, eps0: float, mu: float, D1: Optional[float] = None, rule: RadiusRule = RadiusRule.HALVING) -> float:
    """D_k: деление пополам от D₁ = √(ε₀/μ) или D_k = √(ε_{k−1}/μ)."""
    if RadiusRule(rule) is RadiusRule.ERROR_SCALED:
        return math.sqrt(eps0 / 2 ** (k - 1) / mu)
    D1 = math.sqrt(eps0 / mu) if D1 is None else D1
    return D1 / 2 ** (k - 1)


def default_d(alpha: float, Ghat_sq: float, c: float, delta: float) -> float:
    return max(32.0 * (alpha + 1.0) * Ghat_sq / c, 512.0 * (alpha + 1.0) ** 2 * Ghat_sq * math.log(1.0 / delta))


def stage_params(
    k: int,
    eps0: float,
    mu: float,
    Ghat_sq: float,
    c: Optional[float] = None,
    d: Optional[float] = None,
    alpha: float = 0.0,
    delta: float = 0.1,
    L: Optional[float] = None,
    D1: Optional[float] = None,
    c_reference_eps: Optional[float] = None,
    radius_rule: RadiusRule = RadiusRule.HALVING,
) -> StageParams:
    """
    Параметры стадии k: ε_k = ε₀/2^k, η_k = cε_k/(2Ĝ²), T_k = ⌈d/(με_k)⌉, γ = 4/μ.

    c=None — наибольшее допустимое min(1, 2Ĝ²/(Lε₀)); d=None —
    max{32(α+1)Ĝ²/c, 512(α+1)²Ĝ² ln(1/δ)}. При известном L шаг
    ограничивается 1/L.
    """
    if k < 1:
        raise ConfigError(f"stage index must be >= 1, got {k}")
    for name, value in (("eps0", eps0), ("mu", mu), ("Ghat_sq", Ghat_sq)):
        if not value > 0:
            raise ConfigError(f"{name} must be positive, got {value}")
    if alpha < 0:
        raise ConfigError(f"alpha must be non-negative, got {alpha}")
    if not 0.0 < delta < 1.0:
        raise ConfigError(f"delta must lie in (0, 1), got {delta}")

    ref_eps = eps0 if c_reference_eps is None else c_reference_eps
    c_max = min(1.0, 2.0 * Ghat_sq / (L * ref_eps)) if L is not None else None
    if c is None:
        c = c_max if c_max is not None else 1.0
    elif not c > 0:
        raise ConfigError(f"c must be positive, got {c}")
    elif c_max is not None and c > c_max * (1.0 + 1e-12):
        raise ConfigError(f"c={c:g} violates c <= min(1, 2*Ghat^2/(L*eps0)) = {c_max:g}")

    eps_k = eps0 / 2**k
    eta_k = c * eps_k / (2.0 * Ghat_sq)
    capped = False
    if L is not None and eta_k > 1.0 / L:
        log.warning("Стадия %d: η_k=%.4g ограничен 1/L=%.4g", k, eta_k, 1.0 / L)
        eta_k = 1.0 / L
        capped = True
    if d is None:
        d = default_d(alpha, Ghat_sq, c, delta)
    elif not d > 0:
        raise ConfigError(f"d must be positive, got {d}")

    return StageParams(
        k=k,
        eps_k=eps_k,
        eta_k=eta_k,
        T_k=max(1, math.ceil(d / (mu * eps_k))),
        D_k=stage_radius(k, eps0, mu, D1, radius_rule),
        gamma=4.0 / mu,
        Ghat_sq=Ghat_sq,
        c=c,
        d=d,
        eta_capped=capped,
    )


def stagewise(
    loss: LossModel,
    x1: np.ndarray,
    K: int,
    settings: StagewiseSettings,
    stream: SampleStream,
    dataset: Dataset,
    F_star: Optional[float] = None,
    test: Optional[Dataset] = None,
    metric: TestMetric = TestMetric.AUTO,
    callback: Optional[Callable[[int, int, np.ndarray], None]] = None,
) -> StagewiseResult:
    """
    Стадия k минимизирует F_S + ‖· − x_{k−1}‖²/(2γ) на шаре B(x_{k−1}, D_k)
    постоянным шагом η_k за T_k итераций; x_k — усреднение стадии.
    Поток индексов общий для всех стадий.
    """
    if K < 1:
        raise ConfigError(f"K must be >= 1, got {K}")
    constants = loss.constants
    if constants.rho is None:
        raise ConfigError("stagewise needs the loss to declare its weak-convexity modulus rho")
    mu = settings.mu if settings.mu is not None else constants.mu
    if mu is None:
        raise ConfigError("stagewise needs the PL modulus mu")
    x_prev = as_vector(x1, "x1").copy()

    eps0 = settings.eps0
    if eps0 is None:
        if F_star is None:
            raise ConfigError("eps0 is 'auto' but F* is unknown")
        eps0 = loss.objective(x_prev, dataset) - F_star
        if not eps0 > 0:
            raise ConfigError(f"x1 is already optimal (F(x1) - F* = {eps0:g}); nothing to do")

    gamma = 4.0 / mu
    L_stage = constants.L + 1.0 / gamma if constants.L is not None else None
    rho_violated = constants.rho > 0 and gamma > 1.0 / constants.rho
    if rho_violated:
        log.warning("γ=%g > 1/ρ=%g: стадии решаются без гарантии выпуклости", gamma, 1.0 / constants.rho)
    D1 = math.sqrt(eps0 / mu)
    scheme = settings.scheme or SchemeSettings(scheme=Scheme.PIWA, alpha=settings.alpha)
    log.info(
        "═══ Стадийный SGD-PIWA: K=%d, ε₀=%.6g, μ=%.6g, γ=%.6g, %s, Ĝ: %s, радиус: %s ═══",
        K, eps0, mu, gamma, scheme.label, settings.ghat_mode.value, settings.radius_rule.value,
    )

    iterates = [x_prev.copy()]
    stages: list[StageParams] = []
    traces: list[RunTrace] = []
    objectives: list[float] = []

    for k in range(1, K + 1):
        D_k = stage_radius(k, eps0, mu, D1, settings.radius_rule)
        ball = BallDomain.ball(D_k, center=x_prev)
        if settings.Ghat_sq is not None:
            Ghat_sq = settings.Ghat_sq
        else:
            if settings.ghat_mode is GhatMode.DECLARED:
                G_k = constants.G
            else:
                G_k = loss.gradient_bound(ball, dataset)
            if G_k is None:
                raise ConfigError(f"stage {k}: gradient bound G is unknown")
            Ghat_sq = 2.0 * G_k**2 + 2.0 * D_k**2 / gamma**2

        params = stage_params(
            k, eps0, mu, Ghat_sq,
            c=settings.c, d=settings.d, alpha=scheme.alpha, delta=settings.delta,
            L=L_stage, D1=D1, c_reference_eps=eps0, radius_rule=settings.radius_rule,
        )
        log.info("Стадия %d: ε_k=%.4g, η_k=%.4g, T_k=%d, D_k=%.4g", k, params.eps_k, params.eta_k, params.T_k, params.D_k)

        stage_loss = ProximalLoss(loss, x_prev, gamma, G=math.sqrt(Ghat_sq))
        stage_callback = (lambda t, x, _k=k: callback(_k, t, x)) if callback is not None else None
        try:
            trace = sgd_piwa(
                stage_loss,
                x_prev,
                StepSchedule(kind=ScheduleKind.CONSTANT, eta_const=params.eta_k),
                params.T_k,
                ball,
                AveragingState.from_settings(scheme, horizon=params.T_k),
                stream,
                dataset=dataset,
                test=test,
                metric=metric,
                callback=stage_callback,
                batch_size=settings.batch_size,
            )
        except DivergenceError as exc:
            raise DivergenceError("iterate became non-finite", exc.last_finite_t, stage=k) from exc
        except NumericError as exc:
            raise type(exc)(f"stage {k}: {exc}") from exc

        x_prev = trace.final_average
        objective = loss.objective(x_prev, dataset)
        trace.metadata["stage"] = k
        iterates.append(x_prev.copy())
        stages.append(params)
        traces.append(trace)
        objectives.append(objective)
        if F_star is not None:
            log.info("Стадия %d: F−F*=%.4g, цель ε_k=%.4g", k, objective - F_star, params.eps_k)

    return StagewiseResult(
        x_final=x_prev,
        iterates=iterates,
        stages=stages,
        traces=traces,
        objectives=objectives,
        metadata={
            "eps0": eps0,
            "eps0_mode": "auto" if settings.eps0 is None else "override",
            "c_mode": "auto" if settings.c is None else "override",
            "d_mode": "auto" if settings.d is None else "override",
            "ghat_mode": settings.ghat_mode.value,
            "radius_rule": settings.radius_rule.value,
            "gamma": gamma,
            "rho_condition_violated": rho_violated,
            "mu": mu,
            "F_star": F_star,
        },
    )
