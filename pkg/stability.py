"""
Эмпирическая равномерная устойчивость: пары прогонов SGD-PIWA на
соседних датасетах с общей последовательностью индексов.

Траектории совпадают побитово до первого выбора отличающегося примера;
после этого расхождение измеряется по усреднённым и последним итерациям
и по потерям на пробном наборе (максимум по нему заменяет sup_z).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from bounds import bound_param_deviation, bound_stab_convex, bound_stab_strongly
from config import PROBE_SET_MIN
from core import BallDomain, SampleStream, derive_seed, make_rng
from data import Dataset, Sample
from errors import BoundRefusal, ConfigError, GradientBoundViolation, NumericError
from logger import get_logger
from losses import LossModel
from models import (
    BoundInputs,
    BoundKind,
    RunSettings,
    ScheduleKind,
    StabilityAggregate,
    StabilityReport,
    StabilityTrial,
)
from optimizer import run_sgd, step_sizes
from scheduler import run_jobs

log = get_logger(__name__)


@dataclass(frozen=True, eq=False)
class NeighborPair:
    S: Dataset
    S_prime: Dataset
    differing_index: int
    replacement: Sample


def make_neighbor(S: Dataset, j: int, z_new: Sample) -> NeighborPair:
    """S' = S с примером j, заменённым на z_new."""
    return NeighborPair(S, S.replace(j, z_new), j, z_new)


def _draw_positions(seed: int, n: int, T: int, j: int) -> tuple[int, Optional[int]]:
    """Сколько раз индекс j выбран за T−1 шагов и номер первого такого шага."""
    if T <= 1:
        return 0, None
    hits = np.flatnonzero(SampleStream(seed, n).take(T - 1) == j)
    return int(hits.size), (int(hits[0]) + 1 if hits.size else None)


def coupled_run(
    loss: LossModel,
    pair: NeighborPair,
    settings: RunSettings,
    seed: int,
    probe: Dataset,
    settings_prime: Optional[RunSettings] = None,
    alpha: Optional[float] = None,
    trial: int = 0,
) -> StabilityTrial:
    """
    Два прогона с одним зерном на S и S'. Возвращает ‖x̄_T − x̄'_T‖,
    ‖x_T − x'_T‖ и max_z |f(x̄_T; z) − f(x̄'_T; z)| по пробному набору.
    """
    if settings_prime is not None and settings_prime != settings:
        raise ConfigError("coupled runs must share schedule, scheme, domain and T")
    T = settings.T
    draws, first_draw = _draw_positions(seed, pair.S.n, T, pair.differing_index)
    # x_{t} совпадают до t = first_draw включительно
    check_t = first_draw if first_draw is not None else T
    seen: dict[str, np.ndarray] = {}

    def watch(key: str):
        def callback(t: int, x: np.ndarray) -> None:
            if t == check_t:
                seen[key] = x.copy()
        return callback

    run = run_sgd(loss, pair.S, settings, seed, callback=watch("S"))
    run_prime = run_sgd(loss, pair.S_prime, settings, seed, callback=watch("S'"))
    if not np.array_equal(seen["S"], seen["S'"]):
        raise NumericError(f"coupled trajectories differ at t={check_t} before the differing sample was drawn")

    param_dev_avg = float(np.linalg.norm(run.final_average - run_prime.final_average))
    param_dev_last = float(np.linalg.norm(run.final_last - run_prime.final_last))
    loss_dev = float(np.max(np.abs(
        loss.per_sample_values(run.final_average, probe) - loss.per_sample_values(run_prime.final_average, probe)
    )))

    G_probe = loss.gradient_bound(BallDomain(radius=settings.radius), probe)
    if G_probe is not None and loss_dev > G_probe * param_dev_avg * (1.0 + 1e-9) + 1e-15:
        raise GradientBoundViolation(
            f"loss deviation {loss_dev:.6g} exceeds G*param deviation {G_probe * param_dev_avg:.6g}"
        )

    G = loss.constants.G
    dev_bound = None
    if G is not None and T > 1:
        dev_bound = bound_param_deviation(G, pair.S.n, step_sizes(settings.schedule, T - 1))

    return StabilityTrial(
        alpha=settings.scheme.alpha if alpha is None else alpha,
        trial=trial,
        seed=seed,
        differing_index=pair.differing_index,
        param_dev_avg=param_dev_avg,
        param_dev_last=param_dev_last,
        loss_dev_max=loss_dev,
        differing_draws=draws,
        first_draw_t=first_draw,
        deviation_bound=dev_bound,
    )


def _trial_job(job: tuple) -> StabilityTrial:
    loss, pair, settings, seed, probe, alpha, trial = job
    return coupled_run(loss, pair, settings, seed, probe, alpha=alpha, trial=trial)


def settings_for_alpha(settings: RunSettings, alpha: float) -> RunSettings:
    """Подставляет α в схему и (для сильно выпуклого расписания) в шаг."""
    scheme = settings.scheme.model_copy(update={"alpha": alpha})
    schedule = settings.schedule
    if schedule.kind is ScheduleKind.STRONGLY_CONVEX:
        schedule = schedule.model_copy(update={"alpha": alpha})
    return settings.model_copy(update={"scheme": scheme, "schedule": schedule})


def resolve_bound_kind(loss: LossModel, settings: RunSettings, kind: BoundKind) -> BoundKind:
    if kind is not BoundKind.AUTO:
        return kind
    if settings.schedule.kind is ScheduleKind.STRONGLY_CONVEX:
        return BoundKind.STRONGLY
    if settings.schedule.kind is ScheduleKind.CONVEX_SQRT:
        if not loss.is_smooth:
            log.warning("Потери негладкие: условие гладкости оценки устойчивости не выполнено")
        return BoundKind.CONVEX
    return BoundKind.NONE


def stability_bound(loss: LossModel, settings: RunSettings, n: int, alpha: float, kind: BoundKind) -> Optional[float]:
    c = loss.constants
    try:
        if kind is BoundKind.CONVEX:
            return bound_stab_convex(BoundInputs(alpha=alpha, G=c.G, L=c.L, n=n, T=settings.T, eta1=settings.schedule.eta1))
        if kind is BoundKind.STRONGLY:
            inputs = BoundInputs(alpha=alpha, G=c.G, lam=settings.schedule.lam, n=n, loss_bounded_unit=c.bounded_unit)
            return bound_stab_strongly(inputs)[1]
    except BoundRefusal as exc:
        log.warning("Оценка устойчивости не вычислена: %s", exc)
    return None


def bound_verified(loss: LossModel, settings: RunSettings, kind: BoundKind) -> bool:
    """
    True, если предпосылки оценки подтверждены объявленными константами.
    Выпуклая оценка без известной L (или для негладких потерь) вычисляется,
    но остаётся непроверенной.
    """
    if kind is BoundKind.CONVEX:
        L, eta1 = loss.constants.L, settings.schedule.eta1
        return loss.is_smooth and L is not None and eta1 is not None and eta1 <= 2.0 / L
    return kind is BoundKind.STRONGLY


def aggregate(trials: list[StabilityTrial], alpha: float, bound: Optional[float], kind: BoundKind, verified: bool = False) -> StabilityAggregate:
    dev_avg = np.array([t.param_dev_avg for t in trials])
    dev_last = np.array([t.param_dev_last for t in trials])
    loss_dev = np.array([t.loss_dev_max for t in trials])
    se = float(dev_avg.std(ddof=1) / np.sqrt(len(trials))) if len(trials) > 1 else 0.0
    checked = [t for t in trials if t.deviation_bound is not None]
    share = None
    if checked:
        share = sum(t.param_dev_last <= t.deviation_bound * (1.0 + 1e-9) for t in checked) / len(checked)
    return StabilityAggregate(
        alpha=alpha,
        trials=len(trials),
        mean_param_dev_avg=float(dev_avg.mean()),
        se_param_dev_avg=se,
        max_param_dev_avg=float(dev_avg.max()),
        mean_param_dev_last=float(dev_last.mean()),
        max_param_dev_last=float(dev_last.max()),
        mean_loss_dev=float(loss_dev.mean()),
        max_loss_dev=float(loss_dev.max()),
        bound=bound,
        bound_kind=kind,
        deviation_share=share,
        bound_verified=bound is not None and verified,
    )


def stability_sweep(
    loss: LossModel,
    S: Dataset,
    settings: RunSettings,
    trials: int,
    alpha_grid: list[float],
    probe: Dataset,
    pool: Optional[Dataset] = None,
    seed: int = 0,
    replacement: str = "pool",
    bound_kind: BoundKind = BoundKind.AUTO,
    max_workers: int = 1,
) -> StabilityReport:
    """
    Для каждого α — trials сопряжённых прогонов со случайными (j, z_new, зерно).
    Испытание с номером i использует одни и те же j, z_new и зерно для всех α.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if replacement == "pool" and (pool is None or pool.n == 0):
        raise ConfigError("replacement='pool' needs a non-empty pool of fresh samples")
    if probe.n < PROBE_SET_MIN:
        log.warning("Пробный набор из %d примеров меньше рекомендуемых %d", probe.n, PROBE_SET_MIN)
    kind = resolve_bound_kind(loss, settings, bound_kind)

    neighbors: list[tuple[NeighborPair, int]] = []
    for trial in range(trials):
        rng = make_rng(seed, 5, trial)
        j = int(rng.integers(S.n))
        z_new = S.sample(j) if replacement == "identity" else pool.sample(int(rng.integers(pool.n)))
        neighbors.append((make_neighbor(S, j, z_new), derive_seed(seed, trial)))

    report = StabilityReport(notes=[
        "expectation averaged over run seed, differing index and replacement sample",
        f"replacement={replacement}; sup_z approximated by max over {probe.n} probe samples",
    ])
    if not loss.is_smooth:
        report.notes.append("loss is nonsmooth: smoothness hypothesis of the convex stability bound fails")

    for alpha in alpha_grid:
        run_settings = settings_for_alpha(settings, alpha)
        log.info("═══ Устойчивость: α=%g, испытаний %d ═══", alpha, trials)
        jobs = [(loss, pair, run_settings, trial_seed, probe, alpha, trial) for trial, (pair, trial_seed) in enumerate(neighbors)]
        results = run_jobs(_trial_job, jobs, max_workers)
        agg = aggregate(
            results, alpha, stability_bound(loss, run_settings, S.n, alpha, kind), kind,
            verified=bound_verified(loss, run_settings, kind),
        )
        report.trials.extend(results)
        report.aggregates.append(agg)
        log.info(
            "α=%g: среднее ‖x̄−x̄'‖=%.4g ± %.2g, оценка=%s",
            alpha, agg.mean_param_dev_avg, agg.se_param_dev_avg, "—" if agg.bound is None else f"{agg.bound:.4g}",
        )
    return report


def generalization_gap(loss: LossModel, x: np.ndarray, train: Dataset, fresh: Dataset) -> float:
    """F_fresh(x) − F_S(x): диагностика на свежей выборке, не критерий приёмки."""
    return loss.objective(x, fresh) - loss.objective(x, train)
