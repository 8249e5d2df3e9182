"""
Эксперименты: загрузка задачи по конфигурации, одиночные прогоны и свипы,
замеры устойчивости, стадийный алгоритм, генерация данных и оценка
скорости сходимости по log-log точкам.

Каждая строка каждого CSV несёт отпечаток конфигурации; трассы пишутся
построчно и сбрасываются на диск в каждой контрольной точке.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Optional

import numpy as np

from bounds import bound_opt_convex, bound_opt_strongly
from config import (
    RESULTS_DIR,
    STABILITY_CSV_HEADER,
    STAGEWISE_CSV_HEADER,
    SUMMARY_CSV_HEADER,
    TRACE_CSV_HEADER,
    config_fingerprint,
)
from core import BallDomain, SampleStream, derive_seed
from data import (
    CLASSIFICATION,
    REGRESSION,
    Dataset,
    gen_rank_deficient_ls,
    least_norm_solution,
    load_libsvm,
    make_synthetic,
    max_abs_scale,
    ridge_solution,
    save_libsvm,
    split,
)
from errors import BoundRefusal, ConfigError, RateFitError
from logger import get_logger, run_logger
from losses import LossModel, make_loss
from models import (
    BoundInputs,
    BoundKind,
    Checkpoint,
    ExperimentConfig,
    LossKind,
    RateFit,
    RunSettings,
    ScheduleKind,
    Scheme,
    SchemeSettings,
    StagewiseSettings,
    StepSchedule,
    SyntheticKind,
)
from optimizer import reference_minimum, resolve_checkpoints, run_sgd, stagewise
from scheduler import run_jobs
from stability import stability_sweep

log = get_logger(__name__)

_REGRESSION_LOSSES = {LossKind.LEAST_SQUARES, LossKind.LEAST_SQUARES_L2, LossKind.PL_SINE}


# ═══════════════════════════════════════════════════════════════════════════════
# ЗАДАЧА
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass
class Problem:
    train: Dataset
    loss: LossModel
    domain: BallDomain
    test: Optional[Dataset] = None
    pool: Optional[Dataset] = None
    probe: Optional[Dataset] = None
    F_star: Optional[float] = None
    x_star: Optional[np.ndarray] = None
    baseline_kind: str = "best-found"
    notes: dict[str, Any] = field(default_factory=dict)


def _load_source(config: ExperimentConfig, extra: int = 0) -> Dataset:
    """Датасет из файла или генератора; extra — дополнительные примеры для пула и пробного набора."""
    problem = config.problem
    task = REGRESSION if problem.loss in _REGRESSION_LOSSES else CLASSIFICATION
    if problem.dataset == "synthetic":
        spec = problem.synthetic
        if extra:
            spec = spec.model_copy(update={"n": spec.n + extra})
        return make_synthetic(spec)
    return load_libsvm(problem.dataset, dim=problem.dim, zero_one_labels=problem.zero_one_labels, task=task)


def _optimum(loss: LossModel, train: Dataset, domain: BallDomain) -> tuple[Optional[np.ndarray], Optional[float], str]:
    """F* для базы зазора: замкнутая форма для МНК, L-BFGS для гладких, иначе неизвестно."""
    if loss.kind in (LossKind.LEAST_SQUARES, LossKind.LEAST_SQUARES_L2):
        x_star = ridge_solution(train, loss.lam) if loss.lam > 0 else least_norm_solution(train)
        if domain.contains(x_star):
            return x_star, loss.objective(x_star, train), "closed-form"
    if loss.is_smooth:
        x_star, value = reference_minimum(loss, train, domain)
        return x_star, value, "lbfgs"
    return None, None, "best-found"


def load_problem(config: ExperimentConfig, with_test: bool = True, with_stability_sets: bool = False) -> Problem:
    """
    Собирает train/test, функцию потерь с константами и область.

    with_stability_sets: к данным добавляются пул замен и пробный набор
    (свежие примеры того же генератора или test-файл).
    """
    problem = config.problem
    domain = BallDomain(radius=config.algorithm.radius)
    stab = config.stability
    pool = probe = test = None

    if with_stability_sets and problem.dataset == "synthetic":
        full = _load_source(config, extra=stab.pool_size + stab.probe_size)
        n = problem.synthetic.n
        train = full.subset(np.arange(n), "train")
        pool = full.subset(np.arange(n, n + stab.pool_size), "pool")
        probe = full.subset(np.arange(n + stab.pool_size, full.n), "probe")
    else:
        full = _load_source(config)
        if problem.test_dataset is not None:
            test = load_libsvm(problem.test_dataset, dim=problem.dim, zero_one_labels=problem.zero_one_labels, task=full.task)
            d = max(full.d, test.d)
            train, test = full.with_dim(d), test.with_dim(d)
        elif with_test or with_stability_sets:
            train, test = split(full, problem.test_fraction, problem.split_seed)
        else:
            train = full
        if with_stability_sets:
            pool = probe = test

    if problem.scale:
        train, scales = max_abs_scale(train)
        test = max_abs_scale(test, scales)[0] if test is not None else None
        pool = max_abs_scale(pool, scales)[0] if pool is not None else None
        probe = max_abs_scale(probe, scales)[0] if probe is not None else None

    loss = make_loss(problem.loss, problem.lam, train, domain, bounded=problem.bounded)
    x_star, f_star, kind = _optimum(loss, train, domain)
    log.info(
        "Задача: %s, λ=%g, n=%d, d=%d, область %s, F*=%s (%s)",
        loss.kind.value, loss.lam, train.n, train.d, domain.describe(),
        "—" if f_star is None else f"{f_star:.10g}", kind,
    )
    return Problem(
        train=train, loss=loss, domain=domain, test=test if with_test else None,
        pool=pool, probe=probe, F_star=f_star, x_star=x_star, baseline_kind=kind,
    )


# ═══════════════════════════════════════════════════════════════════════════════
# ПРОГОНЫ И СВИПЫ
# ═══════════════════════════════════════════════════════════════════════════════

@dataclass(frozen=True)
class RunJob:
    seed: int
    scheme: SchemeSettings
    eta1: Optional[float]
    path: Path


@dataclass
class JobResult:
    job: RunJob
    T: int
    checkpoints: list[Checkpoint]


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def expand_jobs(config: ExperimentConfig, out_dir: Path, sweep_eta: bool = True) -> list[RunJob]:
    """Декартово произведение зёрен, схем, α (только для PIWA) и сетки η₁."""
    algo = config.algorithm
    etas: list[Optional[float]] = list(algo.eta1) if sweep_eta else algo.eta1[:1]
    if algo.schedule is not ScheduleKind.CONVEX_SQRT:
        etas = [None]
    jobs = []
    for seed in config.seeds:
        for scheme in algo.schemes:
            alphas = algo.alphas if scheme is Scheme.PIWA else [0.0]
            for alpha in alphas:
                settings = SchemeSettings(scheme=scheme, alpha=alpha, fraction=algo.fraction, eta_pd=algo.eta_pd, beta=algo.beta)
                for eta1 in etas:
                    name = f"trace_seed{seed}_{scheme.value}_a{alpha:g}"
                    if eta1 is not None and len(etas) > 1:
                        name += f"_eta{eta1:g}"
                    jobs.append(RunJob(seed, settings, eta1, out_dir / f"{name}.csv"))
    return jobs


def run_settings(config: ExperimentConfig, scheme: SchemeSettings, eta1: Optional[float]) -> RunSettings:
    algo = config.algorithm
    if algo.schedule is ScheduleKind.STRONGLY_CONVEX and config.problem.lam <= 0:
        raise ConfigError("strongly-convex schedule needs problem.lambda > 0")
    schedule = StepSchedule(
        kind=algo.schedule,
        eta1=eta1,
        lam=config.problem.lam if algo.schedule is ScheduleKind.STRONGLY_CONVEX else None,
        alpha=scheme.alpha if scheme.scheme is Scheme.PIWA else 0.0,
        eta_const=algo.eta_const,
    )
    return RunSettings(
        schedule=schedule,
        T=algo.T,
        scheme=scheme,
        radius=algo.radius,
        checkpoints=resolve_checkpoints(config.evaluation.checkpoints, algo.T),
        check_gradient_bound=algo.check_gradient_bound,
        batch_size=algo.batch_size,
    )


class TraceWriter:
    """CSV трассы: заголовок при открытии, строка и flush на каждую контрольную точку."""

    def __init__(self, path: Path, fingerprint: str, seed: int, scheme: str, alpha: float):
        path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._prefix = [fingerprint, str(seed), scheme, _fmt(float(alpha))]
        self._writer.writerow(TRACE_CSV_HEADER)
        self._fh.flush()

    def __call__(self, point: Checkpoint) -> None:
        self._writer.writerow(self._prefix + [
            str(point.t), _fmt(point.obj_avg), _fmt(point.obj_last), _fmt(point.test_metric), _fmt(point.wall_ms),
        ])
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def execute_run_job(payload: tuple[ExperimentConfig, Problem, RunJob, str]) -> JobResult:
    config, problem, job, fingerprint = payload
    settings = run_settings(config, job.scheme, job.eta1)
    run_log = run_logger(__name__, fp=fingerprint, seed=job.seed)
    run_log.info("Прогон: %s, η₁=%s, T=%d", job.scheme.label, job.eta1, settings.T)
    with TraceWriter(job.path, fingerprint, job.seed, job.scheme.scheme.value, job.scheme.alpha) as writer:
        trace = run_sgd(
            problem.loss,
            problem.train,
            settings,
            derive_seed(job.seed, 0),
            test=problem.test,
            metric=config.evaluation.metric,
            wall_clock=config.evaluation.wall_clock,
            on_checkpoint=writer,
        )
    run_log.info("Трасса %s: %d контрольных точек", job.path.name, len(trace.checkpoints))
    return JobResult(job, settings.T, trace.checkpoints)


# ─── Скорость сходимости ──────────────────────────────────────────────────────

def fit_rate(points: Iterable[tuple[float, float]], skip_nonpositive: bool = False) -> RateFit:
    """МНК-прямая по точкам (ln T, ln gap): наклон, сдвиг и R²."""
    kept: list[tuple[float, float]] = []
    skipped = 0
    for T, gap in points:
        if T <= 0:
            raise RateFitError(f"iteration count must be positive, got {T}")
        if not gap > 0:
            if not skip_nonpositive:
                raise RateFitError(f"non-positive gap {gap} at T={T}")
            skipped += 1
            continue
        kept.append((math.log(T), math.log(gap)))
    if skipped:
        log.warning("fit_rate: пропущено %d точек с неположительным зазором", skipped)
    if len(kept) < 3:
        raise RateFitError(f"rate fit needs at least 3 points, got {len(kept)}")
    x = np.array([p[0] for p in kept])
    y = np.array([p[1] for p in kept])
    if np.ptp(x) == 0:
        raise RateFitError("rate fit needs at least two distinct T values")
    slope, intercept = np.polyfit(x, y, 1)
    residual = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(residual @ residual) / ss_tot
    if not math.isfinite(slope):
        raise RateFitError("rate fit produced a non-finite slope")
    return RateFit(points=kept, slope=float(slope), intercept=float(intercept), r2=r2, skipped=skipped)


def gap_baseline(problem: Problem, results: list[JobResult], slack: float) -> tuple[float, str]:
    """F*, если известно; иначе лучшее найденное значение минус slack."""
    if problem.F_star is not None:
        return problem.F_star, problem.baseline_kind
    best = min(min(p.obj_avg, p.obj_last) for r in results for p in r.checkpoints)
    return best - slack, "best-found"


def final_rate_bound(config: ExperimentConfig, problem: Problem, job: RunJob) -> Optional[float]:
    """Оценка ошибки оптимизации при T (для сравнения с итоговым зазором)."""
    algo = config.algorithm
    G = problem.loss.constants.G
    alpha = job.scheme.alpha if job.scheme.scheme is Scheme.PIWA else 0.0
    try:
        if algo.schedule is ScheduleKind.CONVEX_SQRT:
            D = 2.0 * algo.radius if algo.radius is not None else None
            return bound_opt_convex(BoundInputs(alpha=alpha, D=D, G=G, eta1=job.eta1, T=algo.T))
        if algo.schedule is ScheduleKind.STRONGLY_CONVEX:
            return bound_opt_strongly(BoundInputs(alpha=alpha, G=G, lam=config.problem.lam, T=algo.T))
    except BoundRefusal as exc:
        log.debug("Оценка скорости не вычислена: %s", exc)
    return None


def write_summary(path: Path, config: ExperimentConfig, problem: Problem, results: list[JobResult], fingerprint: str) -> None:
    baseline, kind = gap_baseline(problem, results, config.evaluation.gap_slack)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_CSV_HEADER)
        for result in results:
            job, points = result.job, result.checkpoints
            final = points[-1]
            tested = [p for p in points if p.test_metric is not None]
            best = min(tested, key=lambda p: p.test_metric) if tested else None
            fit_points = [(p.t, p.obj_avg - baseline) for p in points if p.t >= config.evaluation.fit_min_fraction * result.T]
            try:
                fit = fit_rate(fit_points, skip_nonpositive=True)
                rate = [fit.slope, fit.intercept, fit.r2]
            except RateFitError as exc:
                log.warning("Оценка скорости для %s не построена: %s", job.path.name, exc)
                rate = [None, None, None]
            writer.writerow([_fmt(v) for v in [
                fingerprint, job.seed, job.scheme.scheme.value, float(job.scheme.alpha), job.eta1, result.T,
                final.obj_avg, final.test_metric,
                best.test_metric if best else None, best.t if best else None,
                float(baseline), kind, *rate, final_rate_bound(config, problem, job),
            ]])


def _out_dir(config: ExperimentConfig, out: Optional[Path]) -> Path:
    if out is not None:
        path = Path(out)
    elif config.output.path is not None:
        path = Path(config.output.path)
    else:
        path = RESULTS_DIR
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_jobs(config: ExperimentConfig, out: Optional[Path], sweep: bool, max_workers: Optional[int]) -> Path:
    out_dir = _out_dir(config, out)
    fingerprint = config_fingerprint(config)
    problem = load_problem(config)
    jobs = expand_jobs(config, out_dir, sweep_eta=sweep)
    workers = 1 if not sweep else (max_workers or config.sweep.max_workers)
    log.info("═══ %s: %d прогонов, отпечаток %s ═══", "Свип" if sweep else "Прогон", len(jobs), fingerprint)
    results = run_jobs(execute_run_job, [(config, problem, job, fingerprint) for job in jobs], workers)
    summary = out_dir / "summary.csv"
    write_summary(summary, config, problem, results, fingerprint)
    log.info("═══ Готово: %d трасс и %s ═══", len(results), summary.name)
    return summary


def cmd_run(config: ExperimentConfig, out: Optional[Path] = None) -> Path:
    """По трассе на (seed, схема, α) с первым η₁ из сетки; последовательно."""
    return _run_jobs(config, out, sweep=False, max_workers=1)


def cmd_sweep(config: ExperimentConfig, out: Optional[Path] = None, max_workers: Optional[int] = None) -> Path:
    """То же по всей сетке η₁, прогоны параллельно."""
    return _run_jobs(config, out, sweep=True, max_workers=max_workers)


# ═══════════════════════════════════════════════════════════════════════════════
# УСТОЙЧИВОСТЬ
# ═══════════════════════════════════════════════════════════════════════════════

def cmd_stability(config: ExperimentConfig, out: Optional[Path] = None, max_workers: Optional[int] = None) -> Path:
    out_dir = _out_dir(config, out)
    fingerprint = config_fingerprint(config)
    problem = load_problem(config, with_test=False, with_stability_sets=True)
    algo = config.algorithm
    scheme = SchemeSettings(scheme=Scheme.PIWA, alpha=0.0, fraction=algo.fraction, eta_pd=algo.eta_pd, beta=algo.beta)
    settings = run_settings(config, scheme, algo.eta1[0] if algo.schedule is ScheduleKind.CONVEX_SQRT else None)
    stab = config.stability
    path = out_dir / "stability.csv"

    with open(path, "w", newline="", encoding="utf-8") as fh, \
            open(out_dir / "stability_summary.csv", "w", newline="", encoding="utf-8") as summary_fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STABILITY_CSV_HEADER)
        summary = csv.writer(summary_fh, lineterminator="\n")
        meta: dict[str, Any] = {"fingerprint": fingerprint, "aggregates": []}
        header_written = False
        for seed in config.seeds:
            report = stability_sweep(
                problem.loss, problem.train, settings, stab.trials, stab.alphas, problem.probe,
                pool=problem.pool, seed=seed, replacement=stab.replacement,
                bound_kind=stab.bound, max_workers=max_workers or config.sweep.max_workers,
            )
            bounds = {agg.alpha: agg.bound for agg in report.aggregates}
            for trial in report.trials:
                writer.writerow([_fmt(v) for v in [
                    fingerprint, seed, float(trial.alpha), trial.trial,
                    trial.param_dev_avg, trial.param_dev_last, trial.loss_dev_max, bounds.get(trial.alpha),
                ]])
            fh.flush()
            for agg in report.aggregates:
                bound_column = {BoundKind.CONVEX: "thm2_bound", BoundKind.STRONGLY: "thm4_bound"}.get(agg.bound_kind, "thm_bound")
                if not header_written:
                    summary.writerow([
                        "fingerprint", "seed", "alpha", "trials", "mean_param_dev", "se_param_dev", "max_param_dev",
                        "mean_param_dev_last", "max_param_dev_last", "mean_loss_dev", "max_loss_dev",
                        bound_column, "bound_verified", "deviation_share",
                    ])
                    header_written = True
                summary.writerow([_fmt(v) for v in [
                    fingerprint, seed, float(agg.alpha), agg.trials, agg.mean_param_dev_avg, agg.se_param_dev_avg,
                    agg.max_param_dev_avg, agg.mean_param_dev_last, agg.max_param_dev_last,
                    agg.mean_loss_dev, agg.max_loss_dev, agg.bound, int(agg.bound_verified), agg.deviation_share,
                ]])
                meta["aggregates"].append({"seed": seed, **agg.model_dump(mode="json")})
            meta["notes"] = report.notes

    (out_dir / "stability_meta.json").write_text(json.dumps(meta, indent=2, ensure_ascii=False), encoding="utf-8")
    log.info("═══ Устойчивость записана в %s ═══", path)
    return path


# ═══════════════════════════════════════════════════════════════════════════════
# СТАДИЙНЫЙ АЛГОРИТМ
# ═══════════════════════════════════════════════════════════════════════════════

def stagewise_settings(config: ExperimentConfig) -> StagewiseSettings:
    section = config.algorithm.stagewise
    return StagewiseSettings(
        **section.model_dump(),
        scheme=SchemeSettings(scheme=Scheme.PIWA, alpha=section.alpha),
    )


def cmd_stagewise(config: ExperimentConfig, out: Optional[Path] = None) -> Path:
    out_dir = _out_dir(config, out)
    fingerprint = config_fingerprint(config)
    problem = load_problem(config, with_test=False)
    settings = stagewise_settings(config)
    path = out_dir / "stagewise.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(STAGEWISE_CSV_HEADER)
        for seed in config.seeds:
            stream = SampleStream(derive_seed(seed, 0), problem.train.n)
            result = stagewise(
                problem.loss, np.zeros(problem.train.d), settings.K, settings, stream,
                problem.train, F_star=problem.F_star,
            )
            run_logger(__name__, fp=fingerprint, seed=seed).info(
                "Стадий: %d, итераций: %d", len(result.stages), sum(s.T_k for s in result.stages)
            )
            for stage, objective in zip(result.stages, result.objectives):
                gap = objective - problem.F_star if problem.F_star is not None else None
                writer.writerow([_fmt(v) for v in [
                    fingerprint, seed, stage.k, stage.eps_k, stage.eta_k, stage.T_k, stage.D_k,
                    objective, gap, stage.eps_k,
                ]])
            fh.flush()
    log.info("═══ Стадийный прогон записан в %s ═══", path)
    return path


# ═══════════════════════════════════════════════════════════════════════════════
# ДАННЫЕ
# ═══════════════════════════════════════════════════════════════════════════════

def cmd_gen_data(config: ExperimentConfig, path: Path) -> Path:
    """Синтетический датасет в LIBSVM и JSON-описание рядом (F*, μ, происхождение)."""
    spec = config.problem.synthetic
    meta: dict[str, Any] = {"spec": spec.model_dump(mode="json")}
    if spec.kind is SyntheticKind.RANK_DEFICIENT_LS:
        dataset, f_star, mu = gen_rank_deficient_ls(spec)
        meta.update({"F_star": f_star, "mu": mu})
    else:
        dataset = make_synthetic(spec)
        if "F_star" in dataset.meta:
            meta["F_star"] = dataset.meta["F_star"]
    path = Path(path)
    save_libsvm(path, dataset)
    meta["content_hash"] = dataset.content_hash
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2, ensure_ascii=False), encoding="utf-8")
    log.info("Датасет %s записан в %s (n=%d, d=%d)", spec.kind.value, path, dataset.n, dataset.d)
    return path


def read_rate_points(path: Path) -> list[tuple[float, float]]:
    """Точки (T, gap) из CSV с колонками T|t и gap."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"points file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return []
    t_key = "T" if "T" in rows[0] else "t"
    if t_key not in rows[0] or "gap" not in rows[0]:
        raise ConfigError(f"{path}: expected columns T (or t) and gap")
    return [(float(row[t_key]), float(row["gap"])) for row in rows]
