"""
Планировщик независимых прогонов.

Прогоны свипа и испытания устойчивости не делят изменяемого состояния,
поэтому выполняются в пуле процессов. Результаты возвращаются в порядке
постановки задач, так что итоговые файлы не зависят от числа воркеров.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Optional, TypeVar

from config import SWEEP_MAX_WORKERS
from logger import get_logger

log = get_logger(__name__)

J = TypeVar("J")
R = TypeVar("R")


def run_jobs(fn: Callable[[J], R], jobs: Iterable[J], max_workers: Optional[int] = None) -> list[R]:
    """
    Выполняет fn(job) для каждой задачи. При max_workers ≤ 1 — в текущем
    процессе; fn и задачи должны быть сериализуемы через pickle.
    """
    jobs = list(jobs)
    workers = SWEEP_MAX_WORKERS if max_workers is None else max_workers
    workers = max(1, min(workers, len(jobs)))
    if workers == 1:
        return [fn(job) for job in jobs]

    log.info("Запуск %d задач в %d процессах", len(jobs), workers)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, jobs))
