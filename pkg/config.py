"""
Конфигурация проекта «SGD-PIWA: усреднение итераций и устойчивость».

Здесь собраны пути, настройки окружения (.env), численные константы,
форматы выходных CSV и загрузчик файлов конфигурации экспериментов,
чтобы менять параметры прогонов без правки кода.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from pydantic import ValidationError
from pydantic_settings import BaseSettings, SettingsConfigDict

from errors import ConfigError
from models import ExperimentConfig


class RuntimeSettings(BaseSettings):
    """Настройки окружения; переменные с префиксом PIWA_ или файл .env."""

    model_config = SettingsConfigDict(env_prefix="PIWA_", env_file=".env", extra="ignore")

    log_level: str = "INFO"
    logs_dir: str = ""
    results_dir: str = ""
    sweep_max_workers: int = max(1, (os.cpu_count() or 2) - 1)
    stage_deviation_coef: float = 4.0


load_dotenv()
settings = RuntimeSettings()

# ─── Пути проекта ──────────────────────────────────────────────────────────────
BASE_DIR = Path(__file__).resolve().parent
LOGS_DIR = Path(settings.logs_dir) if settings.logs_dir else BASE_DIR / "logs"
RESULTS_DIR = Path(settings.results_dir) if settings.results_dir else BASE_DIR / "results"

LOGS_DIR.mkdir(parents=True, exist_ok=True)

# ─── Логирование ───────────────────────────────────────────────────────────────
LOG_LEVEL = settings.log_level.upper()
LOG_FILE = LOGS_DIR / "piwa.log"

# ─── Численные константы ───────────────────────────────────────────────────────
# Все вычисления в float64; t^α и степенные суммы не должны превышать этот порог.
OVERFLOW_LIMIT = 1e300
LOG_OVERFLOW_LIMIT = math.log(OVERFLOW_LIMIT)

# Допуск проверки объявленной константы G во время прогона (относительный).
GRADIENT_BOUND_RTOL = 1e-9
# Допуск допустимости итераций после проекции.
FEASIBILITY_TOL = 1e-12

PROBE_SET_MIN = 1000
SWEEP_MAX_WORKERS = settings.sweep_max_workers

# Коэффициент при отклонении в оценке одной стадии (2 или 4, консервативно 4).
STAGE_DEVIATION_COEF = settings.stage_deviation_coef

# ─── Форматы выходных файлов ───────────────────────────────────────────────────
TRACE_CSV_HEADER: list[str] = [
    "fingerprint", "seed", "scheme", "alpha", "t",
    "obj_avg", "obj_last", "test_metric", "wall_ms",
]
STABILITY_CSV_HEADER: list[str] = [
    "fingerprint", "seed", "alpha", "trial",
    "param_dev_avg", "param_dev_last", "loss_dev_max", "thm_bound",
]
SUMMARY_CSV_HEADER: list[str] = [
    "fingerprint", "seed", "scheme", "alpha", "eta1", "T",
    "final_obj_avg", "final_test_metric", "best_test_metric", "best_test_t",
    "gap_baseline", "baseline_kind", "rate_slope", "rate_intercept", "rate_r2", "bound_final",
]
STAGEWISE_CSV_HEADER: list[str] = [
    "fingerprint", "seed", "stage", "eps_k", "eta_k", "T_k", "D_k",
    "objective", "gap", "target",
]

# Соглашение о регуляризаторе: (λ/2)‖x‖², так что модуль сильной выпуклости равен λ.
REGULARIZER_CONVENTION = "(lambda/2)*||x||^2"


# ═══════════════════════════════════════════════════════════════════════════════
# ФАЙЛЫ КОНФИГУРАЦИИ ЭКСПЕРИМЕНТОВ
# ═══════════════════════════════════════════════════════════════════════════════
#
# Грамматика (см. docs/CONFIG_FORMAT.md):
#   строка   := ключ "=" значение | комментарий | пусто
#   ключ     := секция("." секция)*
#   значение := скаляр | скаляр ("," скаляр)+
# Комментарий начинается с '#'. Вложенных include нет.

def _parse_value(raw: str) -> Any:
    raw = raw.strip()
    if "," in raw:
        return [item.strip() for item in raw.split(",") if item.strip()]
    return raw


def parse_experiment_config(text: str, source: str = "<text>") -> ExperimentConfig:
    """Разбирает плоский key = value текст в ExperimentConfig."""
    tree: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or any(not part for part in key.split(".")):
            raise ConfigError(f"{source}:{lineno}: malformed key {key!r}")
        node = tree
        parts = key.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"{source}:{lineno}: key {key!r} clashes with a scalar")
            node = child
        if parts[-1] in node:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        node[parts[-1]] = _parse_value(value)

    # Одиночные значения для полей-списков (seeds = 1) приводятся моделью.
    try:
        return ExperimentConfig.model_validate(tree)
    except ValidationError as exc:
        raise ConfigError(f"{source}: invalid config\n{exc}") from exc


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_experiment_config(path.read_text(encoding="utf-8"), source=str(path))


def config_fingerprint(config: ExperimentConfig) -> str:
    """Стабильный хеш конфигурации (секция output не учитывается)."""
    blob = json.dumps(
        config.model_dump(mode="json", exclude={"output"}),
        sort_keys=True,
        ensure_ascii=False,
    )
    return hashlib.md5(blob.encode()).hexdigest()[:12]
