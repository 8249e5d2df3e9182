"""
Логирование экспериментов.

Все модули пишут в общий файл logs/piwa.log (с ротацией) и в stderr.
Строки конкретного прогона помечаются контекстом [fp=… seed=…],
так что параллельные процессы свипа можно разобрать по одному файлу.
Уровень: PIWA_LOG_LEVEL или --log-level.
"""

from __future__ import annotations

import logging
import sys
from logging.handlers import RotatingFileHandler
from typing import Any

from config import LOG_FILE, LOG_LEVEL

_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)-12s | %(message)s"
_DATE_FMT = "%Y-%m-%d %H:%M:%S"

_formatter = logging.Formatter(_FORMAT, datefmt=_DATE_FMT)

_file_handler = RotatingFileHandler(LOG_FILE, maxBytes=10 * 1024 * 1024, backupCount=5, encoding="utf-8", delay=True)
_file_handler.setFormatter(_formatter)

# stdout занят результатами fit-rate
_console_handler = logging.StreamHandler(sys.stderr)
_console_handler.setFormatter(_formatter)

_registry: dict[str, logging.Logger] = {}


def get_logger(name: str) -> logging.Logger:
    logger = _registry.get(name)
    if logger is None:
        logger = logging.getLogger(name)
        logger.setLevel(LOG_LEVEL)
        logger.addHandler(_file_handler)
        logger.addHandler(_console_handler)
        logger.propagate = False
        _registry[name] = logger
    return logger


def set_level(level: str) -> None:
    """Меняет уровень всех логгеров, созданных через get_logger."""
    for logger in _registry.values():
        logger.setLevel(level.upper())


class RunContextAdapter(logging.LoggerAdapter):
    """Префикс [ключ=значение …] перед каждым сообщением прогона."""

    def process(self, msg: Any, kwargs: dict) -> tuple[Any, dict]:
        tag = " ".join(f"{key}={value}" for key, value in self.extra.items())
        return f"[{tag}] {msg}", kwargs


def run_logger(name: str, **context: Any) -> RunContextAdapter:
    return RunContextAdapter(get_logger(name), context)
