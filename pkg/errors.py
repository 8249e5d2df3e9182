"""
Иерархия исключений проекта.

Каждое исключение несёт код выхода CLI:
2 — ошибка конфигурации, 3 — ошибка данных, 4 — численный сбой.
"""

from __future__ import annotations


class PiwaError(Exception):
    exit_code = 1


# ─── Конфигурация ──────────────────────────────────────────────────────────────

class ConfigError(PiwaError, ValueError):
    exit_code = 2


class BoundRefusal(ConfigError):
    """Оценка не может быть вычислена: не хватает входов или нарушено условие теоремы."""


# ─── Данные ────────────────────────────────────────────────────────────────────

class DataError(PiwaError, ValueError):
    exit_code = 3


class LibsvmParseError(DataError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} at line {line}")
        self.line = line


class DimensionMismatch(DataError):
    pass


# ─── Численные сбои ────────────────────────────────────────────────────────────

class NumericError(PiwaError, ArithmeticError):
    exit_code = 4


class DivergenceError(NumericError):
    def __init__(self, message: str, last_finite_t: int, stage: int | None = None):
        prefix = f"stage {stage}: " if stage is not None else ""
        super().__init__(f"{prefix}{message} (last finite t={last_finite_t})")
        self.last_finite_t = last_finite_t
        self.stage = stage


class OverflowGuardError(NumericError):
    pass


class GradientBoundViolation(NumericError):
    pass


class AveragingStateError(NumericError):
    pass


class RateFitError(NumericError):
    pass
