"""
Схемы усреднения итераций как инкрементальные автоматы:
last, uniform, PIWA(α), suffix, poly-decay, EMA.

Все схемы обновляются по одной итерации за раз и хранят O(d) памяти.
Взвешенные схемы используют форму mean += (w_t/W_t)(x_t − mean):
промежуточные величины остаются ограниченными даже при W_t ~ 1e100.
"""

from __future__ import annotations

import copy
import math
from typing import Optional

import numpy as np

from config import LOG_OVERFLOW_LIMIT
from errors import AveragingStateError, ConfigError, OverflowGuardError
from models import Scheme, SchemeSettings


def piwa_weight(t: int, alpha: float) -> float:
    """w_t = t^α = exp(α ln t) с проверкой t^α ≤ 1e300."""
    exponent = alpha * math.log(t)
    if exponent > LOG_OVERFLOW_LIMIT:
        raise OverflowGuardError(f"weight t^alpha overflows at t={t}, alpha={alpha}")
    return math.exp(exponent)


def suffix_window(horizon: int, fraction: float) -> int:
    """Число последних итераций, которые усредняет suffix: ⌈fraction·T⌉."""
    return max(1, math.ceil(fraction * horizon - 1e-9))


class AveragingState:
    def __init__(
        self,
        scheme: Scheme | str = Scheme.PIWA,
        alpha: float = 0.0,
        fraction: float = 1.0,
        eta_pd: float = 0.0,
        beta: float = 0.9,
        horizon: Optional[int] = None,
    ):
        self.scheme = Scheme(scheme)
        if alpha < 0:
            raise ConfigError(f"alpha must be non-negative, got {alpha}")
        if not 0.0 < fraction <= 1.0:
            raise ConfigError(f"suffix fraction must lie in (0, 1], got {fraction}")
        if eta_pd < 0:
            raise ConfigError(f"poly-decay parameter must be non-negative, got {eta_pd}")
        if not 0.0 < beta < 1.0:
            raise ConfigError(f"EMA beta must lie in (0, 1), got {beta}")
        if self.scheme is Scheme.SUFFIX and horizon is None:
            raise ConfigError("suffix averaging needs the horizon T up front")
        self.alpha = 0.0 if self.scheme is Scheme.UNIFORM else float(alpha)
        self.fraction = fraction
        self.eta_pd = eta_pd
        self.beta = beta
        self.horizon = horizon
        self.mean: Optional[np.ndarray] = None
        self.weight_sum = 0.0
        self.t = 0
        self._last: Optional[np.ndarray] = None
        self._window_start = (horizon - suffix_window(horizon, fraction) + 1) if self.scheme is Scheme.SUFFIX else 1

    @classmethod
    def from_settings(cls, settings: SchemeSettings, horizon: Optional[int] = None) -> "AveragingState":
        return cls(settings.scheme, settings.alpha, settings.fraction, settings.eta_pd, settings.beta, horizon)

    def update(self, x: np.ndarray, t: int) -> "AveragingState":
        if t != self.t + 1:
            raise AveragingStateError(f"non-sequential update: got t={t} after t={self.t}")
        if self.horizon is not None and t > self.horizon:
            raise AveragingStateError(f"update t={t} past the horizon T={self.horizon}")
        self.t = t
        scheme = self.scheme

        if scheme is Scheme.LAST:
            self.mean = x.copy()
        elif scheme in (Scheme.PIWA, Scheme.UNIFORM):
            w = piwa_weight(t, self.alpha)
            self.weight_sum += w
            if self.mean is None:
                self.mean = x.copy()
            else:
                self.mean += (w / self.weight_sum) * (x - self.mean)
        elif scheme is Scheme.SUFFIX:
            if t < self._window_start:
                self._last = x.copy()
            else:
                self.weight_sum += 1.0
                if self.mean is None:
                    self.mean = x.copy()
                else:
                    self.mean += (x - self.mean) / self.weight_sum
        elif scheme is Scheme.POLY_DECAY:
            if self.mean is None:
                self.mean = x.copy()
            else:
                c = (self.eta_pd + 1.0) / (t + self.eta_pd)
                self.mean += c * (x - self.mean)
        else:  # EMA, старт с x_1 без поправки смещения
            if self.mean is None:
                self.mean = x.copy()
            else:
                self.mean *= self.beta
                self.mean += (1.0 - self.beta) * x
        return self

    def peek(self) -> np.ndarray:
        """Текущая оценка для контрольных точек; до окна suffix — последняя итерация."""
        if self.t == 0:
            raise AveragingStateError("no updates yet")
        if self.mean is None:
            return self._last.copy()
        return self.mean.copy()

    def finalize(self) -> np.ndarray:
        if self.t == 0:
            raise AveragingStateError("no updates yet")
        if self.scheme is Scheme.SUFFIX and self.t != self.horizon:
            raise AveragingStateError(f"suffix average finalized at t={self.t} before the horizon T={self.horizon}")
        return self.mean.copy()

    def snapshot(self) -> "AveragingState":
        return copy.deepcopy(self)

    def __repr__(self) -> str:
        return f"AveragingState(scheme={self.scheme.value}, alpha={self.alpha:g}, t={self.t})"


def avg_update(state: AveragingState, x_t: np.ndarray, t: int) -> AveragingState:
    return state.update(x_t, t)


def avg_finalize(state: AveragingState) -> np.ndarray:
    return state.finalize()


# ─── Пакетные формулы (эталон для инкрементальных схем) ───────────────────────

def batch_weights(T: int, settings: SchemeSettings) -> np.ndarray:
    """Нормированные веса итераций x_1..x_T, сумма равна 1."""
    t = np.arange(1, T + 1, dtype=np.float64)
    scheme = settings.scheme
    if scheme is Scheme.LAST:
        w = np.zeros(T)
        w[-1] = 1.0
    elif scheme in (Scheme.PIWA, Scheme.UNIFORM):
        alpha = settings.alpha if scheme is Scheme.PIWA else 0.0
        w = np.exp(alpha * (np.log(t) - math.log(T)))
    elif scheme is Scheme.SUFFIX:
        w = np.zeros(T)
        w[T - suffix_window(T, settings.fraction):] = 1.0
    elif scheme is Scheme.POLY_DECAY:
        c = (settings.eta_pd + 1.0) / (t + settings.eta_pd)
        c[0] = 1.0
        keep = np.append(np.cumprod((1.0 - c[1:])[::-1])[::-1], 1.0)
        w = c * keep
    else:
        w = (1.0 - settings.beta) * settings.beta ** (T - t)
        w[0] = settings.beta ** (T - 1)
    return w / w.sum()


def batch_average(xs: np.ndarray, settings: SchemeSettings) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim == 1:
        xs = xs[:, None]
    return batch_weights(xs.shape[0], settings) @ xs


def h_value(alpha: float, F_values) -> float:
    """H_T(α) = Σ t^α F(x_t) / Σ t^α, t с единицы."""
    F = np.asarray(F_values, dtype=np.float64)
    if F.size == 0:
        raise ConfigError("h_value needs at least one value")
    T = F.shape[0]
    if alpha * math.log(T) > LOG_OVERFLOW_LIMIT:
        raise OverflowGuardError(f"T^alpha overflows for T={T}, alpha={alpha}")
    w = np.exp(alpha * (np.log(np.arange(1, T + 1, dtype=np.float64)) - math.log(T)))
    return float(w @ F / w.sum())
