"""
Теоретические оценки в замкнутой форме: скорость оптимизации и
равномерная устойчивость для выпуклого, сильно выпуклого и стадийного
случаев, а также неравенства для степенных сумм.

Оценки только аннотируют результаты и никогда не останавливают прогон.
Каждая функция объявляет нужные входы; если какой-то неизвестен (None),
она отказывается считать (BoundRefusal).
"""

from __future__ import annotations

import functools
import math
from typing import Callable, Iterable, Optional

import numpy as np

from config import LOG_OVERFLOW_LIMIT, STAGE_DEVIATION_COEF
from errors import BoundRefusal, OverflowGuardError
from logger import get_logger
from models import BoundInputs, StageParams

log = get_logger(__name__)


def requires(*names: str) -> Callable:
    """Помечает оценку списком обязательных полей BoundInputs и проверяет их."""

    def decorator(fn):
        @functools.wraps(fn)
        def wrapper(inputs: BoundInputs, *args, **kwargs):
            missing = [name for name in names if getattr(inputs, name) is None]
            if missing:
                raise BoundRefusal(f"{fn.__name__}: unknown {', '.join(missing)}")
            return fn(inputs, *args, **kwargs)

        wrapper.requires = names
        return wrapper

    return decorator


def _exp(log_value: float, what: str) -> float:
    if log_value > LOG_OVERFLOW_LIMIT:
        raise OverflowGuardError(f"{what} exceeds 1e300")
    return math.exp(log_value)


# ─── Выпуклый случай ───────────────────────────────────────────────────────────

@requires("alpha", "D", "G", "eta1", "T")
def bound_opt_convex(inputs: BoundInputs) -> float:
    """Ошибка оптимизации при η_t = η₁/√t; две ветви по α."""
    a, D, G, eta1, T = inputs.alpha, inputs.D, inputs.G, inputs.eta1, inputs.T
    first = (a + 1.0) * D**2 / (2.0 * eta1 * math.sqrt(T))
    if a < 0.5:
        second = (a + 1.0) * eta1 * G**2 / ((2.0 * a + 1.0) * math.sqrt(T))
    else:
        second = (a + 1.0) * eta1 * G**2 / math.sqrt(T)
    return first + second


@requires("alpha", "G", "n", "T", "eta1")
def bound_stab_convex(inputs: BoundInputs) -> float:
    """4η₁G²(α+1)(T+1)^{α+1.5} / (n(α+1.5)T^{α+1}); требует η₁ ≤ 2/L."""
    a, G, n, T, eta1 = inputs.alpha, inputs.G, inputs.n, inputs.T, inputs.eta1
    if inputs.L is None:
        log.warning("bound_stab_convex: L неизвестна, условие η₁ ≤ 2/L не проверено")
    elif eta1 > 2.0 / inputs.L:
        raise BoundRefusal(f"bound_stab_convex: eta1={eta1:g} > 2/L={2.0 / inputs.L:g}")
    log_value = (
        math.log(4.0 * eta1 * G**2 * (a + 1.0) / (n * (a + 1.5)))
        + (a + 1.5) * math.log(T + 1.0)
        - (a + 1.0) * math.log(T)
    )
    return _exp(log_value, "convex stability bound")


# ─── Сильно выпуклый случай ────────────────────────────────────────────────────

@requires("alpha", "G", "lam", "T")
def bound_opt_strongly(inputs: BoundInputs) -> float:
    """Ошибка оптимизации при η_t = 2(α+1)/(λt): ветви α=0, 0<α<1, α≥1."""
    a, G, lam, T = inputs.alpha, inputs.G, inputs.lam, inputs.T
    if a == 0:
        return G**2 * (1.0 + math.log(T)) / (lam * T)
    if a < 1:
        return (a + 1.0) ** 2 * G**2 / (a * lam * T)
    log_value = math.log((a + 1.0) ** 2 * G**2 / (a * lam)) + a * math.log(T + 1.0) - (a + 1.0) * math.log(T)
    return _exp(log_value, "strongly convex rate bound")


@requires("alpha", "G", "lam", "n")
def bound_stab_strongly(inputs: BoundInputs) -> tuple[float, float]:
    """(t₀, t₀/n + 4G²(α+1)/(λn)), t₀ = max{2(α+1)G/λ, 1}; потери должны лежать в [0, 1]."""
    if not inputs.loss_bounded_unit:
        raise BoundRefusal("bound_stab_strongly: loss is not declared bounded in [0, 1]")
    a, G, lam, n = inputs.alpha, inputs.G, inputs.lam, inputs.n
    t0 = max(2.0 * (a + 1.0) * G / lam, 1.0)
    return t0, t0 / n + 4.0 * G**2 * (a + 1.0) / (lam * n)


# ─── Стадийный алгоритм ────────────────────────────────────────────────────────

@requires("S_prev", "n", "L", "c", "alpha", "T")
def bound_stab_stagewise(inputs: BoundInputs) -> float:
    """S_{K−1}/n + ((1 + 1/(Lc))/(n−1))·(2(α+1)cL²)^{1/(1+Lc)}·T^{Lc/(1+Lc)}."""
    S, n, L, c, a, T = inputs.S_prev, inputs.n, inputs.L, inputs.c, inputs.alpha, inputs.T
    if n < 2:
        raise BoundRefusal(f"bound_stab_stagewise: needs n >= 2, got {n}")
    Lc = L * c
    log_tail = (
        math.log((1.0 + 1.0 / Lc) / (n - 1.0))
        + math.log(2.0 * (a + 1.0) * c * L**2) / (1.0 + Lc)
        + (Lc / (1.0 + Lc)) * math.log(T)
    )
    return S / n + _exp(log_tail, "stagewise stability bound")


@requires("alpha", "eps_prev", "eta", "mu", "T", "Ghat_sq", "D", "delta")
def bound_stage(inputs: BoundInputs, coefficient: Optional[float] = None) -> float:
    """
    Оценка F_k(x_k) − F_k(x*) на одной стадии:
    2(α+1)ε_{k−1}/(ημT) + ηĜ²/2 + coef·(α+1)ĜD√(2 ln(1/δ))/√T.

    coef — 2 или 4; по умолчанию STAGE_DEVIATION_COEF.
    """
    coefficient = STAGE_DEVIATION_COEF if coefficient is None else coefficient
    a, eps, eta, mu, T = inputs.alpha, inputs.eps_prev, inputs.eta, inputs.mu, inputs.T
    G_hat = math.sqrt(inputs.Ghat_sq)
    return (
        2.0 * (a + 1.0) * eps / (eta * mu * T)
        + eta * inputs.Ghat_sq / 2.0
        + coefficient * (a + 1.0) * G_hat * inputs.D * math.sqrt(2.0 * math.log(1.0 / inputs.delta)) / math.sqrt(T)
    )


def stagewise_iterations(stages: Iterable[StageParams]) -> int:
    """S_{K−1} = Σ_{k<K} T_k."""
    stages = list(stages)
    return sum(stage.T_k for stage in stages[:-1])


def bound_pl_distance(gap: float, mu: float) -> float:
    """‖x − x*‖² ≤ (F(x) − F*)/(2μ) для функции с условием PL."""
    if mu <= 0:
        raise BoundRefusal(f"bound_pl_distance: mu must be positive, got {mu}")
    return max(gap, 0.0) / (2.0 * mu)


def bound_param_deviation(G: float, n: int, steps) -> float:
    """(2G/n)·Σ_{t<T} η_t — граница расхождения последних итераций сопряжённых прогонов."""
    return 2.0 * G / n * math.fsum(np.asarray(steps, dtype=np.float64))


def bound_series(bound: Callable[[BoundInputs], float], inputs: BoundInputs, Ts: Iterable[int]) -> list[float]:
    """Значения оценки в каждой контрольной точке T."""
    return [bound(inputs.model_copy(update={"T": float(T)})) for T in Ts]


# ═══════════════════════════════════════════════════════════════════════════════
# СТЕПЕННЫЕ СУММЫ
# ═══════════════════════════════════════════════════════════════════════════════

def power_sum(S: int, alpha: float) -> float:
    """Σ_{s=1..S} s^α прямым суммированием."""
    if S < 1:
        raise BoundRefusal(f"power_sum needs S >= 1, got {S}")
    if alpha * math.log(S) > LOG_OVERFLOW_LIMIT:
        raise OverflowGuardError(f"S^alpha overflows for S={S}, alpha={alpha}")
    return math.fsum(np.arange(1, S + 1, dtype=np.float64) ** alpha)


def power_sums(S_max: int, alpha: float) -> np.ndarray:
    """Σ_{s=1..S} s^α для всех S = 1..S_max."""
    if alpha * math.log(max(S_max, 1)) > LOG_OVERFLOW_LIMIT:
        raise OverflowGuardError(f"S^alpha overflows for S={S_max}, alpha={alpha}")
    return np.cumsum(np.arange(1, S_max + 1, dtype=np.float64) ** alpha)


def power_sum_brackets(S: int, alpha: float) -> dict[str, tuple[float, float]]:
    """
    Стандартные неравенства для степенных сумм как пары (левая, правая часть),
    только те, что применимы при данном α:
      lower           S^{α+1}/(α+1) ≤ Σ s^α                (α > 0)
      upper           Σ s^α ≤ (S+1)^{α+1}/(α+1)            (α > 0)
      shifted_linear  Σ s^{α−1} ≤ S^α                      (α ≥ 1)
      shifted_power   Σ s^{α−1} ≤ S^α/α                    (0 < α < 1)
      harmonic        Σ 1/s ≤ ln S + 1
    """
    out: dict[str, tuple[float, float]] = {}
    if alpha > 0:
        total = power_sum(S, alpha)
        out["lower"] = (S ** (alpha + 1) / (alpha + 1), total)
        out["upper"] = (total, (S + 1) ** (alpha + 1) / (alpha + 1))
        shifted = power_sum(S, alpha - 1)
        if alpha >= 1:
            out["shifted_linear"] = (shifted, float(S) ** alpha)
        else:
            out["shifted_power"] = (shifted, S**alpha / alpha)
    out["harmonic"] = (power_sum(S, -1.0), math.log(S) + 1.0)
    return out
