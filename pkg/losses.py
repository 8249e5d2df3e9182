"""
Функции потерь на одном примере: значение, субградиент, целевая функция
по всему датасету и константы регулярности (G, L, λ, ρ, μ).

Линейные модели (hinge, logistic, least-squares) выражаются через
m = aᵀx: f(x; z) = φ(m, b) + (λ/2)‖x‖². Регуляризатор входит в каждый
пример, поэтому среднее по датасету учитывает его ровно один раз.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.special import expit

from config import REGULARIZER_CONVENTION
from core import BallDomain
from data import Dataset, Sample, ls_pl_modulus
from errors import ConfigError, DataError, DimensionMismatch
from logger import get_logger
from models import LossConstants, LossKind

log = get_logger(__name__)

# Константы pl-sine: f(x) = x² + 3 sin² x, f'' = 2 + 6 cos 2x ∈ [−4, 8].
PL_SINE_RHO = 4.0
PL_SINE_L = 8.0
PL_SINE_MU = 1.0 / 32.0

_CLASSIFICATION = {LossKind.HINGE, LossKind.HINGE_L2, LossKind.LOGISTIC}


def pl_sine_value(x, z=0.0) -> float:
    """Σ_j (x_j² + 3 sin² x_j) + ⟨z, x⟩."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(np.sum(x * x + 3.0 * np.sin(x) ** 2) + np.dot(np.broadcast_to(z, x.shape), x))


def pl_sine_grad(x, z=0.0) -> np.ndarray:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return 2.0 * x + 3.0 * np.sin(2.0 * x) + z


def _sigmoid(u: float) -> float:
    if u >= 0:
        return 1.0 / (1.0 + math.exp(-u))
    e = math.exp(u)
    return e / (1.0 + e)


@dataclass(frozen=True)
class LossModel:
    """
    Потери на примере с оракулами значения и субградиента.

    scale — делитель нормировки логистических потерь (ограниченный вариант
    лежит в [0, 1] на шаре); для остальных видов 1.
    """

    kind: LossKind
    lam: float = 0.0
    constants: LossConstants = field(default_factory=LossConstants)
    scale: float = 1.0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.kind in (LossKind.HINGE_L2, LossKind.LEAST_SQUARES_L2) and self.lam <= 0:
            raise ConfigError(f"{self.kind.value} needs lambda > 0")
        if self.kind in (LossKind.HINGE, LossKind.LEAST_SQUARES, LossKind.PL_SINE) and self.lam > 0:
            raise ConfigError(f"{self.kind.value} takes no regularizer; use the '+l2' kind")
        if self.kind is LossKind.PROXIMAL:
            raise ConfigError("proximal losses are built with prox_wrap")
        if self.scale <= 0:
            raise ConfigError("normalization scale must be positive")

    @property
    def is_classification(self) -> bool:
        return self.kind in _CLASSIFICATION

    @property
    def is_smooth(self) -> bool:
        return self.kind not in (LossKind.HINGE, LossKind.HINGE_L2)

    def with_constants(self, **updates) -> "LossModel":
        return replace(self, constants=self.constants.model_copy(update=updates))

    # ─── Связующая функция φ(m, b) и её производная по m ──────────────────────

    def _phi(self, m, b):
        if self.kind in (LossKind.HINGE, LossKind.HINGE_L2):
            return np.maximum(0.0, 1.0 - b * m)
        if self.kind is LossKind.LOGISTIC:
            return np.logaddexp(0.0, -b * m) / self.scale
        return 0.5 * (m - b) ** 2

    def _dphi(self, m, b):
        if self.kind in (LossKind.HINGE, LossKind.HINGE_L2):
            # на изломе b·m = 1 берётся нулевой субградиент
            return np.where(b * m < 1.0, -b, 0.0)
        if self.kind is LossKind.LOGISTIC:
            return -b * expit(-b * m) / self.scale
        return m - b

    def _dphi_scalar(self, m: float, b: float) -> float:
        if self.kind in (LossKind.HINGE, LossKind.HINGE_L2):
            return -b if b * m < 1.0 else 0.0
        if self.kind is LossKind.LOGISTIC:
            return -b * _sigmoid(-b * m) / self.scale
        return m - b

    # ─── Оракулы на одном примере ──────────────────────────────────────────────

    def _check(self, x: np.ndarray, dim: int) -> None:
        if x.shape[0] != dim:
            raise DimensionMismatch(f"parameter dimension {x.shape[0]} != feature dimension {dim}")

    def value(self, x: np.ndarray, z: Sample) -> float:
        self._check(x, z.dim)
        if self.kind is LossKind.PL_SINE:
            return pl_sine_value(x, z.dense())
        m = float(z.values @ x[z.indices])
        return float(self._phi(m, z.label)) + 0.5 * self.lam * float(x @ x)

    def subgrad(self, x: np.ndarray, z: Sample) -> np.ndarray:
        self._check(x, z.dim)
        if self.kind is LossKind.PL_SINE:
            return pl_sine_grad(x, z.dense())
        m = float(z.values @ x[z.indices])
        g = self.lam * x
        g[z.indices] += self._dphi_scalar(m, z.label) * z.values
        return g

    def step(self, x: np.ndarray, z: Sample, eta: float) -> float:
        """x ← x − η g на месте; возвращает ‖g‖. Стоимость O(nnz) плюс O(d) при λ > 0."""
        if self.kind is LossKind.PL_SINE:
            g = pl_sine_grad(x, z.dense())
            x -= eta * g
            return float(np.sqrt(g @ g))
        idx, val = z.indices, z.values
        m = float(val @ x[idx])
        c = self._dphi_scalar(m, z.label)
        lam = self.lam
        g_sq = c * c * float(val @ val)
        if lam:
            g_sq += 2.0 * c * lam * m + lam * lam * float(x @ x)
            x *= 1.0 - eta * lam
        if c:
            x[idx] -= (eta * c) * val
        return math.sqrt(max(g_sq, 0.0))

    # ─── Целевая функция по датасету ───────────────────────────────────────────

    def _check_dataset(self, x: np.ndarray, dataset: Dataset) -> None:
        if dataset.n == 0:
            raise DataError("objective over an empty dataset")
        self._check(x, dataset.d)

    def per_sample_values(self, x: np.ndarray, dataset: Dataset) -> np.ndarray:
        self._check_dataset(x, dataset)
        if self.kind is LossKind.PL_SINE:
            base = float(np.sum(x * x + 3.0 * np.sin(x) ** 2))
            return base + dataset.features @ x
        m = dataset.features @ x
        return self._phi(m, dataset.labels) + 0.5 * self.lam * float(x @ x)

    def objective(self, x: np.ndarray, dataset: Dataset) -> float:
        """F_S(x) = (1/n) Σ f(x; z_i)."""
        self._check_dataset(x, dataset)
        if self.kind is LossKind.PL_SINE:
            mean_z = np.asarray(dataset.features.mean(axis=0)).reshape(-1)
            return pl_sine_value(x, mean_z)
        m = dataset.features @ x
        return float(np.mean(self._phi(m, dataset.labels))) + 0.5 * self.lam * float(x @ x)

    def objective_gradient(self, x: np.ndarray, dataset: Dataset) -> np.ndarray:
        self._check_dataset(x, dataset)
        if self.kind is LossKind.PL_SINE:
            mean_z = np.asarray(dataset.features.mean(axis=0)).reshape(-1)
            return pl_sine_grad(x, mean_z)
        m = dataset.features @ x
        return dataset.features.T @ self._dphi(m, dataset.labels) / dataset.n + self.lam * x

    # ─── Константы ─────────────────────────────────────────────────────────────

    def gradient_bound(self, domain: BallDomain, dataset: Dataset) -> Optional[float]:
        """
        Граница ‖∇f(x; z)‖ по всем x из области и всем примерам датасета.
        None, если на неограниченной области граница не существует.
        """
        center = domain.center_for(dataset.d)
        norms = dataset.row_norms
        max_norm = float(norms.max()) if norms.size else 0.0
        if domain.unbounded:
            if self.kind in (LossKind.HINGE, LossKind.LOGISTIC) and self.lam == 0:
                return max_norm / self.scale
            return None
        r = domain.radius
        x_max = float(np.linalg.norm(center)) + r
        if self.kind is LossKind.PL_SINE:
            return 2.0 * x_max + 3.0 * math.sqrt(dataset.d) + max_norm
        if self.kind in (LossKind.LEAST_SQUARES, LossKind.LEAST_SQUARES_L2):
            residual = np.abs(dataset.features @ center - dataset.labels)
            data_term = float(np.max(norms * (residual + norms * r))) if norms.size else 0.0
            return data_term + self.lam * x_max
        return max_norm / self.scale + self.lam * x_max

    def smoothness(self, dataset: Dataset) -> Optional[float]:
        if self.kind in (LossKind.HINGE, LossKind.HINGE_L2):
            return None
        if self.kind is LossKind.PL_SINE:
            return PL_SINE_L
        max_sq = float(np.max(dataset.row_norms) ** 2) if dataset.n else 0.0
        if self.kind is LossKind.LOGISTIC:
            return max_sq / (4.0 * self.scale) + self.lam
        return max_sq + self.lam


# ═══════════════════════════════════════════════════════════════════════════════
# ПРОКСИМАЛЬНАЯ ОБЁРТКА
# ═══════════════════════════════════════════════════════════════════════════════

class ProximalLoss:
    """f_k(x; z) = f(x; z) + ‖x − anchor‖²/(2γ) — целевая функция стадии."""

    kind = LossKind.PROXIMAL

    def __init__(self, base: LossModel, anchor: np.ndarray, gamma: float, G: Optional[float] = None):
        if not gamma > 0:
            raise ConfigError(f"proximal weight gamma must be positive, got {gamma}")
        self.base = base
        self.anchor = np.array(anchor, dtype=np.float64)
        self.gamma = float(gamma)
        rho = base.constants.rho
        if rho is not None and rho > 0 and self.gamma > 1.0 / rho:
            log.warning("γ=%g > 1/ρ=%g: стадийная функция может быть невыпуклой", self.gamma, 1.0 / rho)
        base_L = base.constants.L
        strong = (1.0 / self.gamma - rho) if rho is not None else None
        self.constants = LossConstants(
            G=G,
            L=(base_L + 1.0 / self.gamma) if base_L is not None else None,
            strong_convexity=strong,
            rho=max(0.0, -strong) if strong is not None else None,
            mu=base.constants.mu,
        )
        self.lam = base.lam

    @property
    def is_classification(self) -> bool:
        return self.base.is_classification

    def _prox(self, x: np.ndarray) -> np.ndarray:
        return x - self.anchor

    def value(self, x: np.ndarray, z: Sample) -> float:
        diff = self._prox(x)
        return self.base.value(x, z) + float(diff @ diff) / (2.0 * self.gamma)

    def subgrad(self, x: np.ndarray, z: Sample) -> np.ndarray:
        return self.base.subgrad(x, z) + self._prox(x) / self.gamma

    def step(self, x: np.ndarray, z: Sample, eta: float) -> float:
        g = self.subgrad(x, z)
        x -= eta * g
        return float(np.sqrt(g @ g))

    def objective(self, x: np.ndarray, dataset: Dataset) -> float:
        diff = self._prox(x)
        return self.base.objective(x, dataset) + float(diff @ diff) / (2.0 * self.gamma)

    def objective_gradient(self, x: np.ndarray, dataset: Dataset) -> np.ndarray:
        return self.base.objective_gradient(x, dataset) + self._prox(x) / self.gamma

    def per_sample_values(self, x: np.ndarray, dataset: Dataset) -> np.ndarray:
        diff = self._prox(x)
        return self.base.per_sample_values(x, dataset) + float(diff @ diff) / (2.0 * self.gamma)

    def gradient_bound(self, domain: BallDomain, dataset: Dataset) -> Optional[float]:
        base = self.base.gradient_bound(domain, dataset)
        if base is None or domain.unbounded:
            return None
        center = domain.center_for(dataset.d)
        return base + (float(np.linalg.norm(center - self.anchor)) + domain.radius) / self.gamma


def prox_wrap(base: LossModel, anchor: np.ndarray, gamma: float) -> ProximalLoss:
    return ProximalLoss(base, anchor, gamma)


# ═══════════════════════════════════════════════════════════════════════════════
# ФУНКЦИИ-ОПЕРАЦИИ И ФАБРИКА
# ═══════════════════════════════════════════════════════════════════════════════

def loss_value(model: LossModel | ProximalLoss, x: np.ndarray, z: Sample) -> float:
    return model.value(x, z)


def loss_subgrad(model: LossModel | ProximalLoss, x: np.ndarray, z: Sample) -> np.ndarray:
    return model.subgrad(x, z)


def full_objective(model: LossModel | ProximalLoss, x: np.ndarray, dataset: Dataset) -> float:
    return model.objective(x, dataset)


def logistic_normalization(dataset: Dataset, domain: BallDomain, lam: float) -> float:
    """
    Делитель C, при котором log(1 + e^{−bm})/C + (λ/2)‖x‖² ∈ [0, 1] на шаре.
    """
    if domain.unbounded:
        raise ConfigError("bounded logistic loss needs a bounded domain")
    x_max = float(np.linalg.norm(domain.center_for(dataset.d))) + domain.radius
    reg_max = 0.5 * lam * x_max**2
    if reg_max >= 1.0:
        raise ConfigError(f"regularizer reaches {reg_max:.3g} >= 1 on the domain; loss cannot be bounded in [0, 1]")
    worst = float(np.logaddexp(0.0, float(np.max(dataset.row_norms)) * x_max))
    return worst / (1.0 - reg_max)


def make_loss(
    kind: LossKind | str,
    lam: float = 0.0,
    dataset: Optional[Dataset] = None,
    domain: Optional[BallDomain] = None,
    bounded: bool = False,
    mu: Optional[float] = None,
) -> LossModel:
    """
    Собирает модель потерь и вычисляет её константы по датасету и области.
    Неизвестные константы остаются None.
    """
    kind = LossKind(kind)
    domain = domain or BallDomain.whole_space()
    scale = 1.0
    if bounded:
        if kind is not LossKind.LOGISTIC:
            raise ConfigError("only the logistic loss has a bounded [0, 1] variant")
        if dataset is None:
            raise ConfigError("bounded logistic loss needs the dataset")
        scale = logistic_normalization(dataset, domain, lam)
        log.info("Логистические потери нормированы делителем C=%.6g", scale)

    model = LossModel(kind, lam, LossConstants(), scale)
    if dataset is None:
        return model

    rho = PL_SINE_RHO if kind is LossKind.PL_SINE else 0.0
    strong = lam if lam > 0 else None
    if mu is None:
        if kind is LossKind.PL_SINE:
            mu = PL_SINE_MU
        elif kind is LossKind.LEAST_SQUARES:
            mu = ls_pl_modulus(dataset)
        elif strong is not None:
            mu = strong
    constants = LossConstants(
        G=model.gradient_bound(domain, dataset),
        L=model.smoothness(dataset),
        strong_convexity=strong,
        rho=rho,
        mu=mu,
        bounded_unit=bounded,
        normalization=scale,
    )
    if lam > 0:
        log.debug("Регуляризатор: %s", REGULARIZER_CONVENTION)
    return replace(model, constants=constants)


def check_gradient(model: LossModel | ProximalLoss, x: np.ndarray, z: Sample, h: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Центральные конечные разности против аналитического градиента."""
    fd = np.empty_like(x)
    for j in range(x.shape[0]):
        e = np.zeros_like(x)
        e[j] = h
        fd[j] = (model.value(x + e, z) - model.value(x - e, z)) / (2.0 * h)
    return fd, model.subgrad(x, z)
