"""
Базовые примитивы: векторы параметров, проекция на шар и
детерминированный поток индексов выборки.

Вектор параметров — обычный плотный np.ndarray float64.
Поток индексов воспроизводим по (seed, n): два потока с одинаковыми
параметрами выдают одну и ту же последовательность, что нужно
для сопряжённых прогонов в модуле устойчивости.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from config import FEASIBILITY_TOL
from errors import ConfigError, NumericError

# Индексы генерируются блоками; блок b полностью определяется (seed, b).
STREAM_BLOCK = 4096

# Пространства ключей SeedSequence: поток индексов, генераторы данных и прочее.
_STREAM_TAG = 0
_RNG_TAG = 1


def as_vector(x, name: str = "x") -> np.ndarray:
    """Приводит вход к плотному float64-вектору и проверяет конечность."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{name} has non-finite entries")
    return arr


# ─── Допустимая область ────────────────────────────────────────────────────────

@dataclass(frozen=True)
class BallDomain:
    """Евклидов шар B(center, radius); radius=None — вся ℝ^d."""

    radius: Optional[float] = None
    center: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        if self.radius is not None and not (self.radius > 0 and np.isfinite(self.radius)):
            raise ConfigError(f"ball radius must be positive and finite, got {self.radius}")
        if self.center is not None:
            object.__setattr__(self, "center", as_vector(self.center, "center").copy())

    @classmethod
    def ball(cls, radius: float, center=None) -> "BallDomain":
        return cls(radius=float(radius), center=center)

    @classmethod
    def whole_space(cls) -> "BallDomain":
        return cls(radius=None)

    @property
    def unbounded(self) -> bool:
        return self.radius is None

    def center_for(self, d: int) -> np.ndarray:
        if self.center is None:
            return np.zeros(d)
        if self.center.shape[0] != d:
            raise ConfigError(f"domain center has dimension {self.center.shape[0]}, expected {d}")
        return self.center

    def distance(self, x: np.ndarray) -> float:
        if self.center is None:
            return float(np.linalg.norm(x))
        return float(np.linalg.norm(x - self.center))

    def contains(self, x: np.ndarray, tol: float = FEASIBILITY_TOL) -> bool:
        if self.unbounded:
            return True
        return self.distance(x) <= self.radius + tol

    def describe(self) -> str:
        if self.unbounded:
            return "unbounded"
        where = "0" if self.center is None else "anchor"
        return f"ball(center={where}, radius={self.radius:g})"


def project_ball(x: np.ndarray, domain: BallDomain) -> np.ndarray:
    """
    Π_Ω[x] для шара: точку внутри возвращает как есть,
    внешнюю — радиально на границу.

    Точки, лежащие на границе с точностью округления, считаются внутренними,
    поэтому повторная проекция ничего не меняет.
    """
    if not np.all(np.isfinite(x)):
        raise NumericError("cannot project a non-finite point")
    if domain.unbounded:
        return x
    center = domain.center_for(x.shape[0])
    diff = x - center
    dist = float(np.linalg.norm(diff))
    if dist <= domain.radius * (1.0 + FEASIBILITY_TOL):
        return x
    return center + (domain.radius / dist) * diff


# ─── Поток индексов ────────────────────────────────────────────────────────────

def _block_generator(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(_STREAM_TAG, block))))


class SampleStream:
    """
    Воспроизводимая последовательность i_1, i_2, … равномерно из {0, …, n−1}.

    Позиция p соответствует индексу номер p в блоке p // STREAM_BLOCK,
    поэтому поток можно восстановить с любой позиции без прогона с нуля.
    """

    def __init__(self, seed: int, n: int, position: int = 0):
        if n < 1:
            raise ConfigError("sample stream needs n >= 1")
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        if position < 0:
            raise ConfigError(f"stream position must be non-negative, got {position}")
        self.seed = int(seed)
        self.n = int(n)
        self.position = int(position)
        self._block_id = -1
        self._block: np.ndarray | None = None

    @classmethod
    def replay(cls, seed: int, n: int, position: int = 0) -> "SampleStream":
        return cls(seed, n, position)

    def fork(self) -> "SampleStream":
        """Независимая копия с той же позицией."""
        return SampleStream(self.seed, self.n, self.position)

    def _load(self, block: int) -> np.ndarray:
        if block != self._block_id:
            self._block = _block_generator(self.seed, block).integers(0, self.n, size=STREAM_BLOCK)
            self._block_id = block
        return self._block

    def next_index(self) -> int:
        block, offset = divmod(self.position, STREAM_BLOCK)
        value = int(self._load(block)[offset])
        self.position += 1
        return value

    def take(self, k: int) -> np.ndarray:
        """Следующие k индексов одним массивом."""
        out = np.empty(k, dtype=np.int64)
        filled = 0
        while filled < k:
            block, offset = divmod(self.position, STREAM_BLOCK)
            chunk = self._load(block)[offset:offset + (k - filled)]
            out[filled:filled + chunk.shape[0]] = chunk
            filled += chunk.shape[0]
            self.position += chunk.shape[0]
        return out

    def __repr__(self) -> str:
        return f"SampleStream(seed={self.seed}, n={self.n}, position={self.position})"


def next_index(stream: SampleStream) -> int:
    return stream.next_index()


# ─── Разделение зёрен ──────────────────────────────────────────────────────────

def derive_seed(seed: int, *keys: int) -> int:
    """Дочернее 63-битное зерно для пары (seed, keys): прогоны свипа, испытания, соседи."""
    state = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys)).generate_state(1, np.uint64)
    return int(state[0]) >> 1


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=int(seed), spawn_key=(_RNG_TAG, *(int(k) for k in keys))))
    )
