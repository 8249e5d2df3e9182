"""
Данные: разбор формата LIBSVM, синтетические задачи с известным
оптимумом и разбиение train/test.

Признаки хранятся в scipy.sparse.csr_matrix (индексы 0-based внутри,
1-based в файле), метки — плотный вектор.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, NamedTuple, Optional

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from core import make_rng
from errors import ConfigError, DataError, DimensionMismatch, LibsvmParseError
from logger import get_logger
from models import SyntheticKind, SyntheticSpec

log = get_logger(__name__)

CLASSIFICATION = "classification"
REGRESSION = "regression"


class Sample(NamedTuple):
    """Один пример z = (a, b): разреженные признаки (0-based) и метка."""

    indices: np.ndarray
    values: np.ndarray
    label: float
    dim: int

    @classmethod
    def from_dense(cls, features, label: float) -> "Sample":
        vec = np.asarray(features, dtype=np.float64)
        nz = np.flatnonzero(vec)
        return cls(nz.astype(np.int32), vec[nz], float(label), vec.shape[0])

    def dense(self) -> np.ndarray:
        out = np.zeros(self.dim)
        out[self.indices] = self.values
        return out


@dataclass(frozen=True, eq=False)
class Dataset:
    features: sp.csr_matrix
    labels: np.ndarray
    task: str = CLASSIFICATION
    provenance: dict[str, Any] = field(default_factory=dict)
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        X = sp.csr_matrix(self.features, dtype=np.float64)
        X.sort_indices()
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.float64).reshape(-1))
        if X.shape[0] != self.labels.shape[0]:
            raise DataError(f"{X.shape[0]} feature rows but {self.labels.shape[0]} labels")
        if self.task == CLASSIFICATION and self.labels.size and not np.all(np.abs(self.labels) == 1.0):
            raise DataError("classification labels must be -1 or +1")

    @classmethod
    def from_dense(cls, A, b, task: str = REGRESSION, **kwargs) -> "Dataset":
        return cls(sp.csr_matrix(np.atleast_2d(np.asarray(A, dtype=np.float64))), np.asarray(b), task, **kwargs)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def sample(self, i: int) -> Sample:
        X = self.features
        start, end = X.indptr[i], X.indptr[i + 1]
        return Sample(X.indices[start:end], X.data[start:end], float(self.labels[i]), self.d)

    def dense(self) -> np.ndarray:
        return self.features.toarray()

    @cached_property
    def row_norms(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.features.multiply(self.features).sum(axis=1)).reshape(-1))

    @cached_property
    def content_hash(self) -> str:
        X = self.features
        h = hashlib.md5()
        h.update(np.asarray(X.shape, dtype=np.int64).tobytes())
        h.update(X.indptr.astype(np.int64).tobytes())
        h.update(X.indices.astype(np.int64).tobytes())
        h.update(X.data.tobytes())
        h.update(self.labels.tobytes())
        h.update(self.task.encode())
        return h.hexdigest()

    def replace(self, j: int, sample: Sample) -> "Dataset":
        """Копия с примером j, заменённым на sample."""
        if not 0 <= j < self.n:
            raise DataError(f"index {j} out of range for dataset of size {self.n}")
        if sample.dim != self.d:
            raise DimensionMismatch(f"sample dimension {sample.dim} != dataset dimension {self.d}")
        row = sp.csr_matrix((sample.values, sample.indices, [0, len(sample.indices)]), shape=(1, self.d))
        X = sp.vstack([self.features[:j], row, self.features[j + 1:]], format="csr")
        labels = self.labels.copy()
        labels[j] = sample.label
        provenance = {**self.provenance, "replaced": j}
        return Dataset(X, labels, self.task, provenance, dict(self.meta))

    def subset(self, idx, label: str = "subset") -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        provenance = {**self.provenance, "view": label}
        return Dataset(self.features[idx], self.labels[idx], self.task, provenance, dict(self.meta))

    def with_dim(self, d: int) -> "Dataset":
        if d < self.d:
            raise DimensionMismatch(f"cannot shrink dimension {self.d} to {d}")
        if d == self.d:
            return self
        X = sp.csr_matrix((self.features.data, self.features.indices, self.features.indptr), shape=(self.n, d))
        return Dataset(X, self.labels, self.task, {**self.provenance, "dim": d}, dict(self.meta))


# ═══════════════════════════════════════════════════════════════════════════════
# LIBSVM
# ═══════════════════════════════════════════════════════════════════════════════

def _parse_label(token: str, lineno: int, task: str, zero_one: bool) -> float:
    try:
        value = float(token)
    except ValueError:
        raise LibsvmParseError(f"non-numeric token {token!r}", lineno) from None
    if not math.isfinite(value):
        raise LibsvmParseError(f"non-numeric token {token!r}", lineno)
    if task != CLASSIFICATION:
        return value
    if zero_one:
        if value == 0.0:
            return -1.0
        if value == 1.0:
            return 1.0
    elif value in (-1.0, 1.0):
        return value
    raise LibsvmParseError(f"label {token!r} outside the accepted set", lineno)


def parse_libsvm(
    text: str,
    dim: Optional[int] = None,
    zero_one_labels: bool = False,
    task: str = CLASSIFICATION,
    source: str = "<text>",
) -> Dataset:
    """
    Разбирает текст LIBSVM: «метка idx:val idx:val ...», индексы 1-based и
    строго возрастают. Пустые строки и хвосты после '#' пропускаются.

    dim задаёт размерность явно (нужно, когда в test встречаются не все признаки).
    """
    indptr = [0]
    indices: list[int] = []
    values: list[float] = []
    labels: list[float] = []
    max_index = 0

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(_parse_label(tokens[0], lineno, task, zero_one_labels))
        prev = 0
        for token in tokens[1:]:
            idx_str, sep, val_str = token.partition(":")
            if not sep:
                raise LibsvmParseError(f"non-numeric token {token!r}", lineno)
            try:
                idx = int(idx_str)
                val = float(val_str)
            except ValueError:
                raise LibsvmParseError(f"non-numeric token {token!r}", lineno) from None
            if not math.isfinite(val):
                raise LibsvmParseError(f"non-numeric token {token!r}", lineno)
            if idx < 1:
                raise LibsvmParseError("index < 1", lineno)
            if idx <= prev:
                raise LibsvmParseError("non-increasing index", lineno)
            prev = idx
            indices.append(idx - 1)
            values.append(val)
        max_index = max(max_index, prev)
        indptr.append(len(indices))

    if dim is not None and max_index > dim:
        raise DimensionMismatch(f"{source}: feature index {max_index} exceeds declared dimension {dim}")
    d = dim if dim is not None else max_index
    X = sp.csr_matrix(
        (np.asarray(values, dtype=np.float64), np.asarray(indices, dtype=np.int32), np.asarray(indptr, dtype=np.int64)),
        shape=(len(labels), d),
    )
    provenance = {"source": source, "format": "libsvm", "zero_one_labels": zero_one_labels}
    log.debug("LIBSVM %s: n=%d, d=%d, nnz=%d", source, len(labels), d, len(values))
    return Dataset(X, np.asarray(labels), task, provenance)


def _format_label(label: float, task: str) -> str:
    if task == CLASSIFICATION:
        return "+1" if label > 0 else "-1"
    return repr(float(label))


def serialize_libsvm(dataset: Dataset) -> str:
    """Каноническая запись: кратчайшие числа, однозначно читаемые обратно."""
    X = dataset.features
    lines = []
    for i in range(dataset.n):
        start, end = X.indptr[i], X.indptr[i + 1]
        parts = [_format_label(dataset.labels[i], dataset.task)]
        parts.extend(f"{idx + 1}:{float(val)!r}" for idx, val in zip(X.indices[start:end], X.data[start:end]))
        lines.append(" ".join(parts))
    return "\n".join(lines) + ("\n" if lines else "")


def load_libsvm(path: str | Path, **kwargs) -> Dataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    dataset = parse_libsvm(path.read_text(encoding="utf-8"), source=str(path), **kwargs)
    log.info("Загружен датасет %s: n=%d, d=%d", path.name, dataset.n, dataset.d)
    return dataset


def save_libsvm(path: str | Path, dataset: Dataset) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(serialize_libsvm(dataset), encoding="utf-8")


def max_abs_scale(dataset: Dataset, scales: Optional[np.ndarray] = None) -> tuple[Dataset, np.ndarray]:
    """Делит каждый признак на max |a_ij| (по train); возвращает и масштабы для test."""
    if scales is None:
        scales = np.asarray(abs(dataset.features).max(axis=0).todense()).reshape(-1)
        scales[scales == 0.0] = 1.0
    X = dataset.features @ sp.diags(1.0 / scales)
    provenance = {**dataset.provenance, "scaling": "max-abs"}
    return Dataset(sp.csr_matrix(X), dataset.labels, dataset.task, provenance, dict(dataset.meta)), scales


# ═══════════════════════════════════════════════════════════════════════════════
# СИНТЕТИЧЕСКИЕ ЗАДАЧИ
# ═══════════════════════════════════════════════════════════════════════════════

def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _spec_provenance(spec: SyntheticSpec) -> dict[str, Any]:
    return {"source": "synthetic", **spec.model_dump(mode="json")}


def gen_classification(spec: SyntheticSpec) -> Dataset:
    """
    Линейно разделимые данные с зазором: a_i = m_i s_i w* + √(1−m_i²) u_i,
    где u_i ⊥ w*, ‖u_i‖ = 1, m_i ~ U[margin, 1], метка s_i = ±1.
    Затем доля flip_rate меток инвертируется.
    """
    rng = make_rng(spec.seed, 0)
    w_star = _unit(rng.standard_normal(spec.d))
    signs = rng.choice(np.array([-1.0, 1.0]), size=spec.n)
    m = rng.uniform(spec.margin, 1.0, size=spec.n)
    if spec.d == 1:
        A = signs[:, None] * w_star[None, :]
    else:
        U = rng.standard_normal((spec.n, spec.d))
        U -= np.outer(U @ w_star, w_star)
        U /= np.linalg.norm(U, axis=1, keepdims=True)
        A = (signs * m)[:, None] * w_star[None, :] + np.sqrt(1.0 - m**2)[:, None] * U
    A *= spec.row_norm or 1.0
    labels = signs.copy()
    flips = rng.random(spec.n) < spec.flip_rate
    labels[flips] *= -1.0
    log.debug("classification-margin: n=%d, d=%d, flipped=%d", spec.n, spec.d, int(flips.sum()))
    return Dataset(
        sp.csr_matrix(A), labels, CLASSIFICATION, _spec_provenance(spec),
        {"w_star": w_star, "flipped": int(flips.sum())},
    )


def ls_pl_modulus(dataset: Dataset, rtol: float = 1e-10) -> float:
    """Наименьшее ненулевое собственное число (1/n)AᵀA."""
    A = dataset.dense()
    eig = scipy.linalg.eigvalsh(A.T @ A / dataset.n)
    positive = eig[eig > rtol * max(eig.max(), 1.0)]
    if positive.size == 0:
        raise DataError("design matrix is zero; PL modulus undefined")
    return float(positive.min())


def least_norm_solution(dataset: Dataset) -> np.ndarray:
    x, *_ = scipy.linalg.lstsq(dataset.dense(), dataset.labels)
    return x


def ridge_solution(dataset: Dataset, lam: float) -> np.ndarray:
    """argmin (1/2n)‖Ax − b‖² + (λ/2)‖x‖²."""
    A = dataset.dense()
    H = A.T @ A / dataset.n + lam * np.eye(dataset.d)
    return scipy.linalg.solve(H, A.T @ dataset.labels / dataset.n, assume_a="pos")


def _ls_objective(dataset: Dataset, x: np.ndarray) -> float:
    r = dataset.features @ x - dataset.labels
    return float(r @ r) / (2 * dataset.n)


def gen_rank_deficient_ls(spec: SyntheticSpec) -> tuple[Dataset, float, float]:
    """
    Выпуклая PL-задача наименьших квадратов ранга r < d.

    Строки a_i = Q c_i / ‖c_i‖ лежат в r-мерном подпространстве span(Q);
    при noise = 0 система совместна и F* = 0.
    Возвращает (датасет, F*, μ).
    """
    r = spec.rank
    if r is None:
        raise ConfigError("rank-deficient-ls needs rank")
    if r >= spec.d:
        raise ConfigError(f"rank {r} must be below dimension {spec.d}")
    if spec.n < r:
        raise ConfigError(f"n={spec.n} samples cannot span rank {r}")

    rng = make_rng(spec.seed, 1)
    Q, _ = scipy.linalg.qr(rng.standard_normal((spec.d, r)), mode="economic")
    C = rng.standard_normal((spec.n, r))
    C /= np.linalg.norm(C, axis=1, keepdims=True)
    A = (C @ Q.T) * (spec.row_norm or 1.0)
    x_true = Q @ rng.standard_normal(r)
    b = A @ x_true + spec.noise * rng.standard_normal(spec.n)

    dataset = Dataset(sp.csr_matrix(A), b, REGRESSION, _spec_provenance(spec))
    x_star = least_norm_solution(dataset)
    f_star = 0.0 if spec.noise == 0 else _ls_objective(dataset, x_star)
    mu = ls_pl_modulus(dataset)
    dataset.meta.update({"x_star": x_star, "F_star": f_star, "mu": mu, "rank": r})
    log.debug("rank-deficient-ls: n=%d, d=%d, r=%d, μ=%.4g, F*=%.4g", spec.n, spec.d, r, mu, f_star)
    return dataset, f_star, mu


def gen_regression(spec: SyntheticSpec) -> Dataset:
    """Полноранговая регрессия с единичными строками и шумом noise."""
    rng = make_rng(spec.seed, 2)
    A = rng.standard_normal((spec.n, spec.d))
    A /= np.linalg.norm(A, axis=1, keepdims=True)
    A *= spec.row_norm or 1.0
    x_true = rng.standard_normal(spec.d)
    b = A @ x_true + spec.noise * rng.standard_normal(spec.n)
    return Dataset(sp.csr_matrix(A), b, REGRESSION, _spec_provenance(spec), {"x_true": x_true})


def gen_pl_sine_noise(spec: SyntheticSpec) -> Dataset:
    """Шумы z_i для pl-sine: эмпирическое среднее ровно 0, поэтому F* = 0 в x = 0."""
    rng = make_rng(spec.seed, 3)
    Z = spec.noise * rng.standard_normal((spec.n, spec.d))
    Z -= Z.mean(axis=0, keepdims=True)
    return Dataset(
        sp.csr_matrix(Z), np.zeros(spec.n), REGRESSION, _spec_provenance(spec),
        {"x_star": np.zeros(spec.d), "F_star": 0.0},
    )


def make_synthetic(spec: SyntheticSpec) -> Dataset:
    if spec.kind is SyntheticKind.CLASSIFICATION:
        return gen_classification(spec)
    if spec.kind is SyntheticKind.RANK_DEFICIENT_LS:
        return gen_rank_deficient_ls(spec)[0]
    if spec.kind is SyntheticKind.REGRESSION:
        return gen_regression(spec)
    return gen_pl_sine_noise(spec)


# ─── Разбиение ─────────────────────────────────────────────────────────────────

def split(dataset: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Случайное детерминированное разбиение на непересекающиеся train и test."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigError(f"test fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(test_fraction * dataset.n))
    if n_test == 0 or n_test == dataset.n:
        raise DataError(f"test fraction {test_fraction} leaves an empty side for n={dataset.n}")
    perm = make_rng(seed, 4).permutation(dataset.n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx, "train"), dataset.subset(test_idx, "test")
