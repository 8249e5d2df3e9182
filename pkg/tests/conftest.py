"""Общие фикстуры: маленькие датасеты и фабрика файлов конфигурации."""

from __future__ import annotations

import numpy as np
import pytest

from data import CLASSIFICATION, Dataset, gen_classification, gen_regression
from models import SyntheticKind, SyntheticSpec


@pytest.fixture
def tiny_classification() -> Dataset:
    A = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.5], [0.5, -0.5]])
    b = np.array([1.0, -1.0, 1.0, -1.0])
    return Dataset.from_dense(A, b, task=CLASSIFICATION)


@pytest.fixture
def margin_data() -> Dataset:
    return gen_classification(SyntheticSpec(kind=SyntheticKind.CLASSIFICATION, n=120, d=5, seed=3))


@pytest.fixture
def regression_data() -> Dataset:
    return gen_regression(SyntheticSpec(kind=SyntheticKind.REGRESSION, n=60, d=4, noise=0.1, seed=5))


@pytest.fixture
def write_config(tmp_path):
    """Пишет текст конфигурации в tmp_path и возвращает путь."""

    def _write(text: str, name: str = "experiment.cfg"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
