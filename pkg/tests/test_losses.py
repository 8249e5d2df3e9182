import math

import numpy as np
import pytest

from core import BallDomain
from data import CLASSIFICATION, Dataset, Sample
from errors import ConfigError, DataError, DimensionMismatch
from losses import (
    PL_SINE_RHO,
    LossModel,
    ProximalLoss,
    check_gradient,
    full_objective,
    loss_subgrad,
    loss_value,
    make_loss,
    pl_sine_grad,
    pl_sine_value,
    prox_wrap,
)
from models import LossKind


def _sample(a, b) -> Sample:
    return Sample.from_dense(np.asarray(a, dtype=np.float64), b)


HINGE = LossModel(LossKind.HINGE)
LOGISTIC = LossModel(LossKind.LOGISTIC)
LS = LossModel(LossKind.LEAST_SQUARES)


class TestLossValues:
    @pytest.mark.parametrize("a, b", [((1.0, 2.0), 1.0), ((-3.0, 0.5), -1.0), ((0.0, 0.0), 1.0)])
    def test_hinge_at_zero_is_one(self, a, b):
        assert loss_value(HINGE, np.zeros(2), _sample(a, b)) == 1.0

    def test_hinge_beyond_margin(self):
        z = _sample((1.0, 1.0), 1.0)
        assert loss_value(HINGE, np.array([1.0, 1.0]), z) == 0.0

    def test_logistic_at_zero(self):
        np.testing.assert_allclose(loss_value(LOGISTIC, np.zeros(3), _sample((1.0, -2.0, 0.5), -1.0)), math.log(2.0))

    def test_regularizer_is_half_lambda(self):
        model = LossModel(LossKind.HINGE_L2, lam=0.5)
        x = np.array([3.0, 4.0])
        z = _sample((0.0, 0.0), 1.0)
        np.testing.assert_allclose(model.value(x, z), 1.0 + 0.25 * 25.0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            HINGE.value(np.zeros(3), _sample((1.0, 2.0), 1.0))


class TestSubgradients:
    def test_hinge_active_branch(self):
        a = np.array([0.5, -2.0])
        np.testing.assert_allclose(loss_subgrad(HINGE, np.zeros(2), _sample(a, -1.0)), a)

    def test_hinge_kink_gives_zero(self):
        z = _sample((2.0, 0.0), 1.0)
        x = np.array([0.5, 0.0])
        g = HINGE.subgrad(x, z)
        np.testing.assert_array_equal(g, np.zeros(2))
        rng = np.random.default_rng(0)
        for y in rng.normal(scale=3.0, size=(200, 2)):
            assert HINGE.value(y, z) >= HINGE.value(x, z) + g @ (y - x)

    def test_least_squares_at_zero(self):
        np.testing.assert_allclose(LS.subgrad(np.zeros(2), _sample((1.0, 2.0), 3.0)), [-3.0, -6.0])

    @pytest.mark.parametrize(
        "model",
        [
            LossModel(LossKind.LOGISTIC, lam=0.3),
            LossModel(LossKind.LEAST_SQUARES_L2, lam=0.2),
            LossModel(LossKind.PL_SINE),
        ],
        ids=["logistic+l2", "ls+l2", "pl-sine"],
    )
    def test_matches_finite_differences(self, model):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=4)
            label = 1.0 if rng.random() < 0.5 else -1.0
            z = _sample(rng.normal(size=4), label)
            fd, analytic = check_gradient(model, x, z)
            np.testing.assert_allclose(fd, analytic, atol=1e-6)

    @pytest.mark.parametrize(
        "model",
        [HINGE, LossModel(LossKind.HINGE_L2, lam=0.1), LossModel(LossKind.LOGISTIC, lam=0.05), LossModel(LossKind.LEAST_SQUARES_L2, lam=0.2)],
        ids=["hinge", "hinge+l2", "logistic+l2", "ls+l2"],
    )
    def test_step_applies_subgradient(self, model):
        rng = np.random.default_rng(2)
        for _ in range(20):
            x = rng.normal(size=5)
            z = _sample(rng.normal(size=5) * (rng.random(5) < 0.6), 1.0)
            g = model.subgrad(x, z)
            stepped = x.copy()
            norm = model.step(stepped, z, 0.3)
            np.testing.assert_allclose(stepped, x - 0.3 * g, atol=1e-12)
            np.testing.assert_allclose(norm, np.linalg.norm(g), rtol=1e-9, atol=1e-12)


class TestObjective:
    def test_singleton_equals_loss_value(self):
        ds = Dataset.from_dense([[1.0, -2.0]], [1.0], task=CLASSIFICATION)
        x = np.array([0.3, 0.1])
        np.testing.assert_allclose(full_objective(LOGISTIC, x, ds), LOGISTIC.value(x, ds.sample(0)))

    def test_hinge_at_zero(self, margin_data):
        assert full_objective(HINGE, np.zeros(margin_data.d), margin_data) == 1.0

    def test_empty_dataset(self):
        empty = Dataset.from_dense(np.zeros((0, 3)), np.zeros(0))
        with pytest.raises(DataError):
            LS.objective(np.zeros(3), empty)

    def test_vectorized_matches_per_sample(self, regression_data):
        model = LossModel(LossKind.LEAST_SQUARES_L2, lam=0.1)
        x = np.random.default_rng(3).normal(size=regression_data.d)
        per_sample = [model.value(x, regression_data.sample(i)) for i in range(regression_data.n)]
        np.testing.assert_allclose(model.per_sample_values(x, regression_data), per_sample, rtol=1e-12)
        np.testing.assert_allclose(model.objective(x, regression_data), np.mean(per_sample), rtol=1e-12)
        grads = [model.subgrad(x, regression_data.sample(i)) for i in range(regression_data.n)]
        np.testing.assert_allclose(model.objective_gradient(x, regression_data), np.mean(grads, axis=0), atol=1e-12)


class TestPlSine:
    def test_minimizer(self):
        assert pl_sine_value(0.0) == 0.0
        np.testing.assert_array_equal(pl_sine_grad(0.0), [0.0])

    def test_value_at_half_pi(self):
        np.testing.assert_allclose(pl_sine_value(math.pi / 2), math.pi**2 / 4 + 3.0)

    def test_weakly_convex_modulus(self):
        # f'' = 2 + 6 cos 2x >= -4 = -rho
        x = np.linspace(-5, 5, 2001)
        h = 1e-4
        second = (pl_sine_grad(x + h) - pl_sine_grad(x - h)) / (2 * h)
        assert second.min() >= -PL_SINE_RHO - 1e-6


class TestProximal:
    def test_anchor_at_x_adds_nothing(self):
        base = make_loss(LossKind.PL_SINE, dataset=Dataset.from_dense([[0.0]], [0.0]))
        x = np.array([0.7])
        z = _sample((0.2,), 0.0)
        wrapped = prox_wrap(base, x, gamma=0.1)
        assert wrapped.value(x, z) == base.value(x, z)
        np.testing.assert_array_equal(wrapped.subgrad(x, z), base.subgrad(x, z))

    @pytest.mark.parametrize("gamma", [0.0, -1.0])
    def test_gamma_must_be_positive(self, gamma):
        with pytest.raises(ConfigError):
            ProximalLoss(HINGE, np.zeros(2), gamma)

    def test_convexified_at_inverse_rho(self):
        base = make_loss(LossKind.PL_SINE, dataset=Dataset.from_dense([[0.0]], [0.0]))
        wrapped = ProximalLoss(base, np.array([0.4]), 1.0 / PL_SINE_RHO)
        z = _sample((0.0,), 0.0)
        rng = np.random.default_rng(4)
        for _ in range(500):
            x, y = rng.uniform(-6, 6, size=(2, 1))
            theta = rng.random()
            mid = theta * x + (1 - theta) * y
            chord = theta * wrapped.value(x, z) + (1 - theta) * wrapped.value(y, z)
            assert wrapped.value(mid, z) <= chord + 1e-9

    def test_constants(self):
        base = make_loss(LossKind.PL_SINE, dataset=Dataset.from_dense([[0.0]], [0.0]))
        wrapped = ProximalLoss(base, np.zeros(1), 0.125, G=3.0)
        assert wrapped.constants.L == pytest.approx(base.constants.L + 8.0)
        assert wrapped.constants.strong_convexity == pytest.approx(8.0 - PL_SINE_RHO)
        assert wrapped.constants.G == 3.0


class TestFactory:
    def test_hinge_gradient_bound_on_ball(self, margin_data):
        domain = BallDomain.ball(2.0)
        model = make_loss(LossKind.HINGE_L2, 0.1, margin_data, domain)
        rng = np.random.default_rng(5)
        for _ in range(200):
            x = rng.normal(size=margin_data.d)
            x *= rng.uniform(0, 2.0) / np.linalg.norm(x)
            z = margin_data.sample(int(rng.integers(margin_data.n)))
            assert np.linalg.norm(model.subgrad(x, z)) <= model.constants.G + 1e-12

    def test_least_squares_gradient_bound_on_ball(self, regression_data):
        domain = BallDomain.ball(1.5)
        model = make_loss(LossKind.LEAST_SQUARES, 0.0, regression_data, domain)
        rng = np.random.default_rng(6)
        for _ in range(200):
            x = rng.normal(size=regression_data.d)
            x *= rng.uniform(0, 1.5) / np.linalg.norm(x)
            z = regression_data.sample(int(rng.integers(regression_data.n)))
            assert np.linalg.norm(model.subgrad(x, z)) <= model.constants.G + 1e-12

    def test_regularized_hinge_unbounded_has_no_G(self, margin_data):
        model = make_loss(LossKind.HINGE_L2, 0.1, margin_data)
        assert model.constants.G is None
        assert model.constants.strong_convexity == 0.1

    def test_logistic_constants(self, margin_data):
        model = make_loss(LossKind.LOGISTIC, 0.0, margin_data)
        np.testing.assert_allclose(model.constants.G, 1.0)
        np.testing.assert_allclose(model.constants.L, 0.25)

    def test_bounded_logistic_in_unit_interval(self, margin_data):
        domain = BallDomain.ball(5.0)
        model = make_loss(LossKind.LOGISTIC, 0.01, margin_data, domain, bounded=True)
        assert model.constants.bounded_unit
        rng = np.random.default_rng(7)
        for _ in range(100):
            x = rng.normal(size=margin_data.d)
            x *= 5.0 / np.linalg.norm(x)
            values = model.per_sample_values(x, margin_data)
            assert values.min() >= 0.0 and values.max() <= 1.0

    def test_kind_and_lambda_must_agree(self):
        with pytest.raises(ConfigError):
            LossModel(LossKind.HINGE, lam=0.1)
        with pytest.raises(ConfigError):
            LossModel(LossKind.LEAST_SQUARES_L2, lam=0.0)
        with pytest.raises(ConfigError):
            make_loss(LossKind.HINGE, bounded=True)
