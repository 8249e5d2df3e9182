import math

import numpy as np
import pytest

from averaging import AveragingState, batch_average
from core import BallDomain, SampleStream
from data import Dataset, gen_pl_sine_noise, gen_rank_deficient_ls
from errors import ConfigError, DivergenceError, GradientBoundViolation
from losses import LossModel, make_loss, pl_sine_grad
from models import (
    LossKind,
    RadiusRule,
    RunSettings,
    ScheduleKind,
    Scheme,
    SchemeSettings,
    StagewiseSettings,
    StepSchedule,
    SyntheticKind,
    SyntheticSpec,
)
from models import TestMetric as Metric
from optimizer import (
    default_checkpoints,
    error_rate,
    log_checkpoints,
    reference_minimum,
    resolve_checkpoints,
    run_sgd,
    sgd_piwa,
    stage_params,
    stage_radius,
    stagewise,
    step_size,
    step_sizes,
)

SQRT = StepSchedule(kind=ScheduleKind.CONVEX_SQRT, eta1=1.0)


def _collect(loss, dataset, schedule, T, scheme, domain=None, seed=0, x1=None):
    iterates = []
    trace = sgd_piwa(
        loss,
        np.zeros(dataset.d) if x1 is None else x1,
        schedule,
        T,
        domain or BallDomain.whole_space(),
        AveragingState.from_settings(scheme, horizon=T),
        SampleStream(seed, dataset.n),
        dataset=dataset,
        callback=lambda t, x: iterates.append((t, x.copy())),
    )
    return trace, iterates


class TestStepSchedules:
    def test_convex_sqrt(self):
        assert step_size(SQRT, 4) == 0.5

    def test_strongly_convex(self):
        schedule = StepSchedule(kind=ScheduleKind.STRONGLY_CONVEX, alpha=1.0, lam=0.5)
        assert step_size(schedule, 8) == 1.0

    def test_constant(self):
        schedule = StepSchedule(kind=ScheduleKind.CONSTANT, eta_const=0.01)
        assert step_size(schedule, 1) == step_size(schedule, 10**6) == 0.01

    def test_index_starts_at_one(self):
        with pytest.raises(ConfigError):
            step_size(SQRT, 0)

    @pytest.mark.parametrize(
        "schedule",
        [SQRT, StepSchedule(kind=ScheduleKind.STRONGLY_CONVEX, alpha=2.0, lam=0.1), StepSchedule(kind=ScheduleKind.CONSTANT, eta_const=0.3)],
        ids=["sqrt", "strongly", "constant"],
    )
    def test_vector_matches_scalar(self, schedule):
        np.testing.assert_allclose(step_sizes(schedule, 50), [step_size(schedule, t) for t in range(1, 51)], rtol=1e-15)

    def test_missing_parameter(self):
        with pytest.raises(ValueError):
            StepSchedule(kind=ScheduleKind.STRONGLY_CONVEX, alpha=1.0)


class TestCheckpoints:
    def test_powers_of_two_plus_horizon(self):
        assert default_checkpoints(10) == [1, 2, 4, 8, 10]
        assert default_checkpoints(1) == [1]

    def test_log_grid(self):
        points = log_checkpoints(1000, 1)
        assert {1, 10, 100} <= set(points)
        assert points[-1] == 1000

    def test_resolve_rules(self):
        assert resolve_checkpoints("log2", 16) == [1, 2, 4, 8, 16]
        assert resolve_checkpoints("log10:1", 100) == [1, 10, 100]
        assert resolve_checkpoints([5, 0, 50], 20) == [5, 20]
        assert resolve_checkpoints("7", 20) == [7, 20]

    def test_unknown_rule(self):
        with pytest.raises(ConfigError):
            resolve_checkpoints("every-other", 10)


class TestSgdPiwa:
    def test_one_dimensional_least_squares(self):
        ds = Dataset.from_dense([[1.0]], [1.0])
        schedule = StepSchedule(kind=ScheduleKind.CONSTANT, eta_const=0.5)
        _, iterates = _collect(LossModel(LossKind.LEAST_SQUARES), ds, schedule, 3, SchemeSettings(scheme=Scheme.LAST))
        np.testing.assert_allclose([x[0] for _, x in iterates], [0.0, 0.5, 0.75])

    def test_single_iteration_returns_start(self, margin_data):
        x1 = np.full(margin_data.d, 0.1)
        trace, iterates = _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 1, SchemeSettings(alpha=3.0), x1=x1)
        np.testing.assert_array_equal(trace.final_average, x1)
        assert [c.t for c in trace.checkpoints] == [1]
        assert len(iterates) == 1

    @pytest.mark.parametrize("scheme", list(Scheme))
    def test_average_covers_all_iterates(self, margin_data, scheme):
        settings = SchemeSettings(scheme=scheme, alpha=2.0, fraction=0.3, eta_pd=1.0, beta=0.95)
        trace, iterates = _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 300, settings)
        assert [t for t, _ in iterates] == list(range(1, 301))
        xs = np.array([x for _, x in iterates])
        np.testing.assert_allclose(trace.final_average, batch_average(xs, settings), rtol=1e-10, atol=1e-14)
        np.testing.assert_array_equal(trace.final_last, xs[-1])

    def test_piwa_alpha_zero_is_uniform(self, margin_data):
        piwa, _ = _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 500, SchemeSettings(scheme=Scheme.PIWA, alpha=0.0))
        uniform, _ = _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 500, SchemeSettings(scheme=Scheme.UNIFORM))
        np.testing.assert_allclose(piwa.final_average, uniform.final_average, rtol=1e-12)

    def test_iterates_stay_in_ball(self, margin_data):
        domain = BallDomain.ball(0.05, center=np.full(margin_data.d, 0.01))
        x1 = np.full(margin_data.d, 0.01)
        _, iterates = _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 400, SchemeSettings(), domain=domain, x1=x1)
        assert all(domain.contains(x) for _, x in iterates)

    def test_same_seed_same_trace(self, regression_data):
        loss = make_loss(LossKind.LEAST_SQUARES_L2, 0.1, regression_data)
        settings = RunSettings(
            schedule=StepSchedule(kind=ScheduleKind.STRONGLY_CONVEX, alpha=1.0, lam=0.1),
            T=2000,
            scheme=SchemeSettings(scheme=Scheme.PIWA, alpha=1.0),
            radius=10.0,
        )
        a = run_sgd(loss, regression_data, settings, seed=4)
        b = run_sgd(loss, regression_data, settings, seed=4)
        assert [c.model_dump() for c in a.checkpoints] == [c.model_dump() for c in b.checkpoints]
        np.testing.assert_array_equal(a.final_average, b.final_average)
        assert a.seed == 4
        assert a.metadata["T"] == 2000

    def test_wall_clock_off_by_default(self, margin_data):
        trace, _ = _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 64, SchemeSettings())
        assert all(c.wall_ms == 0.0 for c in trace.checkpoints)
        assert [c.t for c in trace.checkpoints] == [1, 2, 4, 8, 16, 32, 64]

    def test_divergence_detected(self, regression_data):
        loss = make_loss(LossKind.LEAST_SQUARES, dataset=regression_data)
        schedule = StepSchedule(kind=ScheduleKind.CONSTANT, eta_const=3.0)
        with pytest.raises(DivergenceError) as info:
            with np.errstate(all="ignore"):
                _collect(loss, regression_data, schedule, 10_000, SchemeSettings())
        assert info.value.last_finite_t >= 1

    def test_gradient_bound_violation(self, margin_data):
        loss = make_loss(LossKind.HINGE, dataset=margin_data).with_constants(G=1e-3)
        with pytest.raises(GradientBoundViolation):
            _collect(loss, margin_data, SQRT, 10, SchemeSettings())

    def test_start_outside_domain(self, margin_data):
        with pytest.raises(ConfigError):
            _collect(LossModel(LossKind.HINGE), margin_data, SQRT, 10, SchemeSettings(), domain=BallDomain.ball(0.1), x1=np.ones(margin_data.d))

    def test_stream_must_match_dataset(self, margin_data):
        with pytest.raises(ConfigError):
            sgd_piwa(
                LossModel(LossKind.HINGE), np.zeros(margin_data.d), SQRT, 10, BallDomain.whole_space(),
                AveragingState(Scheme.LAST), SampleStream(0, margin_data.n + 1), dataset=margin_data,
            )

    def test_test_metric_recorded(self, margin_data):
        loss = LossModel(LossKind.HINGE)
        settings = RunSettings(schedule=SQRT, T=32)
        trace = run_sgd(loss, margin_data, settings, seed=0, test=margin_data, metric=Metric.ERROR_RATE)
        last = trace.checkpoints[-1]
        assert last.test_metric == error_rate(trace.final_average, margin_data)


class TestMiniBatch:
    @pytest.fixture
    def pl_sine(self):
        ds = gen_pl_sine_noise(SyntheticSpec(kind=SyntheticKind.PL_SINE_NOISE, n=50, d=2, noise=0.5, seed=1))
        return make_loss(LossKind.PL_SINE, 0.0, ds), ds

    def test_unit_batch_is_single_sample_recursion(self, margin_data):
        loss = LossModel(LossKind.HINGE)
        settings = SchemeSettings(scheme=Scheme.LAST)
        T = 200
        trace = sgd_piwa(
            loss, np.zeros(margin_data.d), SQRT, T, BallDomain.whole_space(),
            AveragingState.from_settings(settings, horizon=T), SampleStream(6, margin_data.n),
            dataset=margin_data, batch_size=1,
        )
        default, _ = _collect(loss, margin_data, SQRT, T, settings, seed=6)
        stream = SampleStream(6, margin_data.n)
        x = np.zeros(margin_data.d)
        for t in range(1, T):
            loss.step(x, margin_data.sample(stream.next_index()), step_size(SQRT, t))
        np.testing.assert_array_equal(trace.final_last, x)
        np.testing.assert_array_equal(trace.final_last, default.final_last)
        assert [c.model_dump() for c in trace.checkpoints] == [c.model_dump() for c in default.checkpoints]
        assert trace.metadata["batch_size"] == 1

    def test_batch_averages_consecutive_draws(self, pl_sine):
        loss, ds = pl_sine
        schedule = StepSchedule(kind=ScheduleKind.CONSTANT, eta_const=0.05)
        settings = RunSettings(schedule=schedule, T=6, scheme=SchemeSettings(scheme=Scheme.LAST), batch_size=4)
        trace = run_sgd(loss, ds, settings, seed=2, x1=np.array([1.0, -0.5]))

        stream = SampleStream(2, ds.n)
        x = np.array([1.0, -0.5])
        for _ in range(1, 6):
            g = np.mean([pl_sine_grad(x, ds.sample(i).dense()) for i in stream.take(4)], axis=0)
            x = x - 0.05 * g
        np.testing.assert_allclose(trace.final_last, x, rtol=1e-12)
        assert trace.metadata["batch_size"] == 4

    def test_batch_rejected_for_convex_losses(self, margin_data):
        settings = RunSettings(schedule=SQRT, T=10, batch_size=8)
        with pytest.raises(ConfigError):
            run_sgd(LossModel(LossKind.HINGE), margin_data, settings, seed=0)

    def test_stagewise_rejects_batch_for_convex_losses(self):
        ds, f_star, _ = gen_rank_deficient_ls(
            SyntheticSpec(kind=SyntheticKind.RANK_DEFICIENT_LS, n=40, d=4, rank=2, seed=0)
        )
        loss = make_loss(LossKind.LEAST_SQUARES, 0.0, ds)
        settings = StagewiseSettings(K=1, d=1.0, batch_size=2)
        with pytest.raises(ConfigError):
            stagewise(loss, np.zeros(ds.d), 1, settings, SampleStream(0, ds.n), ds, F_star=f_star)


class TestReferenceMinimum:
    def test_unconstrained_stationary(self, margin_data):
        loss = make_loss(LossKind.LOGISTIC, 0.1, margin_data)
        x_star, value = reference_minimum(loss, margin_data)
        np.testing.assert_allclose(loss.objective_gradient(x_star, margin_data), 0.0, atol=1e-6)
        assert value == loss.objective(x_star, margin_data)

    def test_constrained_lands_on_sphere(self, regression_data):
        loss = make_loss(LossKind.LEAST_SQUARES, dataset=regression_data)
        domain = BallDomain.ball(0.1)
        x_star, value = reference_minimum(loss, regression_data, domain)
        assert domain.contains(x_star)
        np.testing.assert_allclose(np.linalg.norm(x_star), 0.1, rtol=1e-4)
        assert value < loss.objective(np.zeros(regression_data.d), regression_data)

    def test_nonsmooth_rejected(self, margin_data):
        with pytest.raises(ConfigError):
            reference_minimum(LossModel(LossKind.HINGE), margin_data)


class TestStageParams:
    def test_eps_and_radius(self):
        params = stage_params(3, eps0=1.0, mu=0.25, Ghat_sq=2.0)
        assert params.eps_k == 0.125
        assert params.gamma == 16.0
        assert [stage_radius(k, 1.0, 0.25) for k in range(1, 5)] == [2.0, 1.0, 0.5, 0.25]

    def test_step_size(self):
        params = stage_params(1, eps0=1.0, mu=1.0, Ghat_sq=2.0, c=1.0)
        assert params.eta_k == 0.125

    def test_error_scaled_radius(self):
        assert stage_radius(3, 1.0, 0.25, rule=RadiusRule.ERROR_SCALED) == 1.0

    def test_iterations(self):
        params = stage_params(2, eps0=1.0, mu=0.5, Ghat_sq=1.0, c=1.0, d=3.0)
        assert params.T_k == math.ceil(3.0 / (0.5 * 0.25))

    def test_default_d(self):
        params = stage_params(1, eps0=1.0, mu=1.0, Ghat_sq=1.0, c=1.0, alpha=0.0, delta=0.5)
        assert params.d == pytest.approx(max(32.0, 512.0 * math.log(2.0)))

    def test_c_above_limit(self):
        with pytest.raises(ConfigError):
            stage_params(1, eps0=1.0, mu=1.0, Ghat_sq=2.0, c=1.0, L=10.0)

    def test_auto_c_and_cap(self):
        params = stage_params(1, eps0=1.0, mu=1.0, Ghat_sq=2.0, L=10.0)
        assert params.c == pytest.approx(0.4)
        assert params.eta_k <= 0.1
        capped = stage_params(1, eps0=1.0, mu=1.0, Ghat_sq=0.01, L=10.0, c_reference_eps=0.1)
        assert capped.eta_capped and capped.eta_k == pytest.approx(0.1)

    @pytest.mark.parametrize("kwargs", [{"eps0": 0.0}, {"mu": -1.0}, {"delta": 1.0}, {"alpha": -0.5}])
    def test_invalid_inputs(self, kwargs):
        base = dict(eps0=1.0, mu=1.0, Ghat_sq=1.0)
        base.update(kwargs)
        with pytest.raises(ConfigError):
            stage_params(1, **base)


class TestStagewise:
    @pytest.fixture
    def problem(self):
        ds, f_star, mu = gen_rank_deficient_ls(
            SyntheticSpec(kind=SyntheticKind.RANK_DEFICIENT_LS, n=100, d=4, rank=2, noise=0.0, seed=2)
        )
        return make_loss(LossKind.LEAST_SQUARES, dataset=ds), ds, f_star

    def test_structure(self, problem):
        loss, ds, f_star = problem
        stream = SampleStream(1, ds.n)
        result = stagewise(loss, np.zeros(ds.d), 3, StagewiseSettings(K=3, d=1.0, alpha=1.0), stream, ds, F_star=f_star)
        assert len(result.iterates) == 4
        assert len(result.stages) == len(result.traces) == len(result.objectives) == 3
        radii = result.radii
        np.testing.assert_allclose([radii[1] / radii[0], radii[2] / radii[1]], 0.5)
        assert stream.position == sum(stage.T_k - 1 for stage in result.stages)
        assert [stage.eps_k for stage in result.stages] == [result.metadata["eps0"] / 2**k for k in (1, 2, 3)]
        assert result.metadata["d_mode"] == "override"
        assert result.metadata["eps0_mode"] == "auto"
        assert result.metadata["rho_condition_violated"] is False

    def test_stage_iterates_stay_in_stage_ball(self, problem):
        loss, ds, f_star = problem
        seen = []
        result = stagewise(
            loss, np.zeros(ds.d), 2, StagewiseSettings(K=2, d=1.0), SampleStream(3, ds.n), ds, F_star=f_star,
            callback=lambda k, t, x: seen.append((k, x.copy())),
        )
        for k, x in seen:
            center, radius = result.iterates[k - 1], result.stages[k - 1].D_k
            assert np.linalg.norm(x - center) <= radius * (1 + 1e-9)

    def test_needs_modulus(self, margin_data):
        with pytest.raises(ConfigError):
            stagewise(LossModel(LossKind.HINGE), np.zeros(margin_data.d), 2, StagewiseSettings(), SampleStream(0, margin_data.n), margin_data)

    def test_weakly_convex_stress_is_flagged(self):
        ds = gen_pl_sine_noise(SyntheticSpec(kind=SyntheticKind.PL_SINE_NOISE, n=50, d=2, noise=0.5, seed=1))
        loss = make_loss(LossKind.PL_SINE, 0.0, ds)
        result = stagewise(
            loss, np.array([1.0, -0.5]), 1, StagewiseSettings(K=1, d=1.0), SampleStream(4, ds.n), ds, F_star=0.0,
        )
        assert result.metadata["gamma"] == pytest.approx(128.0)
        assert result.metadata["rho_condition_violated"] is True

    def test_auto_eps_needs_optimum(self, problem):
        loss, ds, _ = problem
        with pytest.raises(ConfigError):
            stagewise(loss, np.zeros(ds.d), 2, StagewiseSettings(K=2), SampleStream(0, ds.n), ds)
