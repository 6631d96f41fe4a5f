"""Newton-CG 구성 요소 (CG, line search, LM 갱신)와 학습 루프"""

import math

import numpy as np
import pandas as pd
import pytest

import newton_solver
from data_io import RawData, preprocess
from diagnostics import synthetic_dataset
from newton_solver import (LOG_COLUMNS, LineSearchFailed, NegativeCurvatureError, NumericalError,
                           SolverConfig, cg_solve, line_search, lm_update, newton_train,
                           predicted_reduction, sample_subset)


def _config(**overrides) -> SolverConfig:
    values = dict(max_newton_iters=4, sampling_rate=0.5, C=1.0, seed=3, batch_size=4)
    values.update(overrides)
    return SolverConfig(**values)


@pytest.fixture
def train_set():
    return synthetic_dataset((8, 8, 2), 3, 12, seed=5)


@pytest.fixture
def test_set(train_set):
    rng = np.random.default_rng(6)
    raw = RawData(rng.uniform(0, 255, (6, 8, 8, 2)), np.arange(6) % 3, 3)
    return preprocess(raw, reference_mean=train_set.pixel_mean)


class TestConjugateGradient:

    def test_scaled_identity_one_step(self):
        g = np.array([1.0, -4.0, 2.5])
        result = cg_solve(lambda v: 2.0 * v, g, 0.1, 250)
        np.testing.assert_allclose(result.d, -g / 2, rtol=1e-15, atol=0)
        assert result.iterations == 1

    def test_diagonal_against_direct_solve(self):
        A = np.diag(np.arange(1.0, 6.0))
        g = np.random.default_rng(0).standard_normal(5)
        sigma = 1e-3
        result = cg_solve(lambda v: A @ v, g, sigma, 250)
        assert np.linalg.norm(A @ result.d + g) <= sigma * np.linalg.norm(g)
        np.testing.assert_allclose(result.d, np.linalg.solve(A, -g), rtol=0, atol=sigma * np.linalg.norm(g))

    def test_residual_rule_and_cap(self):
        A = np.diag(np.arange(1.0, 41.0))
        g = np.ones(40)
        capped = cg_solve(lambda v: A @ v, g, 1e-12, 3)
        assert capped.iterations == 3
        loose = cg_solve(lambda v: A @ v, g, 0.5, 250)
        assert loose.residual <= 0.5 * np.linalg.norm(g)
        assert loose.iterations < 40

    def test_negative_curvature(self):
        with pytest.raises(NegativeCurvatureError):
            cg_solve(lambda v: -v, np.ones(3), 0.1, 10)

    def test_non_finite_gradient(self):
        with pytest.raises(NumericalError):
            cg_solve(lambda v: v, np.array([np.nan, 1.0]), 0.1, 10)


class TestLineSearch:

    def test_exact_step_on_quadratic(self):
        theta = np.array([3.0, -1.0])
        result = line_search(lambda t: 0.5 * float(t @ t), theta, -theta, 5.0, -10.0, 1e-4, 2 ** -20)
        assert (result.alpha, result.f, result.steps) == (1.0, 0.0, 1)

    def test_backtracks_past_cliff(self):
        def fun(t):
            return 1e9 if t[0] > 0.75 else (t[0] - 0.5) ** 2
        result = line_search(fun, np.zeros(1), np.ones(1), 0.25, -1.0, 1e-4, 2 ** -20)
        assert result.alpha == 0.5
        assert result.steps == 2

    def test_failure_below_floor(self):
        with pytest.raises(LineSearchFailed):
            line_search(lambda t: 1.0, np.zeros(2), np.ones(2), 0.0, -1.0, 1e-4, 2 ** -5)

    def test_rejects_ascent_direction(self):
        with pytest.raises(ValueError):
            line_search(lambda t: 0.0, np.zeros(1), np.ones(1), 0.0, 1.0, 1e-4, 2 ** -20)


class TestLevenbergMarquardt:

    @pytest.mark.parametrize("rho, expected", [(0.8, 2.0 / 3.0), (0.5, 1.0), (0.1, 1.5),
                                               (0.75, 1.0), (0.25, 1.0)])
    def test_branches(self, rho, expected):
        assert lm_update(1.0, rho, SolverConfig()) == pytest.approx(expected, rel=1e-15)

    def test_clamped(self):
        config = SolverConfig()
        assert lm_update(1e-10, 0.9, config) == 1e-10
        assert lm_update(1e10, -3.0, config) == 1e10

    def test_predicted_reduction(self):
        assert predicted_reduction(np.ones(3), np.zeros(3), lambda v: 2 * v) == 0.0
        d = np.array([1.0, 0.0])
        assert predicted_reduction(-2 * d, d, lambda v: 2 * v) == -1.0

    def test_predicted_reduction_explicit(self):
        rng = np.random.default_rng(1)
        M = rng.standard_normal((4, 4))
        G = M @ M.T + np.eye(4)
        g, d = rng.standard_normal(4), rng.standard_normal(4)
        expected = g @ d + 0.5 * d @ G @ d
        assert predicted_reduction(g, d, lambda v: G @ v) == pytest.approx(expected, rel=1e-12)


class TestSolverConfig:

    def test_defaults(self):
        config = SolverConfig()
        assert config.regularization(60000) == pytest.approx(600.0)
        assert config.subset_size(60000) == 3000
        assert config.subset_size(10) == 1
        assert (config.cg_tol, config.eta, config.lambda_init) == (0.1, 1e-4, 1.0)

    @pytest.mark.parametrize("field, value", [("cg_tol", 1.0), ("sampling_rate", 0.0), ("C", -1.0),
                                              ("eta", 0.0), ("cg_max", 0), ("batch_size", 0)])
    def test_invalid(self, field, value):
        with pytest.raises(ValueError):
            SolverConfig(**{field: value}).validate()

    def test_sample_subset(self):
        subset = sample_subset(np.random.default_rng(0), 100, 5)
        assert subset.size == 5
        assert np.unique(subset).size == 5
        assert np.all(np.diff(subset) > 0)


class TestNewtonTrain:

    def test_objective_never_increases(self, tiny_network, train_set):
        result = newton_train(tiny_network, train_set, _config(), verbose=False)
        values = [row["f"] for row in result.log]
        start = result.log[0]["f"]
        assert len(result.log) == 4
        assert all(b <= a for a, b in zip(values, values[1:]))
        assert start <= newton_solver.evaluate(
            tiny_network, tiny_network.init_params(3).data, train_set, 1.0,
            newton_solver.make_plan(12, 12)).f
        assert result.status == "completed"

    def test_log_rows(self, tiny_network, train_set, test_set):
        result = newton_train(tiny_network, train_set, _config(max_newton_iters=2), test=test_set,
                              record_time=False, verbose=False)
        assert [list(row) for row in result.log] == [LOG_COLUMNS] * 2
        first = result.log[0]
        assert first["iter"] == 1
        assert first["lambda"] == 1.0
        assert first["seconds"] == 0.0
        assert 0.0 <= first["test_acc"] <= 1.0
        assert 0 < first["alpha"] <= 1.0
        assert result.state.iteration == 2

    def test_without_test_set(self, tiny_network, train_set):
        result = newton_train(tiny_network, train_set, _config(max_newton_iters=1), verbose=False)
        assert math.isnan(result.log[0]["test_acc"])

    def test_deterministic(self, tiny_network, train_set):
        first = newton_train(tiny_network, train_set, _config(), record_time=False, verbose=False)
        second = newton_train(tiny_network, train_set, _config(), record_time=False, verbose=False)
        pd.testing.assert_frame_equal(pd.DataFrame(first.log), pd.DataFrame(second.log))
        np.testing.assert_array_equal(first.theta, second.theta)

    def test_resume_matches_uninterrupted_run(self, tiny_network, train_set):
        straight = newton_train(tiny_network, train_set, _config(max_newton_iters=5),
                                record_time=False, verbose=False)

        saved = {}

        def keep(state, row, rng):
            saved[state.iteration] = (state, rng.bit_generator.state)

        newton_train(tiny_network, train_set, _config(max_newton_iters=3), record_time=False,
                     verbose=False, callback=keep)
        state, rng_state = saved[3]
        resumed = newton_train(tiny_network, train_set, _config(max_newton_iters=5), resume=state,
                               rng_state=rng_state, record_time=False, verbose=False)

        assert [row["iter"] for row in resumed.log] == [4, 5]
        pd.testing.assert_frame_equal(pd.DataFrame(resumed.log), pd.DataFrame(straight.log[3:]))
        np.testing.assert_array_equal(resumed.theta, straight.theta)

    def test_rho_with_lambda_runs(self, tiny_network, train_set):
        result = newton_train(tiny_network, train_set, _config(max_newton_iters=2, rho_with_lambda=True),
                              verbose=False)
        assert len(result.log) == 2

    def test_zero_gradient_converges(self, tiny_network, train_set, monkeypatch):
        original = newton_solver.function_and_gradient

        def flat(*args, **kwargs):
            result = original(*args, **kwargs)
            result.grad = np.zeros_like(result.grad)
            return result

        monkeypatch.setattr(newton_solver, "function_and_gradient", flat)
        result = newton_train(tiny_network, train_set, _config(), verbose=False)
        assert result.status == "converged"
        assert result.log == []

    def test_non_finite_start(self, tiny_network, train_set):
        theta0 = np.full(tiny_network.num_params, np.nan)
        with pytest.raises(NumericalError):
            newton_train(tiny_network, train_set, _config(), theta0=theta0, verbose=False)

    def test_plain_array_start(self, tiny_network, train_set):
        theta0 = tiny_network.init_params(0).data.copy()
        result = newton_train(tiny_network, train_set, _config(max_newton_iters=1), theta0=theta0,
                              verbose=False)
        assert len(result.log) == 1
        assert math.isfinite(result.log[0]["f"])
        assert result.theta.shape == theta0.shape

    def test_zero_iterations(self, tiny_network, train_set):
        result = newton_train(tiny_network, train_set, _config(max_newton_iters=0), verbose=False)
        assert result.log == []
        assert result.state.iteration == 0
