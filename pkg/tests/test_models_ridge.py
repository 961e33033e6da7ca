import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loopsim.data import Dataset, SplitSpec, split, synthesize
from loopsim.models import (
    ModelError,
    RidgeModel,
    SingularSystemError,
    Standardizer,
    fit_ridge,
    fit_standardizer,
    predict,
)


def _mini_ds(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return Dataset(X, y, np.arange(len(y), dtype=np.int64))


class TestStandardizer:
    def test_population_sd_convention(self):
        # sd of {1, 3} about mean 2 is 1 under the population convention
        std = fit_standardizer(np.array([[1.0], [3.0]]))
        assert std.means[0] == 2.0
        assert std.sds[0] == 1.0

    def test_constant_column_gets_unit_sd(self):
        std = fit_standardizer(np.array([[5.0, 1.0], [5.0, 2.0]]))
        assert std.sds[0] == 1.0
        Xs = std.transform(np.array([[5.0, 1.5]]))
        assert Xs[0, 0] == 0.0

    def test_transform_inverse_round_trip(self):
        rng = np.random.default_rng(0)
        X = rng.normal(3.0, 2.5, size=(40, 4))
        std = fit_standardizer(X)
        assert np.max(np.abs(std.inverse_transform(std.transform(X)) - X)) < 1e-12

    def test_transformed_moments(self):
        rng = np.random.default_rng(1)
        X = rng.normal(-2.0, 7.0, size=(200, 3))
        Xs = fit_standardizer(X).transform(X)
        assert np.max(np.abs(Xs.mean(axis=0))) < 1e-10
        assert np.max(np.abs(Xs.std(axis=0) - 1.0)) < 1e-10

    def test_needs_two_rows(self):
        with pytest.raises(ModelError, match="2 rows"):
            fit_standardizer(np.ones((1, 3)))


def _gd_oracle(train, alpha, tol=1e-12, max_iter=200000):
    """Steepest descent with exact line search on the ridge objective.

    Minimizes ||Xs t - yc||^2 + alpha ||t||^2 over t, with Xs the
    standardized features and yc the mean-centered targets. The objective
    is quadratic, so the exact step along -g is (g.g)/(g.H g).
    """
    std = fit_standardizer(train.features)
    Xs = std.transform(train.features)
    yc = train.targets - train.targets.mean()
    d = Xs.shape[1]
    H = 2.0 * (Xs.T @ Xs + alpha * np.eye(d))
    t = np.zeros(d)
    for _ in range(max_iter):
        g = 2.0 * (Xs.T @ (Xs @ t - yc) + alpha * t)
        gg = g @ g
        if gg < tol * tol:
            break
        t = t - (gg / (g @ H @ g)) * g
    return t, float(train.targets.mean())


class TestFitRidge:
    def test_two_point_interpolation_alpha_zero(self):
        ds = _mini_ds([[0.0], [1.0]], [0.0, 1.0])
        model = fit_ridge(ds, 0.0)
        preds = predict(model, np.array([[0.0], [1.0], [0.25]]))
        assert np.allclose(preds, [0.0, 1.0, 0.25], atol=1e-12)

    def test_huge_alpha_collapses_to_target_mean(self):
        ds = synthesize(60, 4, 0.3, 5)
        model = fit_ridge(ds, 1e12)
        preds = predict(model, ds.features)
        assert np.max(np.abs(preds - ds.targets.mean())) < 1e-6

    def test_matches_gradient_descent_small(self):
        ds = synthesize(50, 3, 0.2, 2)
        for alpha in (0.01, 1.0, 100.0):
            model = fit_ridge(ds, alpha)
            theta_gd, b_gd = _gd_oracle(ds, alpha)
            assert np.max(np.abs(model.theta - theta_gd)) < 1e-6
            assert abs(model.b - b_gd) < 1e-12

    def test_matches_gradient_descent_full_width(self):
        ds = synthesize(200, 13, 0.2, 4)
        model = fit_ridge(ds, 1.0)
        theta_gd, _ = _gd_oracle(ds, 1.0)
        assert np.max(np.abs(model.theta - theta_gd)) < 1e-6

    def test_solution_is_a_local_minimum(self):
        ds = synthesize(80, 5, 0.25, 7)
        alpha = 0.5
        model = fit_ridge(ds, alpha)
        std = model.standardizer
        Xs = std.transform(ds.features)
        yc = ds.targets - ds.targets.mean()

        def loss(t):
            r = Xs @ t - yc
            return r @ r + alpha * (t @ t)

        base = loss(model.theta)
        rng = np.random.default_rng(0)
        for _ in range(50):
            delta = rng.normal(0.0, 1e-3, size=model.d)
            assert loss(model.theta + delta) >= base

    def test_alpha_zero_agrees_with_lstsq(self):
        ds = synthesize(100, 6, 0.4, 9)
        model = fit_ridge(ds, 0.0)
        std = fit_standardizer(ds.features)
        Xs = std.transform(ds.features)
        yc = ds.targets - ds.targets.mean()
        ref, *_ = np.linalg.lstsq(Xs, yc, rcond=None)
        assert np.max(np.abs(model.theta - ref)) < 1e-8

    def test_duplicate_column_singular_at_alpha_zero(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=20)
        X = np.column_stack([x, x])
        ds = _mini_ds(X, rng.normal(size=20))
        with pytest.raises(SingularSystemError):
            fit_ridge(ds, 0.0)
        # the same system regularizes fine
        fit_ridge(ds, 0.1)

    def test_deterministic_bit_identical(self, ds506):
        a = fit_ridge(ds506, 1.0)
        b = fit_ridge(ds506, 1.0)
        assert np.array_equal(a.theta, b.theta)
        assert a.b == b.b

    def test_alpha_validation(self):
        ds = synthesize(10, 2, 0.1, 0)
        with pytest.raises(ModelError, match="alpha"):
            fit_ridge(ds, -1.0)

    def test_needs_d_plus_one_rows(self):
        ds = synthesize(5, 4, 0.1, 0).take(np.arange(4))
        with pytest.raises(ModelError, match="rows"):
            fit_ridge(ds, 1.0)

    @given(st.floats(min_value=0.001, max_value=1000.0), st.integers(0, 50))
    @settings(max_examples=30, deadline=None)
    def test_residual_orthogonality(self, alpha, seed):
        # first-order condition: Xs'(Xs t - yc) + alpha t = 0
        ds = synthesize(30, 3, 0.3, seed)
        model = fit_ridge(ds, alpha)
        Xs = model.standardizer.transform(ds.features)
        yc = ds.targets - ds.targets.mean()
        g = Xs.T @ (Xs @ model.theta - yc) + alpha * model.theta
        assert np.max(np.abs(g)) < 1e-8


class TestPredict:
    def test_zero_theta_is_constant_intercept(self):
        model = RidgeModel(
            theta=np.zeros(3),
            b=2.5,
            standardizer=Standardizer(np.zeros(3), np.ones(3)),
            alpha=1.0,
        )
        preds = predict(model, np.random.default_rng(0).normal(size=(7, 3)))
        assert np.array_equal(preds, np.full(7, 2.5))

    def test_one_dim_input_reshaped(self):
        ds = _mini_ds([[0.0], [1.0], [2.0]], [0.0, 1.0, 2.0])
        model = fit_ridge(ds, 0.0)
        single = predict(model, np.array([1.5]))
        assert single.shape == (1,)
        assert abs(single[0] - 1.5) < 1e-12

    def test_dimension_mismatch(self):
        ds = synthesize(20, 3, 0.1, 0)
        model = fit_ridge(ds, 1.0)
        with pytest.raises(ModelError, match="dimension mismatch"):
            predict(model, np.ones((4, 5)))

    def test_unknown_model_type_rejected(self):
        with pytest.raises(ModelError, match="unknown model type"):
            predict(object(), np.ones((2, 2)))
