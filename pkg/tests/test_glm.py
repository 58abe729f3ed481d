import math

import numpy as np
import pytest

from philasso.glm import (
    GAUSSIAN,
    LOGIT,
    Dataset,
    gradient,
    irls_working,
    linear_predictor,
    log_likelihood,
    predict,
)


def _rand_dataset(rng, family, n=None, p=None, intercept=True):
    n = n or int(rng.integers(5, 40))
    p = p or int(rng.integers(1, 10))
    X = rng.normal(size=(n, p)) * rng.uniform(0.3, 2.0, p)
    if family == GAUSSIAN:
        y = rng.normal(size=n)
    else:
        y = (rng.uniform(size=n) < 0.5).astype(float)
        if y.min() == y.max():  # keep both classes around
            y[0] = 1 - y[0]
    return Dataset(X=X, y=y, family=family, intercept=intercept)


class TestDataset:
    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError, match="non-finite"):
            Dataset(X=np.array([[np.nan]]), y=np.array([1.0]))

    def test_rejects_bad_logit_response(self):
        with pytest.raises(ValueError, match="logit responses"):
            Dataset(X=np.ones((2, 1)), y=np.array([0.0, 0.5]), family=LOGIT)

    def test_rejects_shape_mismatch(self):
        with pytest.raises(ValueError, match="rows"):
            Dataset(X=np.ones((2, 1)), y=np.ones(3))

    def test_arrays_frozen(self):
        ds = Dataset(X=np.ones((2, 2)), y=np.zeros(2))
        with pytest.raises(ValueError):
            ds.X[0, 0] = 3.0


class TestLogLikelihood:
    def test_gaussian_null(self):
        ds = Dataset(X=np.ones((2, 1)), y=np.array([1.0, -1.0]), intercept=False)
        assert log_likelihood(ds, np.zeros(1)) == -1.0

    def test_logit_null_is_n_log_2(self):
        ds = Dataset(X=np.zeros((4, 1)), y=np.array([0, 1, 0, 1.0]),
                     family=LOGIT, intercept=False)
        assert log_likelihood(ds, np.zeros(1)) == pytest.approx(-4 * math.log(2), abs=1e-14)

    def test_logit_matches_naive_sum(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            ds = _rand_dataset(rng, LOGIT)
            beta = rng.normal(size=ds.p)
            b0 = rng.normal()
            eta = ds.X @ beta + b0
            naive = sum(
                y_i * e_i - math.log(1 + math.exp(e_i)) for y_i, e_i in zip(ds.y, eta)
            )
            assert log_likelihood(ds, beta, b0) == pytest.approx(naive, rel=1e-12)

    def test_logit_overflow_safe(self):
        ds = Dataset(X=np.array([[1.0], [1.0]]), y=np.array([1.0, 0.0]),
                     family=LOGIT, intercept=False)
        val = log_likelihood(ds, np.array([800.0]))
        assert math.isfinite(val)

    def test_row_permutation_invariance(self):
        rng = np.random.default_rng(11)
        for family in (GAUSSIAN, LOGIT):
            ds = _rand_dataset(rng, family)
            beta = rng.normal(size=ds.p)
            perm = rng.permutation(ds.n)
            ds_perm = Dataset(X=ds.X[perm], y=ds.y[perm], family=family,
                              intercept=ds.intercept)
            assert log_likelihood(ds, beta, 0.3) == pytest.approx(
                log_likelihood(ds_perm, beta, 0.3), rel=1e-13)


class TestGradient:
    def test_gaussian_orthonormal_at_zero(self):
        rng = np.random.default_rng(5)
        Q = np.linalg.qr(rng.normal(size=(20, 4)))[0]
        y = rng.normal(size=20)
        ds = Dataset(X=Q, y=y, intercept=False)
        np.testing.assert_allclose(gradient(ds, np.zeros(4)), Q.T @ y, rtol=1e-12)

    @pytest.mark.parametrize("family", [GAUSSIAN, LOGIT])
    def test_matches_central_differences(self, family):
        rng = np.random.default_rng(7)
        h = 1e-5
        for _ in range(25):
            ds = _rand_dataset(rng, family)
            beta = rng.normal(scale=0.5, size=ds.p)
            b0 = rng.normal(scale=0.3)
            g = gradient(ds, beta, b0)
            fd = np.empty(ds.p + 1)
            for j in range(ds.p):
                e = np.zeros(ds.p)
                e[j] = h
                fd[j] = (log_likelihood(ds, beta + e, b0) - log_likelihood(ds, beta - e, b0)) / (2 * h)
            fd[-1] = (log_likelihood(ds, beta, b0 + h) - log_likelihood(ds, beta, b0 - h)) / (2 * h)
            scale = max(1.0, float(np.abs(fd).max()))
            assert np.abs(g - fd).max() / scale < 1e-6

    def test_saturated_logit_gradient_vanishes(self):
        X = np.array([[1.0], [-1.0]])
        ds = Dataset(X=X, y=np.array([1.0, 0.0]), family=LOGIT, intercept=False)
        g = gradient(ds, np.array([40.0]))
        assert np.abs(g).max() <= 1e-12

    def test_intercept_component_appended(self):
        rng = np.random.default_rng(9)
        ds = _rand_dataset(rng, GAUSSIAN, intercept=True)
        assert gradient(ds, np.zeros(ds.p)).shape == (ds.p + 1,)
        ds2 = Dataset(X=ds.X, y=ds.y, family=GAUSSIAN, intercept=False)
        assert gradient(ds2, np.zeros(ds.p)).shape == (ds.p,)


class TestIrlsWorking:
    def test_half_probability_point(self):
        ds = Dataset(X=np.zeros((1, 1)), y=np.array([1.0]), family=LOGIT, intercept=False)
        w, z = irls_working(ds, np.zeros(1))
        assert w[0] == pytest.approx(0.25)
        assert z[0] == pytest.approx(2.0)

    def test_weight_floor(self):
        ds = Dataset(X=np.zeros((1, 1)), y=np.array([1.0]), family=LOGIT, intercept=False)
        w, _ = irls_working(ds, np.array([40.0]))
        assert w[0] == pytest.approx(1e-5)

    def test_gaussian_trivial(self):
        ds = Dataset(X=np.ones((3, 1)), y=np.array([1.0, 2.0, 3.0]), intercept=False)
        w, z = irls_working(ds, np.array([5.0, 5.0, 5.0]))
        np.testing.assert_array_equal(w, np.ones(3))
        np.testing.assert_array_equal(z, ds.y)

    def test_one_irls_step_equals_newton(self):
        rng = np.random.default_rng(21)
        X = rng.normal(size=(30, 3))
        y = (rng.uniform(size=30) < 0.4).astype(float)
        ds = Dataset(X=X, y=y, family=LOGIT, intercept=False)
        beta0 = np.zeros(3)
        eta = X @ beta0
        w, z = irls_working(ds, eta)
        irls_step = np.linalg.solve(X.T @ (w[:, None] * X), X.T @ (w * z))
        mu = 1 / (1 + np.exp(-eta))
        newton = beta0 + np.linalg.solve(
            X.T @ ((mu * (1 - mu))[:, None] * X), X.T @ (y - mu)
        )
        np.testing.assert_allclose(irls_step, newton, atol=1e-10)


class TestPredict:
    def test_logit_half(self):
        ds = Dataset(X=np.zeros((2, 1)), y=np.array([0.0, 1.0]), family=LOGIT, intercept=False)
        np.testing.assert_array_equal(predict(ds, np.zeros(1)), [0.5, 0.5])

    def test_gaussian_unit_vector(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(6, 3))
        ds = Dataset(X=X, y=np.zeros(6), intercept=False)
        e1 = np.array([1.0, 0.0, 0.0])
        np.testing.assert_allclose(predict(ds, e1), X[:, 0])

    def test_logit_clamped(self):
        ds = Dataset(X=np.array([[1.0], [-1.0]]), y=np.array([1.0, 0.0]),
                     family=LOGIT, intercept=False)
        out = predict(ds, np.array([40.0]))
        assert out[0] == 1 - 1e-15
        assert out[1] == 1e-15


class TestConcavity:
    @pytest.mark.parametrize("family", [GAUSSIAN, LOGIT])
    def test_concavity_probe(self, family):
        rng = np.random.default_rng(13)
        for _ in range(40):
            ds = _rand_dataset(rng, family)
            b1, b2 = rng.normal(size=(2, ds.p))
            t = rng.uniform(0.05, 0.95)
            mid = log_likelihood(ds, t * b1 + (1 - t) * b2)
            chord = t * log_likelihood(ds, b1) + (1 - t) * log_likelihood(ds, b2)
            assert mid >= chord - 1e-9
