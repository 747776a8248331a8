"""Tests for the SE-ARD Gaussian-process core."""

import numpy as np
import pytest

from gp_ccopf.errors import FactorizationFailure
from gp_ccopf.gp.kernel import KernelParams, factorize, kernel_eval, kernel_matrix, nll
from gp_ccopf.gp.model import FitOptions, GpModel, MultiGpModel, fit, fit_multi
from gp_ccopf.opf.nlp import central_difference


def _toy_model() -> GpModel:
    rng = np.random.default_rng(4)
    X = rng.uniform(-2.0, 2.0, size=(15, 2))
    y = np.sin(X[:, 0]) + 0.5 * X[:, 1] ** 2
    params = KernelParams(sf2=1.3, lengthscales=np.array([0.8, 1.2]), sn2=1e-4)
    return GpModel.from_params(X, y, params, standardize=True, center=True)


POINT = np.array([0.3, -0.7])


class TestKernel:
    """Kernel evaluation and factorization."""

    def test_self_covariance(self):
        """k(x, x) equals the signal variance."""
        params = KernelParams(2.0, np.array([1.0, 3.0]), 0.1)
        assert kernel_eval(params, POINT, POINT) == pytest.approx(2.0)

    def test_matrix_matches_pointwise(self):
        """The vectorized matrix agrees with single evaluations."""
        params = KernelParams(1.5, np.array([0.5, 2.0]), 0.1)
        A = np.array([[0.0, 0.0], [1.0, -1.0]])
        B = np.array([[0.5, 0.5]])
        K = kernel_matrix(params, A, B)
        assert K[1, 0] == pytest.approx(kernel_eval(params, A[1], B[0]))

    def test_jitter_escalation(self):
        """A singular PSD matrix factorizes after adding jitter."""
        (_, _), jitter = factorize(np.ones((3, 3)))
        assert jitter > 0

    def test_indefinite_matrix(self):
        """Indefinite matrices raise FactorizationFailure."""
        with pytest.raises(FactorizationFailure):
            factorize(-np.eye(3))

    def test_nll_gradient(self):
        """The analytic NLL gradient matches central differences in log space."""
        rng = np.random.default_rng(0)
        X = rng.normal(size=(12, 2))
        y = np.cos(X[:, 0]) - X[:, 1]
        theta = KernelParams(0.9, np.array([1.1, 0.7]), 0.05).to_log()
        _, grad = nll(KernelParams.from_log(theta), X, y)
        numeric = central_difference(lambda t: np.array([nll(KernelParams.from_log(t), X, y)[0]]), theta, 1e-6)[0]
        np.testing.assert_allclose(grad, numeric, rtol=1e-4, atol=1e-6)


class TestPrediction:
    """Predictive moments and their derivatives."""

    def test_interpolates_training_data(self):
        """With little noise the mean passes close to the targets."""
        model = _toy_model()
        mean, var = model.predict(model.X)
        np.testing.assert_allclose(mean, model.y, atol=0.1)
        assert np.all(var < 1e-2)

    def test_prior_far_away(self):
        """Far from the data the variance returns to the signal variance."""
        model = _toy_model()
        _, var = model.predict(np.array([500.0, 500.0]))
        assert var == pytest.approx(model.params.sf2)

    def test_scalar_for_single_point(self):
        """One-dimensional input gives scalar moments."""
        mean, var = _toy_model().predict(POINT)
        assert isinstance(mean, float) and isinstance(var, float)

    def test_mean_gradient(self):
        """Mean gradient matches central differences in raw input space."""
        model = _toy_model()
        numeric = central_difference(lambda x: np.array([model.predict(x)[0]]), POINT, 1e-5)[0]
        np.testing.assert_allclose(model.mean_gradient(POINT), numeric, rtol=1e-5, atol=1e-7)

    def test_variance_gradient(self):
        """Variance gradient matches central differences."""
        model = _toy_model()
        numeric = central_difference(lambda x: np.array([model.predict(x)[1]]), POINT, 1e-5)[0]
        np.testing.assert_allclose(model.variance_gradient(POINT), numeric, rtol=1e-5, atol=1e-7)

    def test_mean_hessian(self):
        """Mean Hessian matches differences of the gradient and is symmetric."""
        model = _toy_model()
        H = model.mean_hessian(POINT)
        numeric = central_difference(model.mean_gradient, POINT, 1e-5)
        np.testing.assert_allclose(H, numeric, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(H, H.T, atol=1e-12)

    def test_variance_hessian(self):
        """Variance Hessian matches differences of the variance gradient."""
        model = _toy_model()
        numeric = central_difference(model.variance_gradient, POINT, 1e-5)
        np.testing.assert_allclose(model.variance_hessian(POINT), numeric, rtol=1e-4, atol=1e-6)


class TestFitting:
    """Hyperparameter fitting."""

    def test_fit_smooth_function(self):
        """A fitted GP generalizes on a smooth one-dimensional function."""
        X = np.linspace(0.0, 6.0, 25)[:, None]
        model = fit(X, np.sin(X[:, 0]), FitOptions(restarts=3))
        X_test = np.linspace(0.2, 5.8, 11)[:, None]
        mean, _ = model.predict(X_test)
        assert np.sqrt(np.mean((mean - np.sin(X_test[:, 0])) ** 2)) < 0.05
        assert np.isfinite(model.nll)

    def test_fit_is_deterministic(self):
        """The same seed yields the same hyperparameters."""
        X = np.linspace(0.0, 3.0, 10)[:, None]
        y = X[:, 0] ** 2
        a = fit(X, y, FitOptions(restarts=2, seed=5))
        b = fit(X, y, FitOptions(restarts=2, seed=5))
        np.testing.assert_array_equal(a.params.to_log(), b.params.to_log())

    def test_fit_multi_column_order(self):
        """Outputs are fitted independently and kept in column order."""
        X = np.linspace(-1.0, 1.0, 12)[:, None]
        Y = np.column_stack([X[:, 0], -2.0 * X[:, 0]])
        model = fit_multi(X, Y, FitOptions(restarts=1), workers=2, y_labels=["a", "b"])
        mean, _ = model.predict(np.array([0.5]))
        np.testing.assert_allclose(mean, [0.5, -1.0], atol=1e-2)
        assert model.y_labels == ["a", "b"]


class TestMultiGpModel:
    """Multi-output container."""

    def test_save_and_load(self, tmp_path):
        """A reloaded model predicts identically."""
        base = _toy_model()
        other = GpModel.from_params(base.X, base.y * 2, base.params, standardize=True)
        model = MultiGpModel([base, other], x_labels=["a", "b"], y_labels=["y0", "y1"])
        loaded = MultiGpModel.load(model.save(tmp_path / "model.json"))
        np.testing.assert_allclose(loaded.predict(POINT)[0], model.predict(POINT)[0], rtol=1e-12)
        assert loaded.fingerprint == model.fingerprint

    def test_requires_shared_inputs(self):
        """All members must be trained on the same inputs."""
        base = _toy_model()
        shifted = GpModel.from_params(base.X + 1.0, base.y, base.params)
        with pytest.raises(ValueError):
            MultiGpModel([base, shifted])

    def test_batch_shapes(self):
        """Batch prediction returns one column per output."""
        base = _toy_model()
        model = MultiGpModel([base, base])
        mean, var = model.predict_batch(np.zeros((4, 2)))
        assert mean.shape == var.shape == (4, 2)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
