"""Kernel ridge solver, leave-one-out forms, and the Gaussian tabular kernel."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from compkern import (
    DEFAULT_LAMBDA_GRID,
    FactorizationError,
    RidgeModel,
    bandwidth_grid,
    gaussian_gram,
    lambda_sweep,
    loo_predict,
    median_heuristic,
    predict,
    ridge_fit,
    tilted_fit,
)


def spd_problem(rng, n=12, c=3, scale=1.0):
    """A well-conditioned SPD kernel with one-hot labels."""
    basis = rng.standard_normal((n, n))
    kernel = basis @ basis.T / n + scale * np.eye(n)
    labels = np.eye(c)[rng.integers(0, c, size=n)]
    return kernel, labels


class TestRidgeFit:
    def test_solves_the_system(self, rng):
        kernel, labels = spd_problem(rng)
        model = ridge_fit(kernel, labels, lam=0.5)
        system = kernel + 0.5 * np.eye(len(kernel))
        assert_allclose(system @ model.alpha, labels, atol=1e-10)
        assert model.lam == 0.5
        assert model.tilt == 0.0 and not model.tilted
        assert np.array_equal(model.labels, labels)

    def test_lambda_zero_on_positive_definite_kernel(self, rng):
        kernel, labels = spd_problem(rng, scale=2.0)
        model = ridge_fit(kernel, labels, lam=0.0)
        assert_allclose(kernel @ model.alpha, labels, atol=1e-9)

    def test_label_shape_mismatch(self, rng):
        kernel, labels = spd_problem(rng)
        with pytest.raises(ValueError, match="labels shape"):
            ridge_fit(kernel, labels[:-1], lam=1.0)
        with pytest.raises(ValueError, match="labels shape"):
            ridge_fit(kernel, labels[:, 0], lam=1.0)

    def test_negative_lambda_rejected(self, rng):
        kernel, labels = spd_problem(rng)
        with pytest.raises(ValueError, match=">= 0"):
            ridge_fit(kernel, labels, lam=-0.1)

    def test_indefinite_kernel_raises_with_advice(self):
        kernel = -np.eye(4)
        with pytest.raises(FactorizationError, match="increase lambda"):
            ridge_fit(kernel, np.eye(4), lam=0.0)

    def test_factorization_error_is_linalg_error(self):
        assert issubclass(FactorizationError, np.linalg.LinAlgError)

    def test_jitter_rescues_target_in_column_space(self):
        # Exactly singular rank-1 kernel; the target lies in its range, so
        # the jittered solve still meets the residual bound.
        kernel = np.ones((4, 4))
        target = np.ones((4, 1))
        model = ridge_fit(kernel, target, lam=0.0)
        assert_allclose(kernel @ model.alpha, target, atol=1e-6)

    def test_jitter_cannot_rescue_orthogonal_target(self):
        # Same singular kernel, but the target is orthogonal to its range:
        # no coefficient vector can reproduce it, so the residual check trips.
        kernel = np.ones((4, 4))
        target = np.array([[1.0], [-1.0], [0.0], [0.0]])
        with pytest.raises(ValueError, match="residual"):
            ridge_fit(kernel, target, lam=0.0)


class TestPredict:
    def test_scores_and_argmax(self):
        alpha = np.array([[1.0, 0.0], [0.0, 1.0]])
        model = RidgeModel(alpha=alpha, lam=1.0, tilt=0.0,
                           labels=np.eye(2), tilted=False)
        cross = np.array([[2.0, 0.5], [0.1, 0.2]])
        pred, scores = predict(model, cross)
        assert_allclose(scores, cross)
        assert np.array_equal(pred, [0, 1])

    def test_tie_goes_to_lowest_class(self):
        alpha = np.eye(3)
        model = RidgeModel(alpha=alpha, lam=1.0, tilt=0.0,
                           labels=np.eye(3), tilted=False)
        pred, _ = predict(model, np.array([[0.7, 0.7, 0.1]]))
        assert pred[0] == 0

    def test_column_count_checked(self, rng):
        kernel, labels = spd_problem(rng, n=6)
        model = ridge_fit(kernel, labels, lam=1.0)
        with pytest.raises(ValueError, match="columns"):
            predict(model, rng.standard_normal((3, 5)))


class TestLeaveOneOut:
    def test_matches_explicit_refits(self, rng):
        kernel, labels = spd_problem(rng, n=10)
        lam = 0.3
        loo = loo_predict(kernel, labels, lam)
        for i in range(10):
            keep = np.arange(10) != i
            sub = kernel[np.ix_(keep, keep)] + lam * np.eye(9)
            alpha = np.linalg.solve(sub, labels[keep])
            direct = kernel[i, keep] @ alpha
            assert_allclose(loo.values[i], direct, atol=1e-10)

    def test_single_example_predicts_zero(self):
        loo = loo_predict(np.array([[2.0]]), np.array([[1.0, 0.0]]), lam=0.5)
        assert np.array_equal(loo.values, np.zeros((1, 2)))

    def test_two_examples_cross_predict(self):
        # With N=2 each row is predicted from the other example alone:
        # score = K12 / (K22 + lam) * y2.
        kernel = np.array([[2.0, 1.0], [1.0, 3.0]])
        labels = np.array([[1.0], [2.0]])
        lam = 0.5
        loo = loo_predict(kernel, labels, lam)
        assert_allclose(loo.values[0, 0], 1.0 / 3.5 * 2.0, atol=1e-12)
        assert_allclose(loo.values[1, 0], 1.0 / 2.5 * 1.0, atol=1e-12)


class TestTiltedFit:
    def test_zero_tilt_is_bitwise_plain_fit(self, rng):
        kernel, labels = spd_problem(rng)
        plain = ridge_fit(kernel, labels, lam=0.7)
        tilted = tilted_fit(kernel, labels, lam=0.7, tilt=0.0)
        assert np.array_equal(plain.alpha, tilted.alpha)
        assert tilted.tilted

    def test_matches_manual_two_step(self, rng):
        kernel, labels = spd_problem(rng, n=8)
        lam, t = 0.4, 0.3
        model = tilted_fit(kernel, labels, lam, tilt=t)
        y_loo = loo_predict(kernel, labels, lam).values
        system = kernel + lam * np.eye(8)
        manual = np.linalg.solve(system, labels - t * y_loo)
        assert_allclose(model.alpha, manual, atol=1e-10)
        assert model.tilt == t

    @pytest.mark.parametrize("tilt", [-0.1, 1.0, 1.5])
    def test_tilt_range_enforced(self, rng, tilt):
        kernel, labels = spd_problem(rng)
        with pytest.raises(ValueError, match="tilt"):
            tilted_fit(kernel, labels, lam=1.0, tilt=tilt)


class TestLambdaSweep:
    def make_split(self, rng, n_train=24, n_test=12, c=3):
        centers = rng.standard_normal((c, 5)) * 4
        y_train = rng.integers(0, c, size=n_train)
        y_test = rng.integers(0, c, size=n_test)
        x_train = centers[y_train] + rng.standard_normal((n_train, 5)) * 0.3
        x_test = centers[y_test] + rng.standard_normal((n_test, 5)) * 0.3
        k_train = gaussian_gram(x_train, None, gamma=2.0).values
        k_cross = gaussian_gram(x_test, x_train, gamma=2.0).values
        return k_train, np.eye(c)[y_train], k_cross, y_test

    def test_holdout_finds_a_working_lambda(self, rng):
        k, y, kx, y_test = self.make_split(rng)
        result = lambda_sweep(k, y, ("holdout", kx, y_test),
                              grid=(1e-3, 1e-1, 10.0))
        assert result.best_lambda in (1e-3, 1e-1, 10.0)
        assert result.accuracies[result.best_lambda] >= 0.8
        assert not result.errors

    def test_tie_resolves_to_smaller_lambda(self, rng):
        k, y, kx, y_test = self.make_split(rng)
        # Two tiny lambdas whose predictions agree exactly in accuracy.
        result = lambda_sweep(k, y, ("holdout", kx, y_test), grid=(1e-7, 1e-8))
        acc = result.accuracies
        if acc[1e-7] == acc[1e-8]:
            assert result.best_lambda == 1e-8
        else:
            assert result.best_lambda == max(acc, key=acc.get)

    def test_failed_lambda_recorded_and_skipped(self, rng):
        kernel = np.ones((6, 6))  # singular: lambda = 0 cannot be solved
        labels = np.eye(2)[np.array([0, 1, 0, 1, 0, 1])]
        result = lambda_sweep(kernel, labels, ("folds", 3, 0), grid=(0.0, 1.0))
        assert 0.0 in result.errors
        assert result.best_lambda == 1.0

    def test_all_failures_raise(self):
        kernel = -np.eye(4)
        labels = np.eye(2)[np.array([0, 1, 0, 1])]
        with pytest.raises(ValueError, match="every lambda failed"):
            lambda_sweep(kernel, labels, ("folds", 2, 0), grid=(0.0,))

    def test_folds_deterministic_under_seed(self, rng):
        k, y, _, _ = self.make_split(rng)
        a = lambda_sweep(k, y, ("folds", 4, 9), grid=(0.1, 1.0))
        b = lambda_sweep(k, y, ("folds", 4, 9), grid=(0.1, 1.0))
        assert a.accuracies == b.accuracies
        assert a.best_lambda == b.best_lambda

    def test_default_grid_runs_every_value(self, rng):
        k, y, kx, y_test = self.make_split(rng)
        result = lambda_sweep(k, y, ("holdout", kx, y_test))
        assert len(result.accuracies) + len(result.errors) == len(DEFAULT_LAMBDA_GRID)

    def test_empty_grid_rejected(self, rng):
        k, y, kx, y_test = self.make_split(rng)
        with pytest.raises(ValueError, match="nonempty"):
            lambda_sweep(k, y, ("holdout", kx, y_test), grid=())

    def test_unknown_mode_rejected(self, rng):
        k, y, _, _ = self.make_split(rng)
        # Mode errors surface per-lambda; with a one-point grid they all fail.
        with pytest.raises(ValueError, match="every lambda failed"):
            lambda_sweep(k, y, ("bogus",), grid=(1.0,))

    def test_grid_default_constant(self):
        assert DEFAULT_LAMBDA_GRID[0] == 0.0
        assert DEFAULT_LAMBDA_GRID[1] == 1e-4
        assert DEFAULT_LAMBDA_GRID[-1] == 1e6
        assert len(DEFAULT_LAMBDA_GRID) == 12


class TestGaussianGram:
    def test_entry_formula(self, rng):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((5, 3))
        gram = gaussian_gram(a, b, gamma=1.5)
        i, j = 2, 4
        expected = np.exp(-np.sum((a[i] - b[j]) ** 2) / (2 * 1.5 ** 2))
        assert_allclose(gram.values[i, j], expected, atol=1e-12)
        assert gram.values.shape == (4, 5)
        assert not gram.symmetric

    def test_symmetric_case(self, rng):
        a = rng.standard_normal((6, 3))
        gram = gaussian_gram(a, None, gamma=1.0)
        assert gram.symmetric
        assert np.array_equal(gram.values, gram.values.T)
        assert_allclose(np.diag(gram.values), 1.0, atol=1e-12)

    def test_gamma_must_be_positive(self, rng):
        a = rng.standard_normal((3, 2))
        for gamma in (0.0, -1.0):
            with pytest.raises(ValueError, match="gamma"):
                gaussian_gram(a, None, gamma)


class TestBandwidthHelpers:
    def test_median_of_three_collinear_points(self):
        rows = np.array([[0.0], [1.0], [3.0]])
        assert median_heuristic(rows) == 2.0

    def test_capped_subsample_is_seeded(self, rng):
        rows = rng.standard_normal((300, 4))
        a = median_heuristic(rows, cap=50, seed=1)
        b = median_heuristic(rows, cap=50, seed=1)
        c = median_heuristic(rows, cap=50, seed=2)
        assert a == b
        assert a != c  # different subsample, almost surely different median

    def test_needs_two_rows(self):
        with pytest.raises(ValueError, match="2 rows"):
            median_heuristic(np.zeros((1, 3)))

    def test_grid_spans_forty_octaves(self):
        grid = bandwidth_grid(3.0)
        assert len(grid) == 40
        assert grid[0] == 3.0 * 2.0 ** -19
        assert grid[-1] == 3.0 * 2.0 ** 20
        assert all(b == a * 2.0 for a, b in zip(grid, grid[1:]))
