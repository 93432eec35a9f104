"""Scikit-learn-style estimator layer.

Wraps the kernel engine, preprocessing, and the ridge solver in
``fit``/``transform``/``predict`` estimators with ``get_params`` support, so
they compose with pipelines, grid search, and the 4-fold tuning protocol.

- :class:`ChannelStandardizer` — zero-mean/unit-variance per channel or
  feature.
- :class:`ZCAWhitener` — ZCA whitening learned on the training split.
- :class:`CompositionalKernel` — architecture-defined kernel; ``transform``
  returns rows of the kernel matrix against the fitted training set.
- :class:`GaussianKernel` — tabular Gaussian kernel with an optional
  median-distance bandwidth.
- :class:`KernelRidgeClassifier` — one-hot kernel ridge with optional
  leave-one-out tilting.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin, clone
from sklearn.utils.validation import check_array, check_is_fitted

from . import ridge
from .arch import ArchSpec, parse_arch
from .engine import compose_kernel

_STD_FLOOR = 1e-8


def _check_images(x, name: str = "X") -> np.ndarray:
    """Validate a (N, height, width, channels) image array."""
    arr = check_array(x, allow_nd=True, dtype=(np.float32, np.float64))
    if arr.ndim != 4:
        raise ValueError(
            f"{name} must have shape (n_samples, height, width, channels), "
            f"got {arr.shape}"
        )
    return arr


class ChannelStandardizer(TransformerMixin, BaseEstimator):
    """Standardize to zero mean and unit variance.

    4-D inputs (images) are standardized per channel with statistics pooled
    over samples and pixels; 2-D inputs per feature.  Standard deviations
    are floored at 1e-8, so constant channels map to zeros.
    """

    def fit(self, X, y=None):
        arr = check_array(X, allow_nd=True, dtype=np.float64)
        if arr.ndim == 4:
            axes = (0, 1, 2)
        elif arr.ndim == 2:
            axes = (0,)
        else:
            raise ValueError(f"expected 2-D or 4-D input, got shape {arr.shape}")
        self.mean_ = arr.mean(axis=axes)
        self.scale_ = np.maximum(arr.std(axis=axes), _STD_FLOOR)
        self.n_features_in_ = arr.shape[-1] if arr.ndim == 2 else None
        return self

    def transform(self, X):
        check_is_fitted(self, "mean_")
        arr = check_array(X, allow_nd=True, dtype=np.float64)
        if arr.shape[arr.ndim - self.mean_.ndim:] != self.mean_.shape:
            raise ValueError(
                f"input shape {arr.shape} does not match fitted statistics "
                f"{self.mean_.shape}"
            )
        return ((arr - self.mean_) / self.scale_).astype(np.float32)


class ZCAWhitener(TransformerMixin, BaseEstimator):
    """ZCA whitening learned from the training split.

    Parameters
    ----------
    eps : float, optional
        Eigenvalue floor; None selects ``1e-5 * trace(cov) / d``.
    """

    def __init__(self, eps=None):
        self.eps = eps

    def fit(self, X, y=None):
        from .data import zca_fit

        arr = check_array(X, allow_nd=True, dtype=np.float64)
        self.transform_ = zca_fit(arr, eps=self.eps)
        return self

    def transform(self, X):
        from .data import zca_apply

        check_is_fitted(self, "transform_")
        arr = check_array(X, allow_nd=True, dtype=np.float64)
        out = zca_apply(self.transform_, arr)
        return out.astype(np.float32)


class CompositionalKernel(TransformerMixin, BaseEstimator):
    """Architecture-defined kernel rows against a fitted training set.

    ``fit`` stores the training images; ``transform(X)`` returns the kernel
    matrix between ``X`` and the training set, shape
    ``(n_samples, n_fitted)`` — directly usable with
    ``KernelRidgeClassifier(kernel="precomputed")``.

    Parameters
    ----------
    arch : str or ArchSpec, default=""
        Architecture text (one layer per line) or a parsed spec.  The empty
        architecture is the plain dot-product kernel over channels.
    tile : int, optional
        Tile edge for the blocked computation; None picks a memory-based
        default.
    workers : int, default=1
        Worker processes for tile evaluation.
    cache_dir : str, optional
        Directory for the persistent tile cache.
    """

    def __init__(self, arch="", tile=None, workers=1, cache_dir=None):
        self.arch = arch
        self.tile = tile
        self.workers = workers
        self.cache_dir = cache_dir

    def _spec(self) -> ArchSpec:
        if isinstance(self.arch, ArchSpec):
            return self.arch
        return parse_arch(self.arch)

    def fit(self, X, y=None):
        self.images_fit_ = _check_images(X).astype(np.float32)
        self._spec()  # validate the architecture text early
        return self

    def transform(self, X):
        check_is_fitted(self, "images_fit_")
        images = _check_images(X).astype(np.float32)
        same = images.shape == self.images_fit_.shape and np.array_equal(
            images, self.images_fit_
        )
        gram = compose_kernel(
            self.images_fit_ if same else images,
            None if same else self.images_fit_,
            self._spec(),
            tile=self.tile,
            workers=self.workers,
            cache=self.cache_dir,
        )
        return gram.values


class GaussianKernel(TransformerMixin, BaseEstimator):
    """Tabular Gaussian kernel ``exp(-||x - z||^2 / (2 gamma^2))``.

    Parameters
    ----------
    gamma : float, optional
        Length scale; None selects the median pairwise distance of the
        training rows at fit time.
    median_seed : int, default=0
        Seed for the median-heuristic subsample on large training sets.
    """

    def __init__(self, gamma=None, median_seed=0):
        self.gamma = gamma
        self.median_seed = median_seed

    def fit(self, X, y=None):
        rows = check_array(X, dtype=np.float64)
        self.rows_fit_ = rows
        self.gamma_ = (
            ridge.median_heuristic(rows, seed=self.median_seed)
            if self.gamma is None
            else float(self.gamma)
        )
        if self.gamma_ <= 0:
            raise ValueError(f"resolved length scale must be > 0, got {self.gamma_}")
        self.n_features_in_ = rows.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "rows_fit_")
        rows = check_array(X, dtype=np.float64)
        same = rows.shape == self.rows_fit_.shape and np.array_equal(
            rows, self.rows_fit_
        )
        gram = ridge.gaussian_gram(rows, None if same else self.rows_fit_, self.gamma_)
        return gram.values


class KernelRidgeClassifier(ClassifierMixin, BaseEstimator):
    """One-hot kernel ridge classification with optional tilting.

    Parameters
    ----------
    kernel : str or estimator, default="gaussian"
        ``"gaussian"`` builds a :class:`GaussianKernel` (see ``gamma``);
        ``"precomputed"`` treats ``X`` as kernel rows (fit: the square
        training kernel; predict: test-vs-train rows); any estimator with
        ``fit``/``transform`` is cloned and used as the kernel.
    lam : float, default=1.0
        Ridge regularization.
    tilt : float, default=0.0
        Leave-one-out tilt in [0, 1); 0 is a plain ridge fit.
    gamma : float, optional
        Length scale for the built-in Gaussian kernel; None uses the median
        heuristic.

    Attributes
    ----------
    classes_ : ndarray
        Sorted class labels.
    model_ : RidgeModel
        Fitted dual coefficients and metadata.
    """

    def __init__(self, kernel="gaussian", lam=1.0, tilt=0.0, gamma=None):
        self.kernel = kernel
        self.lam = lam
        self.tilt = tilt
        self.gamma = gamma

    def _build_kernel(self):
        if self.kernel == "gaussian":
            return GaussianKernel(gamma=self.gamma)
        if isinstance(self.kernel, str):
            raise ValueError(
                f"unknown kernel {self.kernel!r}; expected 'gaussian', "
                "'precomputed', or an estimator"
            )
        return clone(self.kernel)

    def fit(self, X, y):
        y = np.asarray(y)
        if y.ndim != 1:
            raise ValueError(f"y must be 1-D, got shape {y.shape}")
        self.classes_, encoded = np.unique(y, return_inverse=True)
        onehot = np.zeros((y.shape[0], self.classes_.size), dtype=np.float64)
        onehot[np.arange(y.shape[0]), encoded] = 1.0

        if self.kernel == "precomputed":
            gram = check_array(X, dtype=np.float64)
            if gram.shape[0] != gram.shape[1]:
                raise ValueError(
                    f"precomputed training kernel must be square, got {gram.shape}"
                )
            self.kernel_ = None
        else:
            self.kernel_ = self._build_kernel().fit(X)
            gram = self.kernel_.transform(X)
        if gram.shape[0] != y.shape[0]:
            raise ValueError(
                f"kernel has {gram.shape[0]} rows but y has {y.shape[0]} entries"
            )
        self.model_ = (
            ridge.tilted_fit(gram, onehot, self.lam, self.tilt)
            if self.tilt
            else ridge.ridge_fit(gram, onehot, self.lam)
        )
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        if self.kernel == "precomputed":
            cross = check_array(X, dtype=np.float64)
        else:
            cross = self.kernel_.transform(X)
        _, scores = ridge.predict(self.model_, cross)
        return scores

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]
