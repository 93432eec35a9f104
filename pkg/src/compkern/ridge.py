"""Kernel ridge regression with closed-form leave-one-out and tilting.

Fits solve ``(K + lambda I) alpha = Y`` through a symmetric positive-definite
factorization (with a one-shot diagonal jitter fallback), verify the residual
against a relative tolerance, and support:

- closed-form leave-one-out predictions ``Y_loo = Y - alpha / diag(Q)`` with
  ``Q = (K + lambda I)^{-1}`` — equal to N brute-force refits;
- leave-one-out tilting: refit against ``Y - t * Y_loo`` (default t = 0.3);
- a regularization sweep that picks the best holdout/cross-validated
  accuracy, preferring smaller lambda on ties;
- the tabular Gaussian kernel ``exp(-||x - z||^2 / (2 gamma^2))`` with a
  median-distance bandwidth grid.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.spatial.distance import pdist

from .engine import GramMatrix

#: Default regularization grid: 0 plus decade steps from 1e-4 to 1e6.
DEFAULT_LAMBDA_GRID = (0.0,) + tuple(10.0 ** e for e in range(-4, 7))

_RESIDUAL_RTOL = 1e-6
_JITTER_SCALE = 1e-8


class FactorizationError(np.linalg.LinAlgError):
    """The regularized kernel matrix could not be factorized."""


@dataclass
class RidgeModel:
    """A fitted kernel ridge model.

    Parameters
    ----------
    alpha : ndarray of shape (N, C)
        Dual coefficients solving ``(K + lam I) alpha = Y_effective``.
    lam : float
        Regularization strength.
    tilt : float
        Leave-one-out tilt ``t`` (0 for a plain fit).
    labels : ndarray of shape (N, C)
        The one-hot training targets the model was fitted against.
    tilted : bool
        Whether the fit went through the tilted path.
    """

    alpha: np.ndarray
    lam: float
    tilt: float
    labels: np.ndarray
    tilted: bool = False


@dataclass
class LooPrediction:
    """Closed-form leave-one-out predictions.

    Parameters
    ----------
    values : ndarray of shape (N, C)
        Row ``i`` is the prediction for example ``i`` from a model fitted
        without it.
    """

    values: np.ndarray


@dataclass
class SweepResult:
    """Outcome of a regularization sweep.

    Parameters
    ----------
    best_lambda : float
        Grid value with the highest evaluation accuracy (ties: smallest).
    accuracies : dict of float to float
        Per-lambda evaluation accuracy for values that fitted successfully.
    errors : dict of float to str
        Per-lambda error messages for values that were skipped.
    """

    best_lambda: float
    accuracies: dict
    errors: dict


def _as_matrix(kernel) -> np.ndarray:
    values = kernel.values if isinstance(kernel, GramMatrix) else kernel
    return np.asarray(values, dtype=np.float64)


def _spd_factor(matrix: np.ndarray):
    """Cholesky factorization with a single jitter retry.

    Returns the factorization and the jitter actually applied (0 or the
    fallback value); raises :class:`FactorizationError` if both attempts
    fail.
    """
    try:
        return cho_factor(matrix, lower=True), 0.0
    except np.linalg.LinAlgError:
        pass
    n = matrix.shape[0]
    jitter = _JITTER_SCALE * float(np.trace(matrix)) / n
    if jitter <= 0:
        jitter = _JITTER_SCALE
    try:
        return cho_factor(matrix + jitter * np.eye(n), lower=True), jitter
    except np.linalg.LinAlgError:
        raise FactorizationError(
            "kernel + lambda*I is not positive definite even after jitter "
            f"{jitter:.3e}; increase lambda"
        ) from None


def ridge_fit(kernel, labels: np.ndarray, lam: float) -> RidgeModel:
    """Solve ``(K + lam I) alpha = Y`` for the dual coefficients.

    Parameters
    ----------
    kernel : GramMatrix or ndarray of shape (N, N)
        Symmetric training kernel.
    labels : ndarray of shape (N, C)
        One-hot (or real-valued) targets.
    lam : float
        Regularization, >= 0.  At 0 the kernel itself must be numerically
        invertible.

    Returns
    -------
    RidgeModel

    Raises
    ------
    FactorizationError
        When factorization fails even after the jitter fallback; the message
        advises increasing lambda.
    ValueError
        When the solve's residual exceeds ``1e-6 * ||Y||``.
    """
    k = _as_matrix(kernel)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim != 2 or y.shape[0] != k.shape[0]:
        raise ValueError(f"labels shape {y.shape} does not match kernel {k.shape}")
    if lam < 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    n = k.shape[0]
    system = k + lam * np.eye(n)
    factor, _ = _spd_factor(system)
    alpha = cho_solve(factor, y)
    _check_residual(system, alpha, y)
    return RidgeModel(alpha=alpha, lam=float(lam), tilt=0.0, labels=y, tilted=False)


def _check_residual(system: np.ndarray, alpha: np.ndarray, target: np.ndarray):
    residual = np.linalg.norm(system @ alpha - target)
    bound = _RESIDUAL_RTOL * max(np.linalg.norm(target), np.finfo(np.float64).tiny)
    if residual > bound:
        raise ValueError(
            f"solve residual {residual:.3e} exceeds {bound:.3e}; "
            "the system is too ill-conditioned — increase lambda"
        )


def predict(model: RidgeModel, kernel_cross) -> tuple[np.ndarray, np.ndarray]:
    """Score and label test examples.

    Parameters
    ----------
    model : RidgeModel
    kernel_cross : GramMatrix or ndarray of shape (N_test, N_train)
        Kernel between test rows and the training examples, in training
        order.

    Returns
    -------
    labels : ndarray of shape (N_test,)
        ``argmax`` class per row; ties go to the lowest class index.
    scores : ndarray of shape (N_test, C)
        ``kernel_cross @ alpha``.
    """
    kx = _as_matrix(kernel_cross)
    if kx.shape[1] != model.alpha.shape[0]:
        raise ValueError(
            f"cross kernel has {kx.shape[1]} columns, model has "
            f"{model.alpha.shape[0]} training examples"
        )
    scores = kx @ model.alpha
    return np.argmax(scores, axis=1), scores


def loo_predict(kernel, labels: np.ndarray, lam: float) -> LooPrediction:
    """Closed-form leave-one-out predictions.

    With ``Q = (K + lam I)^{-1}`` and ``alpha = Q Y``::

        Y_loo[i] = Y[i] - alpha[i] / Q[i, i]

    which equals N independent refits, each predicting its held-out example.
    For N = 1 this yields the zero score vector (the empty-training-set
    convention).

    Parameters
    ----------
    kernel : GramMatrix or ndarray of shape (N, N)
    labels : ndarray of shape (N, C)
    lam : float

    Returns
    -------
    LooPrediction

    Raises
    ------
    ValueError
        If any diagonal entry of Q is <= 0 (a positive-definite inverse
        cannot have one; it signals a broken factorization).
    """
    k = _as_matrix(kernel)
    y = np.asarray(labels, dtype=np.float64)
    n = k.shape[0]
    system = k + lam * np.eye(n)
    factor, _ = _spd_factor(system)
    q = cho_solve(factor, np.eye(n))
    return LooPrediction(values=_loo_from_inverse(q, y))


def _loo_from_inverse(q: np.ndarray, y: np.ndarray) -> np.ndarray:
    diag = np.diag(q).copy()
    if np.any(diag <= 0):
        raise ValueError(
            f"inverse has non-positive diagonal (min {diag.min():.3e}); "
            "factorization is broken"
        )
    alpha = q @ y
    return y - alpha / diag[:, None]


def tilted_fit(kernel, labels: np.ndarray, lam: float, tilt: float = 0.3) -> RidgeModel:
    """Ridge refit against leave-one-out-tilted targets.

    Solves ``alpha = (K + lam I)^{-1} (Y - t * Y_loo)`` with the closed-form
    leave-one-out predictions, sharing one factorization.  ``t = 0``
    reproduces :func:`ridge_fit` bitwise.

    Parameters
    ----------
    kernel : GramMatrix or ndarray of shape (N, N)
    labels : ndarray of shape (N, C)
    lam : float
    tilt : float, default=0.3
        Tilt parameter in [0, 1).

    Returns
    -------
    RidgeModel
        With ``tilted=True`` and the tilt recorded.
    """
    if not 0.0 <= tilt < 1.0:
        raise ValueError(f"tilt must lie in [0, 1), got {tilt}")
    k = _as_matrix(kernel)
    y = np.asarray(labels, dtype=np.float64)
    n = k.shape[0]
    system = k + lam * np.eye(n)
    factor, _ = _spd_factor(system)
    if tilt == 0.0:
        alpha = cho_solve(factor, y)
        _check_residual(system, alpha, y)
        return RidgeModel(alpha=alpha, lam=float(lam), tilt=0.0, labels=y, tilted=True)
    q = cho_solve(factor, np.eye(n))
    y_loo = _loo_from_inverse(q, y)
    effective = y - tilt * y_loo
    alpha = cho_solve(factor, effective)
    _check_residual(system, alpha, effective)
    return RidgeModel(
        alpha=alpha, lam=float(lam), tilt=float(tilt), labels=y, tilted=True
    )


def lambda_sweep(kernel, labels: np.ndarray, evaluate, grid=None,
                 tilt: float = 0.0) -> SweepResult:
    """Evaluate a regularization grid and pick the best value.

    Each grid value gets a single factorization; failures (e.g. a singular
    system at ``lambda = 0``) are recorded and skipped.  Ties in accuracy
    resolve to the smaller lambda; the full grid is always evaluated.

    Parameters
    ----------
    kernel : GramMatrix or ndarray of shape (N, N)
        Training kernel.
    labels : ndarray of shape (N, C)
        One-hot training targets.
    evaluate : tuple
        Either ``("holdout", kernel_cross, true_labels)`` — accuracy of the
        fitted model on a holdout set — or ``("folds", n_folds, seed)`` —
        mean accuracy over a seeded k-fold split of the training set.
    grid : sequence of float, optional
        Defaults to :data:`DEFAULT_LAMBDA_GRID`.
    tilt : float, default=0.0
        Tilt applied to every fit in the sweep.

    Returns
    -------
    SweepResult

    Raises
    ------
    ValueError
        If every grid value fails.
    """
    grid = DEFAULT_LAMBDA_GRID if grid is None else tuple(grid)
    if not grid:
        raise ValueError("lambda grid must be nonempty")
    k = _as_matrix(kernel)
    y = np.asarray(labels, dtype=np.float64)

    accuracies: dict = {}
    errors: dict = {}
    for lam in grid:
        try:
            accuracies[lam] = _evaluate_lambda(k, y, lam, evaluate, tilt)
        except (FactorizationError, ValueError, np.linalg.LinAlgError) as exc:
            errors[lam] = str(exc)
    if not accuracies:
        raise ValueError(f"every lambda failed; last error: {errors[grid[-1]]}")
    best = min(accuracies, key=lambda lam: (-accuracies[lam], lam))
    return SweepResult(best_lambda=best, accuracies=accuracies, errors=errors)


def _evaluate_lambda(k, y, lam, evaluate, tilt) -> float:
    mode = evaluate[0]
    if mode == "holdout":
        _, kernel_cross, true_labels = evaluate
        model = tilted_fit(k, y, lam, tilt) if tilt else ridge_fit(k, y, lam)
        pred, _ = predict(model, kernel_cross)
        return float(np.mean(pred == np.asarray(true_labels)))
    if mode == "folds":
        _, n_folds, seed = evaluate
        n = k.shape[0]
        rng = np.random.default_rng(seed)
        order = rng.permutation(n)
        fold_of = np.empty(n, dtype=np.int64)
        fold_of[order] = np.arange(n) % n_folds
        correct, total = 0, 0
        true_labels = np.argmax(y, axis=1)
        for fold in range(n_folds):
            val = fold_of == fold
            train = ~val
            sub_k = k[np.ix_(train, train)]
            sub_y = y[train]
            model = (
                tilted_fit(sub_k, sub_y, lam, tilt) if tilt
                else ridge_fit(sub_k, sub_y, lam)
            )
            pred, _ = predict(model, k[np.ix_(val, train)])
            correct += int(np.sum(pred == true_labels[val]))
            total += int(val.sum())
        return correct / total
    raise ValueError(f"unknown evaluation mode {mode!r}")


# ---------------------------------------------------------------------------
# Tabular Gaussian kernel
# ---------------------------------------------------------------------------

def gaussian_gram(rows_a: np.ndarray, rows_b: np.ndarray | None,
                  gamma: float) -> GramMatrix:
    """Gaussian kernel matrix ``exp(-||x - z||^2 / (2 gamma^2))``.

    ``gamma`` is a length scale, so the median-distance grid centers
    sensibly.

    Parameters
    ----------
    rows_a : ndarray of shape (N_A, d)
    rows_b : ndarray or None
        None computes the symmetric (A, A) Gram.
    gamma : float
        Length scale, > 0.

    Returns
    -------
    GramMatrix
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be > 0, got {gamma}")
    a = np.asarray(rows_a, dtype=np.float64)
    symmetric = rows_b is None
    b = a if symmetric else np.asarray(rows_b, dtype=np.float64)
    sq_a = np.sum(a * a, axis=1)[:, None]
    sq_b = np.sum(b * b, axis=1)[None, :]
    sq_dist = np.maximum(sq_a + sq_b - 2.0 * (a @ b.T), 0.0)
    values = np.exp(-sq_dist / (2.0 * gamma * gamma))
    if symmetric:
        values = 0.5 * (values + values.T)
    row_ids = np.arange(a.shape[0], dtype=np.int64)
    col_ids = row_ids if symmetric else np.arange(b.shape[0], dtype=np.int64)
    return GramMatrix(values=values, row_ids=row_ids, col_ids=col_ids,
                      symmetric=symmetric)


def median_heuristic(rows: np.ndarray, cap: int = 2000, seed: int = 0) -> float:
    """Median pairwise Euclidean distance (the bandwidth anchor).

    Parameters
    ----------
    rows : ndarray of shape (N, d)
    cap : int, default=2000
        When N exceeds the cap, the median is taken over a seeded uniform
        subsample of this many rows.
    seed : int, default=0

    Returns
    -------
    float
    """
    x = np.asarray(rows, dtype=np.float64)
    if x.shape[0] < 2:
        raise ValueError("median heuristic needs at least 2 rows")
    if x.shape[0] > cap:
        rng = np.random.default_rng(seed)
        x = x[rng.choice(x.shape[0], size=cap, replace=False)]
    return float(np.median(pdist(x)))


def bandwidth_grid(nu: float) -> tuple[float, ...]:
    """Bandwidth grid ``nu * 2^i`` for ``i`` in [-19, 20].

    Parameters
    ----------
    nu : float
        Anchor length scale (typically the median heuristic).

    Returns
    -------
    tuple of float
        40 geometrically spaced length scales.
    """
    return tuple(nu * 2.0 ** i for i in range(-19, 21))
