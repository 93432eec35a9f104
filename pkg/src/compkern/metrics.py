"""Evaluation metrics and multi-classifier aggregation.

Provides exact binomial (Clopper–Pearson) confidence intervals, Friedman
mean ranks, P90/P95, percentage-of-maximum-accuracy (PMA), performance
profiles over an accuracy-gap grid, and a 4-fold tuning protocol for
tabular benchmark suites.  A report object gathers per-dataset rows and
per-classifier aggregates and exports to CSV and JSON deterministically.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import betainc
from scipy.stats import rankdata

logger = logging.getLogger(__name__)

_BISECT_TOL = 1e-10

#: Accuracy-gap grid for performance profiles: 0 to 0.2 in steps of 0.002.
PROFILE_TAUS = tuple(round(0.002 * i, 3) for i in range(101))


@dataclass(frozen=True)
class AccuracyResult:
    """Fraction correct together with the underlying counts."""

    fraction: float
    correct: int
    total: int


@dataclass(frozen=True)
class DatasetRow:
    """One (dataset, classifier) evaluation outcome."""

    dataset: str
    classifier: str
    accuracy: float
    ci_lo: float
    ci_hi: float
    n_eval: int


@dataclass(frozen=True)
class ClassifierAggregate:
    """Per-classifier aggregates over a suite of datasets."""

    friedman_rank: float
    p90: float
    p95: float
    pma_mean: float
    pma_std: float
    acc_mean: float
    acc_std: float


@dataclass(frozen=True)
class EvalReport:
    """Per-dataset rows, per-classifier aggregates, and profiles.

    Parameters
    ----------
    rows : tuple of DatasetRow
        One entry per (dataset, classifier) pair.
    aggregates : dict of str to ClassifierAggregate
    profiles : dict of str to tuple of (tau, fraction)
    """

    rows: tuple
    aggregates: dict
    profiles: dict


@dataclass(frozen=True)
class UciResult:
    """Outcome of the 4-fold tuning protocol on one dataset."""

    accuracy: float
    chosen_index: int
    chosen: object
    fold_accuracies: tuple


def accuracy(pred_labels, true_labels) -> AccuracyResult:
    """Fraction of matching labels.

    Parameters
    ----------
    pred_labels, true_labels : array-like of shape (N,)

    Returns
    -------
    AccuracyResult

    Raises
    ------
    ValueError
        On length mismatch or empty input.
    """
    pred = np.asarray(pred_labels)
    true = np.asarray(true_labels)
    if pred.shape != true.shape or pred.ndim != 1:
        raise ValueError(
            f"label arrays must be equal-length 1-D, got {pred.shape} and {true.shape}"
        )
    if pred.size == 0:
        raise ValueError("cannot score an empty label array")
    correct = int(np.sum(pred == true))
    return AccuracyResult(fraction=correct / pred.size, correct=correct,
                          total=int(pred.size))


def _bisect_beta_cdf(a: float, b: float, target: float) -> float:
    """Solve ``I_x(a, b) = target`` for x by bisection to 1e-10."""
    lo, hi = 0.0, 1.0
    while hi - lo > _BISECT_TOL:
        mid = 0.5 * (lo + hi)
        if betainc(a, b, mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def clopper_pearson(k: int, n: int, conf: float = 0.95) -> tuple[float, float]:
    """Exact binomial confidence interval.

    The bounds are the beta quantiles

    - ``lo`` solves ``I_lo(k, n - k + 1) = (1 - conf) / 2``
    - ``hi`` solves ``I_hi(k + 1, n - k) = 1 - (1 - conf) / 2``

    each found by bisection on the regularized incomplete beta to 1e-10,
    with the boundary conventions ``lo = 0`` at ``k = 0`` and ``hi = 1`` at
    ``k = n``.

    Parameters
    ----------
    k : int
        Number of successes, ``0 <= k <= n``.
    n : int
        Number of trials, > 0.
    conf : float, default=0.95
        Confidence level in (0, 1).

    Returns
    -------
    (lo, hi) : tuple of float
    """
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    if n <= 0:
        raise ValueError(f"n must be > 0, got {n}")
    if not 0.0 < conf < 1.0:
        raise ValueError(f"conf must lie in (0, 1), got {conf}")
    half_alpha = (1.0 - conf) / 2.0
    lo = 0.0 if k == 0 else _bisect_beta_cdf(k, n - k + 1, half_alpha)
    hi = 1.0 if k == n else _bisect_beta_cdf(k + 1, n - k, 1.0 - half_alpha)
    return lo, hi


def _as_table(table) -> np.ndarray:
    t = np.asarray(table, dtype=np.float64)
    if t.ndim != 2 or t.size == 0:
        raise ValueError(f"accuracy table must be 2-D (datasets x classifiers), got {t.shape}")
    return t


def friedman_rank(table) -> np.ndarray:
    """Mean rank per classifier (1 = best; ties share the mean rank).

    Parameters
    ----------
    table : array-like of shape (D, M)
        Accuracy per dataset (rows) and classifier (columns).

    Returns
    -------
    ndarray of shape (M,)
        Mean rank over datasets; row ranks always sum to M (M + 1) / 2.
    """
    t = _as_table(table)
    ranks = np.vstack([rankdata(-row, method="average") for row in t])
    return ranks.mean(axis=0)


def p_at(threshold: float, table) -> np.ndarray:
    """Percentage of datasets where a classifier reaches ``threshold * max``.

    Parameters
    ----------
    threshold : float
        Fraction of the per-dataset maximum accuracy (0.90 for P90).
    table : array-like of shape (D, M)

    Returns
    -------
    ndarray of shape (M,)
        Percentages in [0, 100].
    """
    t = _as_table(table)
    best = t.max(axis=1, keepdims=True)
    if np.any(best <= 0):
        raise ValueError("every dataset must have a positive best accuracy")
    return 100.0 * np.mean(t >= threshold * best, axis=0)


def pma(table) -> tuple[np.ndarray, np.ndarray]:
    """Percentage of maximum accuracy: per-classifier mean and sample std.

    Parameters
    ----------
    table : array-like of shape (D, M)

    Returns
    -------
    (mean, std) : tuple of ndarray of shape (M,)
        Percentages; the std is the sample standard deviation over datasets
        (0 when there is a single dataset).
    """
    t = _as_table(table)
    best = t.max(axis=1, keepdims=True)
    if np.any(best <= 0):
        raise ValueError("every dataset must have a positive best accuracy")
    ratios = 100.0 * t / best
    mean = ratios.mean(axis=0)
    std = (ratios.std(axis=0, ddof=1) if t.shape[0] > 1
           else np.zeros(t.shape[1]))
    return mean, std


def performance_profile(table, taus=PROFILE_TAUS) -> dict:
    """Fraction of datasets within an accuracy gap ``tau`` of the best.

    For each classifier m, ``profile[m]`` samples the nondecreasing function
    ``tau -> #{d : max_d - acc[d, m] <= tau} / D`` on the given grid.

    Parameters
    ----------
    table : array-like of shape (D, M)
    taus : sequence of float, default=:data:`PROFILE_TAUS`

    Returns
    -------
    dict of int to tuple of (tau, fraction)
        Keyed by classifier column index.
    """
    t = _as_table(table)
    gaps = t.max(axis=1, keepdims=True) - t
    profiles = {}
    for m in range(t.shape[1]):
        profiles[m] = tuple(
            (tau, float(np.mean(gaps[:, m] <= tau))) for tau in taus
        )
    return profiles


def stratified_folds(labels, n_folds: int, seed: int) -> np.ndarray:
    """Deterministic stratified fold assignment.

    Within each class the examples are shuffled by a seeded generator, then
    dealt to folds round-robin by a single cursor that runs on across
    classes — so per-class remainders spread over the folds instead of
    stacking on fold 0.

    Parameters
    ----------
    labels : array-like of shape (N,)
        Integer class labels.
    n_folds : int
    seed : int

    Returns
    -------
    ndarray of shape (N,)
        Fold index per example, in [0, n_folds).
    """
    y = np.asarray(labels)
    if y.ndim != 1:
        raise ValueError(f"labels must be 1-D, got shape {y.shape}")
    if n_folds < 2 or n_folds > y.size:
        raise ValueError(f"cannot split {y.size} examples into {n_folds} folds")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(y.size, dtype=np.int64)
    cursor = 0
    for label in np.unique(y):
        members = np.flatnonzero(y == label)
        members = members[rng.permutation(members.size)]
        for idx in members:
            fold_of[idx] = cursor % n_folds
            cursor += 1
    return fold_of


def uci_protocol(rows, labels, classifier_factory, grid, seed: int = 0,
                 n_folds: int = 4) -> UciResult:
    """Tune a classifier on one dataset by averaged k-fold validation.

    Each hyperparameter setting is scored by the mean validation accuracy
    over ``n_folds`` stratified folds (train on the others, validate on the
    held-out fold); the argmax wins, ties going to the earliest grid entry,
    and its averaged accuracy is reported.

    Parameters
    ----------
    rows : array-like of shape (N, d)
        Feature rows; N >= 2 * n_folds.
    labels : array-like of shape (N,)
        Integer class labels.
    classifier_factory : callable
        Maps a grid entry to an estimator exposing ``fit(rows, labels)``
        and ``predict(rows) -> labels``.
    grid : sequence
        Hyperparameter settings, tried in order.
    seed : int, default=0
        Controls the fold assignment (same seed, same folds, same result).
    n_folds : int, default=4

    Returns
    -------
    UciResult
    """
    x = np.asarray(rows)
    y = np.asarray(labels)
    if x.shape[0] != y.shape[0]:
        raise ValueError(f"{x.shape[0]} rows but {y.shape[0]} labels")
    if x.shape[0] < 2 * n_folds:
        raise ValueError(
            f"need at least {2 * n_folds} examples for {n_folds} folds, got {x.shape[0]}"
        )
    grid = list(grid)
    if not grid:
        raise ValueError("hyperparameter grid must be nonempty")
    fold_of = stratified_folds(y, n_folds, seed)
    for fold in range(n_folds):
        val_classes = np.unique(y[fold_of == fold])
        if val_classes.size < 2:
            logger.warning("fold %d holds a single class; accuracy there is degenerate", fold)

    best_mean, best_index, best_folds = -1.0, -1, None
    for index, setting in enumerate(grid):
        fold_accs = []
        for fold in range(n_folds):
            val = fold_of == fold
            train = ~val
            model = classifier_factory(setting)
            model.fit(x[train], y[train])
            pred = np.asarray(model.predict(x[val]))
            fold_accs.append(float(np.mean(pred == y[val])))
        mean_acc = float(np.mean(fold_accs))
        if mean_acc > best_mean:
            best_mean, best_index, best_folds = mean_acc, index, tuple(fold_accs)
    return UciResult(accuracy=best_mean, chosen_index=best_index,
                     chosen=grid[best_index], fold_accuracies=best_folds)


def build_report(successes, n_eval, dataset_names, classifier_names,
                 conf: float = 0.95) -> EvalReport:
    """Assemble the full evaluation report from raw counts.

    Parameters
    ----------
    successes : array-like of shape (D, M)
        Correct predictions per dataset and classifier.
    n_eval : array-like of shape (D,)
        Evaluation-set size per dataset.
    dataset_names : sequence of str, length D
    classifier_names : sequence of str, length M
    conf : float, default=0.95
        Confidence level for the per-row intervals.

    Returns
    -------
    EvalReport
    """
    wins = np.asarray(successes, dtype=np.int64)
    counts = np.asarray(n_eval, dtype=np.int64)
    if wins.ndim != 2:
        raise ValueError(f"successes must be 2-D, got shape {wins.shape}")
    d, m = wins.shape
    if counts.shape != (d,):
        raise ValueError(f"n_eval must have shape ({d},), got {counts.shape}")
    if len(dataset_names) != d or len(classifier_names) != m:
        raise ValueError("name lists must match the table dimensions")

    table = wins / counts[:, None]
    rows = []
    for i in range(d):
        for j in range(m):
            lo, hi = clopper_pearson(int(wins[i, j]), int(counts[i]), conf)
            rows.append(DatasetRow(
                dataset=dataset_names[i], classifier=classifier_names[j],
                accuracy=float(table[i, j]), ci_lo=lo, ci_hi=hi,
                n_eval=int(counts[i]),
            ))

    ranks = friedman_rank(table)
    p90 = p_at(0.90, table)
    p95 = p_at(0.95, table)
    pma_mean, pma_std = pma(table)
    acc_mean = 100.0 * table.mean(axis=0)
    acc_std = (100.0 * table.std(axis=0, ddof=1) if d > 1 else np.zeros(m))
    aggregates = {
        classifier_names[j]: ClassifierAggregate(
            friedman_rank=float(ranks[j]), p90=float(p90[j]), p95=float(p95[j]),
            pma_mean=float(pma_mean[j]), pma_std=float(pma_std[j]),
            acc_mean=float(acc_mean[j]), acc_std=float(acc_std[j]),
        )
        for j in range(m)
    }
    raw_profiles = performance_profile(table)
    profiles = {classifier_names[j]: raw_profiles[j] for j in range(m)}
    return EvalReport(rows=tuple(rows), aggregates=aggregates, profiles=profiles)


def report_to_csv(report: EvalReport) -> str:
    """One CSV row per (dataset, classifier).

    Accuracies are percentages to one decimal; CI bounds are percentages to
    two decimals.  Output is deterministic byte-for-byte.
    """
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["dataset", "classifier", "accuracy_pct",
                     "ci_lo_pct", "ci_hi_pct", "n_eval"])
    for row in report.rows:
        writer.writerow([
            row.dataset, row.classifier,
            f"{100.0 * row.accuracy:.1f}",
            f"{100.0 * row.ci_lo:.2f}", f"{100.0 * row.ci_hi:.2f}",
            row.n_eval,
        ])
    return buf.getvalue()


def report_to_json(report: EvalReport) -> str:
    """JSON aggregate block (sorted keys, fixed rounding, trailing newline)."""
    block = {
        "classifiers": {
            name: {
                "friedman_rank": round(agg.friedman_rank, 3),
                "p90": round(agg.p90, 1),
                "p95": round(agg.p95, 1),
                "pma_mean": round(agg.pma_mean, 1),
                "pma_std": round(agg.pma_std, 1),
                "acc_mean": round(agg.acc_mean, 1),
                "acc_std": round(agg.acc_std, 1),
            }
            for name, agg in report.aggregates.items()
        },
        "profiles": {
            name: [[tau, round(frac, 6)] for tau, frac in profile]
            for name, profile in report.profiles.items()
        },
        "n_datasets": len({row.dataset for row in report.rows}),
    }
    return json.dumps(block, indent=2, sort_keys=True) + "\n"
