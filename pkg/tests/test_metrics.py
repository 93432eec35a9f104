"""Evaluation metrics: exact intervals, ranks, profiles, and the report."""

import json
import logging

import numpy as np
import pytest
import scipy.stats
from numpy.testing import assert_allclose

from compkern import (
    PROFILE_TAUS,
    accuracy,
    build_report,
    clopper_pearson,
    friedman_rank,
    p_at,
    performance_profile,
    pma,
    report_to_csv,
    report_to_json,
    stratified_folds,
    uci_protocol,
)


class TestAccuracy:
    def test_counts(self):
        result = accuracy([0, 1, 2, 1], [0, 1, 1, 1])
        assert result.correct == 3
        assert result.total == 4
        assert result.fraction == 0.75

    def test_all_wrong(self):
        assert accuracy([1, 1], [0, 0]).fraction == 0.0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="equal-length"):
            accuracy([0, 1], [0, 1, 2])

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            accuracy([], [])


class TestClopperPearson:
    def test_boundary_conventions(self):
        lo, hi = clopper_pearson(0, 10)
        assert lo == 0.0 and hi < 1.0
        lo, hi = clopper_pearson(10, 10)
        assert lo > 0.0 and hi == 1.0

    def test_perfect_score_closed_form(self):
        # At k = n the lower bound solves lo^n = alpha/2 exactly.
        lo, hi = clopper_pearson(60, 60)
        assert_allclose(lo, 0.025 ** (1.0 / 60.0), atol=1e-9)
        assert hi == 1.0

    @pytest.mark.parametrize("k,n", [(1, 10), (5, 10), (8, 10), (30, 60),
                                     (59, 60), (999, 1000), (1, 2000)])
    def test_matches_beta_quantiles(self, k, n):
        # Independent cross-check: the bounds are beta distribution
        # quantiles, here taken from scipy's ppf instead of our bisection.
        lo, hi = clopper_pearson(k, n)
        assert_allclose(lo, scipy.stats.beta.ppf(0.025, k, n - k + 1), atol=1e-9)
        assert_allclose(hi, scipy.stats.beta.ppf(0.975, k + 1, n - k), atol=1e-9)

    def test_interval_contains_point_estimate(self):
        for k, n in [(3, 10), (50, 100), (7, 8)]:
            lo, hi = clopper_pearson(k, n)
            assert lo <= k / n <= hi

    def test_higher_confidence_widens(self):
        lo95, hi95 = clopper_pearson(30, 60, conf=0.95)
        lo99, hi99 = clopper_pearson(30, 60, conf=0.99)
        assert lo99 < lo95 and hi99 > hi95

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            clopper_pearson(-1, 10)
        with pytest.raises(ValueError):
            clopper_pearson(11, 10)
        with pytest.raises(ValueError):
            clopper_pearson(0, 0)
        with pytest.raises(ValueError):
            clopper_pearson(5, 10, conf=1.0)


class TestFriedmanRank:
    def test_hand_example(self):
        table = [[0.9, 0.8, 0.7], [0.6, 0.7, 0.8]]
        assert_allclose(friedman_rank(table), [2.0, 2.0, 2.0])

    def test_ties_share_mean_rank(self):
        assert_allclose(friedman_rank([[0.5, 0.5, 0.2]]), [1.5, 1.5, 3.0])

    def test_row_ranks_sum_invariant(self, rng):
        table = rng.random((6, 4))
        ranks = friedman_rank(table)
        assert_allclose(ranks.sum(), 4 * 5 / 2)

    def test_matches_counting_oracle(self, rng):
        # Without ties, rank = 1 + number of strictly better classifiers.
        table = rng.permuted(
            np.tile(np.linspace(0.1, 0.9, 5), (7, 1)), axis=1)
        brute = np.vstack([
            1 + (row[None, :] < row[:, None]).sum(axis=0) for row in table
        ]).mean(axis=0)
        assert_allclose(friedman_rank(table), brute)

    def test_rejects_bad_table(self):
        with pytest.raises(ValueError, match="2-D"):
            friedman_rank([0.5, 0.6])


class TestThresholdMetrics:
    TABLE = [[1.0, 0.9, 0.85], [0.5, 0.5, 0.4]]

    def test_p_at_hand_example(self):
        assert_allclose(p_at(0.90, self.TABLE), [100.0, 100.0, 0.0])

    def test_p95_never_exceeds_p90(self, rng):
        table = rng.random((8, 5)) + 0.1
        assert np.all(p_at(0.95, table) <= p_at(0.90, table))

    def test_pma_hand_example(self):
        mean, std = pma(self.TABLE)
        assert_allclose(mean, [100.0, 95.0, 82.5])
        assert_allclose(std, [0.0, np.sqrt(50.0), np.sqrt(12.5)])

    def test_pma_single_dataset_has_zero_std(self):
        mean, std = pma([[0.8, 0.4]])
        assert_allclose(mean, [100.0, 50.0])
        assert np.array_equal(std, [0.0, 0.0])

    def test_best_of_zero_rejected(self):
        with pytest.raises(ValueError, match="positive"):
            p_at(0.9, [[0.0, 0.0]])


class TestPerformanceProfile:
    def test_grid_is_101_points_to_point_two(self):
        assert len(PROFILE_TAUS) == 101
        assert PROFILE_TAUS[0] == 0.0
        assert PROFILE_TAUS[-1] == 0.2
        assert PROFILE_TAUS[1] == 0.002

    def test_hand_example_steps(self):
        table = [[1.0, 0.9], [0.8, 0.8]]
        profiles = performance_profile(table)
        frac0 = dict(profiles[0])
        frac1 = dict(profiles[1])
        assert frac0[0.0] == 1.0                  # best on both datasets
        assert frac1[0.0] == 0.5                  # trails by 0.1 on the first
        assert frac1[0.098] == 0.5
        assert frac1[0.1] == 1.0                  # gap of 0.1 covered here
        assert frac1[0.2] == 1.0

    def test_profiles_are_monotone(self, rng):
        table = rng.random((6, 3)) + 0.05
        for profile in performance_profile(table).values():
            fracs = [frac for _, frac in profile]
            assert all(b >= a for a, b in zip(fracs, fracs[1:]))

    def test_single_classifier_is_flat_one(self, rng):
        profiles = performance_profile(rng.random((4, 1)) + 0.1)
        assert all(frac == 1.0 for _, frac in profiles[0])

    def test_custom_taus(self):
        profiles = performance_profile([[0.6, 0.5]], taus=(0.0, 0.1, 0.2))
        assert profiles[1] == ((0.0, 0.0), (0.1, 1.0), (0.2, 1.0))


class TestStratifiedFolds:
    def test_deterministic_and_seed_sensitive(self):
        labels = np.repeat(np.arange(3), 20)
        a = stratified_folds(labels, 4, seed=5)
        b = stratified_folds(labels, 4, seed=5)
        c = stratified_folds(labels, 4, seed=6)
        assert np.array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_values_in_range_and_balanced(self):
        labels = np.repeat(np.arange(3), 8)
        fold_of = stratified_folds(labels, 4, seed=0)
        assert fold_of.min() >= 0 and fold_of.max() < 4
        # Each class splits 8 = 2 per fold exactly.
        for cls in range(3):
            counts = np.bincount(fold_of[labels == cls], minlength=4)
            assert np.array_equal(counts, [2, 2, 2, 2])

    def test_remainders_spread_across_folds(self):
        # 5 examples per class over 4 folds: the global cursor spreads the
        # leftover of class 0 so fold sizes stay within one of each other.
        labels = np.repeat(np.arange(4), 5)
        fold_of = stratified_folds(labels, 4, seed=1)
        sizes = np.bincount(fold_of, minlength=4)
        assert sizes.max() - sizes.min() <= 1

    def test_validation(self):
        with pytest.raises(ValueError, match="folds"):
            stratified_folds(np.zeros(3, dtype=int), 4, seed=0)
        with pytest.raises(ValueError, match="1-D"):
            stratified_folds(np.zeros((3, 2), dtype=int), 2, seed=0)


class _NearestCenter:
    """Tiny deterministic classifier: nearest class mean after shrinkage."""

    def __init__(self, shrink):
        self.shrink = shrink

    def fit(self, rows, labels):
        self.classes_ = np.unique(labels)
        self.means_ = np.vstack([
            rows[labels == c].mean(axis=0) * (1.0 - self.shrink)
            for c in self.classes_
        ])
        return self

    def predict(self, rows):
        dists = ((rows[:, None, :] - self.means_[None]) ** 2).sum(axis=2)
        return self.classes_[np.argmin(dists, axis=1)]


class _ConstantZero:
    def fit(self, rows, labels):
        return self

    def predict(self, rows):
        return np.zeros(rows.shape[0], dtype=np.int64)


class TestUciProtocol:
    def make_blobs(self, rng, per_class=16):
        centers = np.array([[0.0, 0.0], [4.0, 4.0]])
        labels = np.repeat([0, 1], per_class)
        rows = centers[labels] + rng.standard_normal((2 * per_class, 2)) * 0.5
        return rows, labels

    def test_separable_blobs_score_high(self, rng):
        rows, labels = self.make_blobs(rng)
        result = uci_protocol(rows, labels, _NearestCenter, grid=[0.0, 0.2])
        assert result.accuracy >= 0.9
        assert result.chosen in (0.0, 0.2)
        assert len(result.fold_accuracies) == 4

    def test_single_point_grid(self, rng):
        rows, labels = self.make_blobs(rng)
        result = uci_protocol(rows, labels, _NearestCenter, grid=[0.1])
        assert result.chosen_index == 0 and result.chosen == 0.1

    def test_tie_takes_earliest_entry(self, rng):
        rows, labels = self.make_blobs(rng)
        # Identical settings tie exactly; the first must win.
        result = uci_protocol(rows, labels, _NearestCenter, grid=[0.0, 0.0])
        assert result.chosen_index == 0

    def test_deterministic_under_seed(self, rng):
        rows, labels = self.make_blobs(rng)
        a = uci_protocol(rows, labels, _NearestCenter, grid=[0.0, 0.3], seed=2)
        b = uci_protocol(rows, labels, _NearestCenter, grid=[0.0, 0.3], seed=2)
        assert a.accuracy == b.accuracy
        assert a.fold_accuracies == b.fold_accuracies

    def test_constant_classifier_scores_base_rate(self, rng):
        rows, labels = self.make_blobs(rng, per_class=20)
        result = uci_protocol(rows, labels, lambda _: _ConstantZero(), grid=[None])
        assert_allclose(result.accuracy, 0.5, atol=1e-12)

    def test_degenerate_fold_logged(self, rng, caplog):
        rows = rng.standard_normal((9, 2))
        labels = np.array([0] * 8 + [1])
        with caplog.at_level(logging.WARNING):
            uci_protocol(rows, labels, _NearestCenter, grid=[0.0])
        assert any("single class" in rec.message for rec in caplog.records)

    def test_validation(self, rng):
        rows, labels = self.make_blobs(rng)
        with pytest.raises(ValueError, match="nonempty"):
            uci_protocol(rows, labels, _NearestCenter, grid=[])
        with pytest.raises(ValueError, match="at least"):
            uci_protocol(rows[:5], labels[:5], _NearestCenter, grid=[0.0])
        with pytest.raises(ValueError, match="labels"):
            uci_protocol(rows, labels[:-1], _NearestCenter, grid=[0.0])


class TestReport:
    def build(self):
        return build_report(
            successes=[[8, 6]], n_eval=[10],
            dataset_names=["d1"], classifier_names=["c1", "c2"],
        )

    def test_rows_and_aggregates(self):
        report = self.build()
        assert len(report.rows) == 2
        row = report.rows[0]
        assert row.dataset == "d1" and row.classifier == "c1"
        assert row.accuracy == 0.8 and row.n_eval == 10
        agg = report.aggregates["c1"]
        assert agg.friedman_rank == 1.0
        assert report.aggregates["c2"].friedman_rank == 2.0
        assert agg.pma_mean == 100.0
        assert_allclose(report.aggregates["c2"].pma_mean, 75.0)

    def test_csv_golden(self):
        # 8/10 and 6/10 against the standard 95% binomial interval tables.
        text = report_to_csv(self.build())
        lines = text.split("\n")
        assert lines[0] == "dataset,classifier,accuracy_pct,ci_lo_pct,ci_hi_pct,n_eval"
        assert lines[1] == "d1,c1,80.0,44.39,97.48,10"
        assert lines[2] == "d1,c2,60.0,26.24,87.84,10"
        assert lines[3] == ""

    def test_csv_deterministic(self):
        assert report_to_csv(self.build()) == report_to_csv(self.build())

    def test_json_shape(self):
        # Counts over 16 give dyadic accuracies 0.75 and 0.625, so the
        # profile gap is exactly 0.125 and threshold comparisons are exact.
        report = build_report([[12, 10]], [16], ["d1"], ["c1", "c2"])
        text = report_to_json(report)
        assert text.endswith("\n")
        block = json.loads(text)
        assert block["n_datasets"] == 1
        assert set(block["classifiers"]) == {"c1", "c2"}
        assert block["classifiers"]["c1"]["p90"] == 100.0
        profile = block["profiles"]["c2"]
        assert len(profile) == 101
        assert profile[0] == [0.0, 0.0]    # trails the best by 0.125
        assert profile[62] == [0.124, 0.0]
        assert profile[63] == [0.126, 1.0]
        assert profile[100] == [0.2, 1.0]

    def test_json_deterministic(self):
        assert report_to_json(self.build()) == report_to_json(self.build())

    def test_validation(self):
        with pytest.raises(ValueError, match="2-D"):
            build_report([1, 2], [10], ["d"], ["c1", "c2"])
        with pytest.raises(ValueError, match="n_eval"):
            build_report([[1, 2]], [10, 20], ["d"], ["c1", "c2"])
        with pytest.raises(ValueError, match="name lists"):
            build_report([[1, 2]], [10], ["d"], ["c1"])
