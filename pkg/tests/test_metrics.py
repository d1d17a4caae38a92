import itertools
import math

import numpy as np
import pytest

from bregbench import metrics
from bregbench.checks import random_simplex
from bregbench.errors import InvalidInputError, NumericDomainError, ShapeError


def onehot(labels, k):
    return np.eye(k)[labels]


def brute_force_macro_f1(y, yhat, k):
    """Per-class precision/recall straight from the definition."""
    scores = []
    for c in range(k):
        tp = sum(1 for a, b in zip(y, yhat) if a == c and b == c)
        predicted = sum(1 for b in yhat if b == c)
        actual = sum(1 for a in y if a == c)
        prec = tp / predicted if predicted else 0.0
        rec = tp / actual if actual else 0.0
        scores.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(scores) / k


def brute_force_ndcg(t, q):
    k = len(t)
    order = sorted(range(k), key=lambda j: (-q[j], j))
    ideal = sorted(t, reverse=True)
    dcg = sum(t[j] / math.log2(r + 2) for r, j in enumerate(order))
    idcg = sum(g / math.log2(r + 2) for r, g in enumerate(ideal))
    return dcg / idcg


class TestRankCategories:
    def test_examples(self):
        assert list(metrics.rank_categories([0.2, 0.5, 0.3])) == [1, 2, 0]
        assert list(metrics.rank_categories([1 / 3, 1 / 3, 1 / 3])) == [0, 1, 2]
        assert list(metrics.rank_categories([1.0, 0.0])) == [0, 1]

    def test_ties_keep_index_order(self):
        assert list(metrics.rank_categories([0.1, 0.4, 0.1, 0.4])) == [1, 3, 0, 2]

    def test_batch(self):
        r = metrics.rank_categories([[0.2, 0.8], [0.6, 0.4]])
        assert r.tolist() == [[1, 0], [0, 1]]


class TestConvergence:
    def test_delta_examples(self):
        np.testing.assert_allclose(metrics.convergence_delta([10, 5, 4]), [0.5, 0.2], rtol=1e-15)
        np.testing.assert_array_equal(metrics.convergence_delta([3, 3, 3]), [0, 0])
        np.testing.assert_array_equal(metrics.convergence_delta([1, 2]), [1.0])

    def test_zero_divisor(self):
        with pytest.raises(NumericDomainError):
            metrics.convergence_delta([1.0, 0.0, 1.0])
        # a zero in the last position is never a divisor
        np.testing.assert_array_equal(metrics.convergence_delta([1.0, 0.0]), [1.0])

    def test_too_short(self):
        with pytest.raises(InvalidInputError):
            metrics.convergence_delta([1.0])

    def test_epochs_examples(self):
        assert metrics.epochs_to_converge([10, 5, 4.9, 4.85], 0.05) == 1
        assert metrics.epochs_to_converge([2, 2, 2, 2], 0.01) == 0
        assert metrics.epochs_to_converge([2.0**-i for i in range(20)], 0.05) is None

    def test_requires_sustained_convergence(self):
        # deltas [0.01, 0.495, 0.002, 0.002]: below at t=0, above at t=1
        h = [10, 9.9, 5, 4.99, 4.98]
        assert metrics.epochs_to_converge(h, 0.05) == 2

    def test_threshold_positive(self):
        with pytest.raises(InvalidInputError):
            metrics.epochs_to_converge([1, 1], 0.0)

    def test_larger_tail_deltas_converge_later(self):
        fast = [1.0 * 0.5**t if t < 3 else 0.125 * 0.99 ** (t - 2) for t in range(12)]
        slow = [1.0 * 0.5**t if t < 7 else 0.5**6 * 0.99 ** (t - 6) for t in range(12)]
        assert metrics.epochs_to_converge(fast) < metrics.epochs_to_converge(slow)


class TestMacroF1:
    def test_perfect(self):
        t = random_simplex(np.random.default_rng(0), 30, 4)
        assert metrics.macro_f1(t, t) == 1.0

    def test_binary_example(self):
        f1 = metrics.macro_f1(onehot([0, 0, 1, 1], 2), onehot([0, 1, 1, 1], 2))
        assert f1 == pytest.approx((2 / 3 + 4 / 5) / 2, abs=1e-15)
        assert round(f1, 6) == 0.733333

    def test_absent_class_counts_as_zero(self):
        y = [0, 0, 1, 1]
        yhat = [0, 1, 1, 1]
        f1 = metrics.macro_f1(onehot(y, 3), onehot(yhat, 3), k=3)
        assert f1 == pytest.approx((2 / 3 + 4 / 5 + 0.0) / 3, abs=1e-15)
        assert f1 == pytest.approx(brute_force_macro_f1(y, yhat, 3), abs=1e-15)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            k = int(rng.integers(2, 6))
            t = random_simplex(rng, 40, k)
            q = random_simplex(rng, 40, k)
            y, yhat = t.argmax(1).tolist(), q.argmax(1).tolist()
            assert metrics.macro_f1(t, q) == pytest.approx(brute_force_macro_f1(y, yhat, k), abs=1e-14)

    def test_k_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.macro_f1(onehot([0, 1], 2), onehot([0, 1], 2), k=3)


class TestNdcg:
    def test_perfect(self):
        t = random_simplex(np.random.default_rng(1), 25, 5)
        assert metrics.ndcg(t, t) == pytest.approx(1.0, abs=1e-15)

    def test_reversed_pair(self):
        value = metrics.ndcg([[0.8, 0.2]], [[0.2, 0.8]])
        l3 = math.log2(3)
        assert value == pytest.approx((0.2 + 0.8 / l3) / (0.8 + 0.2 / l3), abs=1e-15)
        assert value == pytest.approx(0.76091, abs=5e-6)

    def test_uniform_target(self):
        t = np.full((3, 4), 0.25)
        q = random_simplex(np.random.default_rng(3), 3, 4)
        assert metrics.ndcg(t, q) == pytest.approx(1.0, abs=1e-15)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        t = random_simplex(rng, 50, 6)
        q = random_simplex(rng, 50, 6)
        expected = np.mean([brute_force_ndcg(a, b) for a, b in zip(t, q)])
        assert metrics.ndcg(t, q) == pytest.approx(expected, abs=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            metrics.ndcg([[0.5, 0.5]], [[0.2, 0.3, 0.5]])


class TestAccuracyRanking:
    def test_perfect_binary(self):
        t = [[0.7, 0.3], [0.1, 0.9]]
        assert metrics.accuracy_ranking_decrease(t, t) == 0.75

    def test_reversed_binary(self):
        assert metrics.accuracy_ranking_decrease([[0.7, 0.3]], [[0.3, 0.7]]) == 0.0

    def test_three_way_example(self):
        assert metrics.accuracy_ranking_decrease([[0.6, 0.3, 0.1]], [[0.6, 0.1, 0.3]]) == pytest.approx(1 / 3, abs=1e-16)

    @pytest.mark.parametrize("k", [2, 3, 4, 7])
    def test_maximum_is_harmonic_over_k(self, k):
        t = random_simplex(np.random.default_rng(k), 10, k)
        hk = sum(1 / j for j in range(1, k + 1))
        assert metrics.accuracy_ranking_decrease(t, t) == pytest.approx(hk / k, abs=1e-15)
        assert metrics.max_accuracy_ranking(k) == pytest.approx(hk / k, abs=1e-15)

    def test_brute_force_all_permutations(self):
        # enumerate every predicted ordering of K=4 against a fixed truth
        t = np.array([[0.4, 0.3, 0.2, 0.1]])
        for perm in itertools.permutations(range(4)):
            q = np.zeros((1, 4))
            q[0, list(perm)] = [0.4, 0.3, 0.2, 0.1]
            expected = sum(1 / (k + 1) for k in range(4) if perm[k] == k) / 4
            assert metrics.accuracy_ranking_decrease(t, q) == pytest.approx(expected, abs=1e-15)


class TestMetricInvariants:
    @pytest.fixture
    def data(self):
        rng = np.random.default_rng(9)
        return random_simplex(rng, 60, 5), random_simplex(rng, 60, 5)

    def test_instance_permutation(self, data):
        t, q = data
        perm = np.random.default_rng(1).permutation(len(t))
        for fn in (metrics.macro_f1, metrics.ndcg, metrics.accuracy_ranking_decrease):
            assert fn(t[perm], q[perm]) == pytest.approx(fn(t, q), abs=1e-14)

    def test_monotone_rescaling(self, data):
        t, q = data
        q2 = q**2 / np.sum(q**2, axis=1, keepdims=True)
        for fn in (metrics.macro_f1, metrics.ndcg, metrics.accuracy_ranking_decrease):
            assert fn(t, q2) == fn(t, q)

    def test_ranges(self, data):
        t, q = data
        assert 0.0 <= metrics.ndcg(t, q) <= 1.0
        assert 0.0 <= metrics.macro_f1(t, q) <= 1.0
        assert 0.0 <= metrics.accuracy_ranking_decrease(t, q) <= metrics.max_accuracy_ranking(5)
