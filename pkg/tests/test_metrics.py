import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kgconv.errors import ContractViolation
from kgconv.metrics import RankedPrediction, mean_over, mrr, precision_at_1, recall_at_k
from oracles import brute_mrr, brute_precision_at_1, brute_recall_at_k


class TestRecall:
    def test_single_gold_top1(self):
        assert recall_at_k(RankedPrediction(["a", "b", "c"], {"a"}), 1) == 1.0

    def test_half_recall(self):
        assert recall_at_k(RankedPrediction(["a", "c", "b"], {"a", "b"}), 1) == 0.5

    def test_monotone_in_k(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            ranking = list(rng.permutation(10))
            gold = set(rng.choice(10, size=3, replace=False).tolist())
            pred = RankedPrediction(ranking, gold)
            vals = [recall_at_k(pred, k) for k in range(1, 11)]
            assert all(a <= b for a, b in zip(vals, vals[1:]))
            assert vals[-1] == 1.0

    def test_random_scoring_chance_level(self):
        rng = np.random.default_rng(1)
        total = 0.0
        n = 5000
        for _ in range(n):
            ranking = list(rng.permutation(20))
            total += recall_at_k(RankedPrediction(ranking, {0}), 1)
        assert total / n == pytest.approx(0.05, abs=0.01)


class TestPrecision:
    def test_hit(self):
        assert precision_at_1(RankedPrediction(["a", "b"], {"a"})) == 1.0

    def test_miss(self):
        assert precision_at_1(RankedPrediction(["b", "a"], {"a"})) == 0.0

    def test_equals_recall_for_singleton(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            ranking = list(rng.permutation(8))
            pred = RankedPrediction(ranking, {int(rng.integers(8))})
            assert precision_at_1(pred) == recall_at_k(pred, 1)


class TestMrr:
    def test_first(self):
        assert mrr(RankedPrediction(["g", "x"], {"g"})) == 1.0

    def test_second_of_20(self):
        ranking = ["x0", "g"] + [f"x{i}" for i in range(1, 19)]
        assert mrr(RankedPrediction(ranking, {"g"})) == 0.5

    def test_multi_gold_rejected(self):
        with pytest.raises(ContractViolation):
            mrr(RankedPrediction(["a", "b"], {"a", "b"}))

    def test_gold_absent_rejected(self):
        with pytest.raises(ContractViolation):
            mrr(RankedPrediction(["a", "b"], {"z"}))

    def test_uniform_random_expectation(self):
        # closed form: E[MRR] = H_20 / 20 ~= 0.179887
        rng = np.random.default_rng(3)
        n = 20000
        total = sum(
            mrr(RankedPrediction(list(rng.permutation(20)), {0})) for _ in range(n)
        )
        assert total / n == pytest.approx(sum(1 / r for r in range(1, 21)) / 20,
                                          abs=0.01)


class TestAgainstBruteForce:
    def test_thousand_random_lists(self):
        rng = np.random.default_rng(4)
        for _ in range(1000):
            n = int(rng.integers(1, 25))
            ranking = list(rng.permutation(n))
            gold = set(rng.choice(n, size=int(rng.integers(1, min(n, 5) + 1)),
                                  replace=False).tolist())
            pred = RankedPrediction(ranking, gold)
            k = int(rng.integers(1, n + 1))
            assert recall_at_k(pred, k) == brute_recall_at_k(ranking, gold, k)
            assert precision_at_1(pred) == brute_precision_at_1(ranking, gold)
            if len(gold) == 1:
                assert mrr(pred) == brute_mrr(ranking, next(iter(gold)))


class TestInvariances:
    @settings(max_examples=50, deadline=None)
    @given(st.integers(min_value=0, max_value=2 ** 31 - 1),
           st.floats(min_value=0.1, max_value=10.0))
    def test_monotone_score_transform_invariance(self, seed, scale):
        # rankings derived from scores are unchanged by positive scaling,
        # hence so are all metrics
        rng = np.random.default_rng(seed)
        scores = rng.normal(size=12)
        r1 = sorted(range(12), key=lambda i: (-scores[i], i))
        r2 = sorted(range(12), key=lambda i: (-(scale * scores[i]), i))
        assert r1 == r2

    def test_duplicate_ranking_rejected(self):
        with pytest.raises(ContractViolation):
            RankedPrediction(["a", "a"], {"a"})

    def test_empty_gold_rejected(self):
        with pytest.raises(ContractViolation):
            RankedPrediction(["a"], set())

    def test_mean_over(self):
        preds = [RankedPrediction(["a", "b"], {"a"}),
                 RankedPrediction(["b", "a"], {"a"})]
        assert mean_over(preds, precision_at_1) == 0.5
