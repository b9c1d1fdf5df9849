import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmtr.data import SplitDataset
from nmtr.evaluation import (
    EvalCounters,
    RankResult,
    evaluate,
    hit_ratio,
    ndcg,
    rank_all,
    rank_test_item,
)

from conftest import make_dataset


class TableModel:
    """Scores read from a fixed (M, N) table."""

    def __init__(self, scores):
        self.scores = np.asarray(scores, dtype=float)

    def score_users(self, users):
        return self.scores[np.asarray(users)]


def split_from(target_train, test_items, num_users, num_items, lower=None):
    lower = target_train if lower is None else lower
    ds = make_dataset([lower, target_train], num_users, num_items)
    return SplitDataset(ds, dict(test_items))


def brute_rank(scores, train_items, test, num_items):
    candidates = [i for i in range(num_items) if i not in set(train_items) or i == test]
    order = sorted(candidates, key=lambda i: (-scores[i], i))
    return order.index(test) + 1


def test_strictly_highest_is_rank_one():
    split = split_from(np.empty((0, 2)), {0: 2}, 1, 5)
    assert rank_test_item(TableModel([[0, 1, 9, 3, 2]]), split, 0).rank == 1


def test_all_equal_smallest_index_is_rank_one():
    split = split_from([[0, 0]], {0: 1}, 1, 5)
    assert rank_test_item(TableModel(np.zeros((1, 5))), split, 0).rank == 1
    split = split_from(np.empty((0, 2)), {0: 3}, 1, 5)
    assert rank_test_item(TableModel(np.zeros((1, 5))), split, 0).rank == 4


def test_training_target_items_leave_candidate_set():
    # item 0 scores highest but was bought in training; item 1 was only viewed
    split = split_from([[0, 0]], {0: 2}, 1, 4, lower=[[0, 0], [0, 1]])
    model = TableModel([[10, 5, 1, 0]])
    assert rank_test_item(model, split, 0).rank == 2
    assert rank_test_item(model, split, 0, exclude="any").rank == 1
    assert rank_test_item(model, split, 0, exclude="none").rank == 3


def test_user_without_test_item():
    split = split_from(np.empty((0, 2)), {}, 1, 3)
    with pytest.raises(KeyError):
        rank_test_item(TableModel(np.zeros((1, 3))), split, 0)


def test_random_twenty_items_matches_sort():
    rng = np.random.default_rng(0)
    for _ in range(50):
        scores = rng.integers(0, 5, size=(1, 20)).astype(float)
        train = rng.choice(20, size=4, replace=False)
        test = int(rng.choice(np.setdiff1d(np.arange(20), train)))
        split = split_from([[0, i] for i in train], {0: test}, 1, 20)
        got = rank_test_item(TableModel(scores), split, 0).rank
        assert got == brute_rank(scores[0], train.tolist(), test, 20)


def test_hit_ratio_examples():
    assert hit_ratio([1, 2, 3], 5) == 1.0
    assert hit_ratio([6], 5) == 0.0
    assert hit_ratio([1, 7, 12], 10) == pytest.approx(2 / 3)


def test_ndcg_examples():
    assert ndcg([1], 10) == 1.0
    assert ndcg([3], 3) == 0.5
    assert ndcg([1, 3], 10) == 0.75
    assert ndcg([RankResult(0, 3)], 2) == 0.0


def test_metric_errors():
    with pytest.raises(ValueError):
        hit_ratio([], 5)
    with pytest.raises(ValueError):
        ndcg([1], 0)


@settings(max_examples=100)
@given(st.lists(st.integers(1, 300), min_size=1, max_size=50), st.integers(1, 300), st.integers(0, 50))
def test_ndcg_below_hr_and_monotone(ranks, K, dk):
    assert ndcg(ranks, K) <= hit_ratio(ranks, K)
    assert hit_ratio(ranks, K) <= hit_ratio(ranks, K + dk)
    assert ndcg(ranks, K) <= ndcg(ranks, K + dk)


def test_counters_merge_additively():
    ranks = [1, 4, 9, 60, 2, 33]
    whole = EvalCounters((5, 50))
    a, b = EvalCounters((5, 50)), EvalCounters((5, 50))
    for k, r in enumerate(ranks):
        whole.add(r)
        (a if k % 2 else b).add(r)
    merged = a + b
    assert merged.users == whole.users
    assert np.allclose(merged.hits, whole.hits) and np.allclose(merged.gains, whole.gains)


def oracle_split(num_users, num_items, rng):
    tests = {u: int(rng.integers(num_items)) for u in range(num_users)}
    scores = rng.normal(size=(num_users, num_items))
    for u, i in tests.items():
        scores[u, i] = 100.0
    return split_from(np.empty((0, 2)), tests, num_users, num_items), TableModel(scores)


def test_perfect_model_scores_one():
    split, model = oracle_split(30, 40, np.random.default_rng(1))
    rep = evaluate(model, split, ks=(1, 5, 10))
    assert all(v == 1.0 for v in rep.hr.values())
    assert all(v == 1.0 for v in rep.ndcg.values())


def test_random_model_hit_ratio():
    rng = np.random.default_rng(2)
    U, N = 2000, 100
    split = split_from(np.empty((0, 2)), {u: int(rng.integers(N)) for u in range(U)}, U, N)
    rep = evaluate(TableModel(rng.random((U, N))), split, ks=(10,))
    assert abs(rep.hr[10] - 0.1) <= 0.05


def test_sharded_evaluation_is_identical():
    rng = np.random.default_rng(3)
    U, N = 300, 50
    split = split_from(np.empty((0, 2)), {u: int(rng.integers(N)) for u in range(U)}, U, N)
    model = TableModel(rng.random((U, N)))
    a = evaluate(model, split, ks=(5, 10), chunk=1000)
    b = evaluate(model, split, ks=(5, 10), chunk=17, workers=4)
    assert a.hr == b.hr and a.ndcg == b.ndcg


def test_groups_use_training_target_counts():
    # user 0 has 1 training purchase, user 1 has 3
    target = [[0, 0], [1, 0], [1, 1], [1, 2]]
    split = split_from(target, {0: 4, 1: 5}, 2, 6)
    model = TableModel(np.tile(np.arange(6.0), (2, 1)))
    rep = evaluate(model, split, ks=(1, 3), groups=["1-2", ">2"])
    assert set(rep.groups) == {"1-2", ">2"}
    assert rep.groups["1-2"].num_users == 1 and rep.groups[">2"].num_users == 1
    labels = {row["group"] for row in rep.rows("m")}
    assert labels == {"all", "1-2", ">2"}


def test_rank_all_order_and_users():
    split, model = oracle_split(5, 8, np.random.default_rng(4))
    out = rank_all(model, split)
    assert [r.user for r in out] == list(range(5))
