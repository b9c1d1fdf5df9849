import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmtr.data import DataError, SynthConfig, synthesize_cascade
from nmtr.model import NmtrModel
from nmtr.training import (
    CascadeSampler,
    TrainConfig,
    default_loss_weights,
    joint_loss,
    sample_minibatch,
    sample_negatives,
    train,
    train_multitask,
    train_sequential,
    validate_loss_weights,
)

from conftest import make_dataset, random_cascade


def test_single_positive_half_probability():
    assert joint_loss([0.5], [1], [0], (1.0,)) == pytest.approx(0.693147, abs=1e-6)


def test_three_levels_equal_weights():
    w = (1 / 3, 1 / 3, 1 / 3)
    assert joint_loss([0.5, 0.5, 0.5], [1, 1, 1], [0, 1, 2], w) == pytest.approx(0.693147, abs=1e-6)


def test_perfect_predictions_drive_loss_to_zero():
    losses = [joint_loss([1 - e, e], [1, 0], [0, 0], (1.0,)) for e in (1e-2, 1e-4, 1e-8)]
    assert losses[0] > losses[1] > losses[2] > 0
    assert losses[2] < 1e-7


def test_clamp_keeps_loss_finite():
    assert math.isfinite(joint_loss([0.0, 1.0], [1, 0], [0, 0], (1.0,)))


def test_joint_loss_matches_logit_form():
    rng = np.random.default_rng(0)
    a = rng.normal(0, 3, size=50)
    y = 1 / (1 + np.exp(-a))
    labels = rng.integers(0, 2, 50)
    levels = rng.integers(0, 2, 50)
    w = np.array([0.4, 0.6])
    expected = (w[levels] * (labels * np.logaddexp(0, -a) + (1 - labels) * np.logaddexp(0, a))).sum()
    assert joint_loss(y, labels, levels, w) == pytest.approx(expected, rel=1e-10)


def test_weight_validation():
    assert validate_loss_weights((0.4, 0.6), 2) == (0.4, 0.6)
    for bad in [(0.5, 0.6), (1.2, -0.2), (1.0,)]:
        with pytest.raises(ValueError):
            validate_loss_weights(bad, 2)


def test_default_weights():
    assert default_loss_weights(2) == (0.4, 0.6)
    assert default_loss_weights(2, "mlp") == (0.5, 0.5)
    assert default_loss_weights(3) == pytest.approx((1 / 3,) * 3)


def test_pair_at_two_levels_emits_two_positives_and_eight_negatives():
    ds = make_dataset([[[0, 0]], [[0, 0]]], 1, 20)
    batch = CascadeSampler(ds, negative_ratio=4).sample(1, np.random.default_rng(0))
    assert batch.num_pairs == 1
    assert int(batch.labels.sum()) == 2
    assert len(batch) - int(batch.labels.sum()) == 8
    assert sorted(batch.levels[batch.labels == 1].tolist()) == [0, 1]


def test_ratio_one_single_level():
    ds = make_dataset([[[0, 0]], np.empty((0, 2))], 1, 5)
    batch = sample_minibatch(ds, 1, 1, np.random.default_rng(1))
    assert batch.labels.tolist() == [1, 0]
    assert batch.levels.tolist() == [0, 0]


def test_batch_stops_at_first_pair_boundary(small_synth):
    sampler = CascadeSampler(small_synth, negative_ratio=4)
    rng = np.random.default_rng(2)
    for size in (1, 7, 64, 300):
        b = sampler.sample(size, rng)
        assert len(b) >= size
        # dropping the last pair's instances would fall under the target
        per_pair = 5
        assert len(b) - per_pair * small_synth.num_behaviors < size


def test_negatives_never_hit_positive_set(small_synth):
    rng = np.random.default_rng(3)
    sampler = CascadeSampler(small_synth, negative_ratio=4)
    seen = 0
    while seen < 10_000:
        b = sampler.sample(512, rng)
        neg = b.labels == 0
        for r in range(small_synth.num_behaviors):
            m = neg & (b.levels == r)
            assert not small_synth.contains_many(b.users[m], b.items[m], r).any()
        pos = ~neg
        for r in range(small_synth.num_behaviors):
            m = pos & (b.levels == r)
            assert small_synth.contains_many(b.users[m], b.items[m], r).all()
        seen += int(neg.sum())


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_negative_soundness_property(seed):
    rng = np.random.default_rng(seed)
    ds = random_cascade(rng, 6, 8, 3, density=0.5)
    if ds.count(0) == 0:
        return
    users = np.repeat(ds.pairs[0][:, 0], 3)
    for r in range(3):
        full = ds.user_counts(r) >= ds.num_items
        us = users[~full[users]]
        neg = sample_negatives(ds, us, r, rng)
        assert not ds.contains_many(us, neg, r).any()


def test_saturated_user_errors():
    pairs = [[0, i] for i in range(3)]
    ds = make_dataset([pairs], 1, 3)
    with pytest.raises(DataError):
        CascadeSampler(ds, 1).sample(1, np.random.default_rng(0))


def test_epoch_is_distinct_union(small_synth):
    sampler = CascadeSampler(small_synth)
    assert sampler.epoch_pairs == len(small_synth.union_pairs)


def test_one_hot_level_one_never_touches_level_two(small_synth):
    model = NmtrModel.build(small_synth.num_users, small_synth.num_items, 2, "neumf", 8, 2, seed=0)
    top = [p.value.copy() for p in model.level_params(1)]
    worst = []

    def hook(m):
        worst.append(max(float(np.abs(p.grad).max()) for p in m.level_params(1)))

    cfg = TrainConfig(loss_weights=(1.0, 0.0), epochs=3, batch_size=64, l2=(0.0, 0.0))
    train_multitask(model, small_synth, cfg, grad_hook=hook)
    assert worst and max(worst) == 0.0
    assert all(np.array_equal(a, p.value) for a, p in zip(top, model.level_params(1)))


def test_overfit_single_pair():
    ds = make_dataset([[[0, 0]], [[0, 0]]], 1, 5)
    model = NmtrModel.build(1, 5, 2, "gmf", 4, seed=0)
    cfg = TrainConfig(loss_weights=(0.5, 0.5), epochs=200, batch_size=10, learning_rate=0.1,
                      negative_ratio=1, l2=(0.0, 0.0))
    train_multitask(model, ds, cfg)
    assert model.predict_all(0, 0)[-1] > 0.9


def test_loss_mostly_decreases_early():
    ok = 0
    for seed in range(5):
        ds = synthesize_cascade(SynthConfig(num_users=100, num_items=60, seed=seed))
        model = NmtrModel.build(ds.num_users, ds.num_items, 2, "gmf", 16, seed=seed)
        res = train_multitask(model, ds, TrainConfig(epochs=5, seed=seed, learning_rate=0.05))
        ok += all(b <= a for a, b in zip(res.losses, res.losses[1:]))
    assert ok >= 4


def test_same_seed_same_trace(small_synth):
    def run():
        model = NmtrModel.build(small_synth.num_users, small_synth.num_items, 2, "mlp", 8, 2, seed=4)
        return train(model, small_synth, TrainConfig(epochs=3, seed=4)).losses, model

    (a, ma), (b, mb) = run(), run()
    assert a == b
    assert all(np.array_equal(p.value, q.value) for p, q in zip(ma.params(), mb.params()))


def test_sequential_single_level_equals_multitask(small_synth):
    ds = small_synth.restrict_to_target()
    cfg = TrainConfig(loss_weights=(1.0,), epochs=3, seed=1)
    m1 = NmtrModel.build(ds.num_users, ds.num_items, 1, "gmf", 8, seed=1)
    m2 = NmtrModel.build(ds.num_users, ds.num_items, 1, "gmf", 8, seed=1)
    r1 = train_multitask(m1, ds, cfg)
    r2 = train_sequential(m2, ds, cfg)
    assert r1.losses == r2.losses
    assert all(np.array_equal(p.value, q.value) for p, q in zip(m1.params(), m2.params()))


def test_sequential_runs_one_phase_per_level(synth3):
    model = NmtrModel.build(synth3.num_users, synth3.num_items, 3, "gmf", 8, seed=0)
    res = train_sequential(model, synth3, TrainConfig(epochs=2))
    assert res.phases == [0, 0, 1, 1, 2, 2]


def test_invalid_weights_rejected_before_training(small_synth):
    model = NmtrModel.build(small_synth.num_users, small_synth.num_items, 2, "gmf", 8, seed=0)
    before = [p.value.copy() for p in model.params()]
    with pytest.raises(ValueError):
        train(model, small_synth, TrainConfig(loss_weights=(0.5, 0.6), epochs=1))
    assert all(np.array_equal(a, p.value) for a, p in zip(before, model.params()))


def test_callback_sees_every_epoch(small_synth):
    model = NmtrModel.build(small_synth.num_users, small_synth.num_items, 2, "gmf", 8, seed=0)
    seen = []
    train(model, small_synth, TrainConfig(epochs=3), callback=lambda e, m, loss: seen.append(e))
    assert seen == [1, 2, 3]
