import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmtr.model import NmtrModel
from nmtr.numeric import sigmoid
from nmtr.training import joint_loss, joint_loss_upstream

from gradcheck import TOL, check, perturb


def zero_model(R, unit="gmf", M=3, N=4, E=3):
    m = NmtrModel.build(M, N, R, unit, E, mlp_layers=2, seed=0)
    for p in m.params():
        p.value[...] = 0
    return m


def test_zero_params_cascade_values():
    mpmath.mp.dps = 30
    y = zero_model(2).predict_all(0, 0)
    assert y[0] == 0.5
    assert y[1] == pytest.approx(float(1 / (1 + mpmath.exp(-0.5))), abs=1e-12)
    assert y[1] == pytest.approx(0.62246, abs=1e-5)


def test_single_level_is_plain_ncf():
    rng = np.random.default_rng(1)
    m = NmtrModel.build(4, 5, 1, "neumf", 3, 2, seed=1)
    perturb(m.params(), rng)
    P, Q = m.embeddings.P.value, m.embeddings.Q.value
    for u, i in [(0, 0), (3, 4), (2, 1)]:
        expected = sigmoid(m.units[0].score(P[u], Q[i]) + m.biases[0].value[i])
        assert m.predict_all(u, i)[0] == pytest.approx(expected, abs=1e-15)


def test_large_top_bias_leaves_lower_levels():
    rng = np.random.default_rng(2)
    m = NmtrModel.build(3, 3, 3, "gmf", 4, seed=2)
    perturb(m.params(), rng)
    before = m.predict_all(1, 2)
    m.biases[2].value[2] = 1e6
    after = m.predict_all(1, 2)
    assert np.array_equal(before[:2], after[:2])
    assert after[2] == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(["gmf", "mlp", "neumf"]), st.integers(1, 3))
def test_outputs_in_open_interval(seed, unit, R):
    rng = np.random.default_rng(seed)
    m = NmtrModel.build(4, 5, R, unit, 3, 2, seed=seed)
    perturb(m.params(), rng, scale=2.0)
    users, items = np.repeat(np.arange(4), 5), np.tile(np.arange(5), 4)
    y = m.predict(users, items)
    a = m.predict_logits(users, items)
    assert np.all(np.isfinite(y)) and np.all((y >= 0) & (y <= 1))
    # float64 can only represent sigmoid(a) < 1 for a below about 36.7
    representable = (a > -700) & (a < 36)
    assert np.all((y[representable] > 0) & (y[representable] < 1))


@pytest.mark.parametrize("unit", ["gmf", "mlp", "neumf"])
def test_cascade_causality(unit):
    rng = np.random.default_rng(3)
    R = 3
    m = NmtrModel.build(3, 4, R, unit, 3, 2, seed=3)
    perturb(m.params(), rng)
    users, items = np.repeat(np.arange(3), 4), np.tile(np.arange(4), 3)
    base = m.predict(users, items)
    for r in range(R):
        for p in m.level_params(r):
            saved = p.value.copy()
            p.value[...] += rng.normal(0, 1.0, size=p.shape)
            y = m.predict(users, items)
            p.value[...] = saved
            assert np.array_equal(y[:, :r], base[:, :r])
            assert not np.allclose(y[:, r], base[:, r])


@pytest.mark.parametrize("unit", ["gmf", "mlp", "neumf"])
def test_shared_embedding_reaches_every_level(unit):
    rng = np.random.default_rng(4)
    m = NmtrModel.build(3, 4, 3, unit, 4, 2, seed=4)
    perturb(m.params(), rng)
    base = m.predict_all(1, 2)
    m.embeddings.P.value[1] += 0.5
    moved = m.predict_all(1, 2)
    assert np.all(moved != base)


def test_score_target_tie_break():
    m = zero_model(2, N=6)
    assert m.score_target(0, [5, 2, 4, 0]) == [0, 2, 4, 5]
    assert m.score_target(0, [3]) == [3]


def test_score_target_matches_resort():
    rng = np.random.default_rng(5)
    m = NmtrModel.build(2, 5, 2, "mlp", 3, 2, seed=5)
    perturb(m.params(), rng)
    scores = [m.predict_all(1, i)[-1] for i in range(5)]
    expected = sorted(range(5), key=lambda i: (-scores[i], i))
    assert m.score_target(1, range(5)) == expected


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 1000))
def test_ranking_invariant_under_monotone_transform(seed):
    rng = np.random.default_rng(seed)
    m = NmtrModel.build(2, 7, 2, "gmf", 3, seed=seed)
    perturb(m.params(), rng)
    order = m.score_target(0, range(7))
    scores = m.score_users([0])[0]
    transformed = np.log(scores) * 3 + 1
    assert order == sorted(range(7), key=lambda i: (-transformed[i], i))


def test_upstream_only_at_level_one_leaves_level_two_untouched():
    rng = np.random.default_rng(6)
    m = NmtrModel.build(2, 2, 2, "gmf", 3, seed=6)
    perturb(m.params(), rng)
    m.forward([0], [1])
    m.nmtr_backward(0, 1, [0.7, 0.0])
    assert all(not p.grad.any() for p in m.level_params(1))
    assert any(p.grad.any() for p in m.level_params(0))


def test_upstream_only_at_level_two_reaches_level_one():
    rng = np.random.default_rng(7)
    m = NmtrModel.build(2, 2, 2, "gmf", 3, seed=7)
    perturb(m.params(), rng)
    m.forward([0], [1])
    m.nmtr_backward(0, 1, [0.0, 1.0])
    assert np.all(m.units[0].h.grad != 0)
    # y2 increases with y1, so a positive upstream on y2 pushes the level-1 bias grad positive
    assert m.biases[0].grad[1] > 0


def test_nmtr_backward_requires_matching_forward():
    m = zero_model(2)
    m.forward([0], [0])
    with pytest.raises(RuntimeError):
        m.nmtr_backward(1, 0, [1.0, 1.0])


def test_upstream_matches_finite_difference_of_joint_loss():
    rng = np.random.default_rng(8)
    probs = rng.uniform(0.05, 0.95, size=12)
    labels = rng.integers(0, 2, size=12)
    levels = rng.integers(0, 3, size=12)
    w = (0.2, 0.3, 0.5)
    up = joint_loss_upstream(probs, labels, levels, w)
    h = 1e-6
    for k in range(12):
        plus, minus = probs.copy(), probs.copy()
        plus[k] += h
        minus[k] -= h
        fd = (joint_loss(plus, labels, levels, w) - joint_loss(minus, labels, levels, w)) / (2 * h)
        assert up[k] == pytest.approx(fd, rel=1e-6)


def nmtr_loss_check(unit, R, seed):
    rng = np.random.default_rng(seed)
    M, N, E = int(rng.integers(2, 8)), int(rng.integers(2, 8)), int(rng.integers(2, 7))
    m = NmtrModel.build(M, N, R, unit, E, mlp_layers=int(rng.integers(1, 4)), seed=seed)
    perturb(m.params(), rng)
    B = 6
    users, items = rng.integers(M, size=B), rng.integers(N, size=B)
    labels = rng.integers(0, 2, size=(B, R))
    w = rng.dirichlet(np.ones(R))

    def loss():
        # same joint loss, evaluated from logits as softplus terms so the
        # finite differences do not suffer from 1 - y cancellation
        a = m.predict_logits(users, items)
        return float((w * (labels * np.logaddexp(0, -a) + (1 - labels) * np.logaddexp(0, a))).sum()) / B

    def loss_and_backward():
        c = m.forward(users, items)
        lv = np.tile(np.arange(R), B)
        up = joint_loss_upstream(c.probs.ravel(), labels.ravel(), lv, w).reshape(B, R) / B
        m.backward(up, c)

    return check(loss_and_backward, loss, m.params())


@pytest.mark.parametrize("unit", ["gmf", "mlp", "neumf"])
@pytest.mark.parametrize("R", [1, 2, 3])
def test_joint_loss_gradient_matches_finite_differences(unit, R):
    worst = max(nmtr_loss_check(unit, R, seed) for seed in range(20))
    assert worst < TOL
