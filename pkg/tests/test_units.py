import numpy as np
import pytest

from nmtr.numeric import Param, relu
from nmtr.units import GmfUnit, MlpUnit, NeumfUnit, make_unit, tower_widths

from gradcheck import TOL, check


def test_gmf_ones_is_inner_product():
    rng = np.random.default_rng(0)
    u = GmfUnit(5, h=np.ones(5))
    for _ in range(20):
        p, q = rng.normal(size=5), rng.normal(size=5)
        assert u.score(p, q) == pytest.approx(p @ q, abs=1e-12)


def test_gmf_zero_user():
    u = GmfUnit(3, np.random.default_rng(1))
    assert u.score(np.zeros(3), np.array([1.0, 2.0, 3.0])) == 0.0


def test_gmf_hand_example():
    u = GmfUnit(2, h=np.array([0.5, 0.5]))
    assert u.score(np.array([1.0, 2.0]), np.array([3.0, -1.0])) == pytest.approx(0.5)


def test_gmf_backward_product_rule():
    h = np.array([0.3, -1.0, 2.0])
    u = GmfUnit(3, h=h)
    p, q = np.array([1.0, 2.0, 3.0]), np.array([-1.0, 0.5, 2.0])
    u.forward(p, q)
    dp, dq = u.backward(1.7)
    assert np.allclose(dp, 1.7 * h * q)
    assert np.allclose(dq, 1.7 * h * p)
    assert np.allclose(u.h.grad, 1.7 * p * q)


def test_mlp_zero_weights_give_zero():
    u = MlpUnit(4, 2, np.random.default_rng(0))
    for p in u.params():
        p.value[...] = 0
    assert u.score(np.ones(4), np.ones(4)) == 0.0


def test_mlp_identity_layer():
    u = MlpUnit(2, 1, final_width=4)
    (W, b), = u.layers
    W.value[...] = np.eye(4)
    b.value[...] = 0
    u.h.value[...] = 1
    assert u.score(np.ones(2), np.ones(2)) == pytest.approx(4.0)


def test_mlp_dead_relu():
    rng = np.random.default_rng(3)
    u = MlpUnit(3, 2, rng)
    u.layers[0][1].value[...] = -1e9
    for _ in range(5):
        assert u.score(rng.normal(size=3), rng.normal(size=3)) == 0.0


def test_tower_widths():
    assert tower_widths(8, 3) == [32, 16, 8]
    assert tower_widths(8, 1) == [8]
    assert tower_widths(8, 2, final_width=4) == [8, 4]
    with pytest.raises(ValueError):
        tower_widths(8, 0)


def _independent_neumf(unit, p, q):
    z = np.concatenate([p, q])
    for W, b in unit.layers:
        z = relu(W.value @ z + b.value)
    return float(unit.h.value @ np.concatenate([p * q, z]))


def test_neumf_matches_step_by_step():
    rng = np.random.default_rng(7)
    u = NeumfUnit(4, 3, rng)
    for _ in range(10):
        p, q = rng.normal(size=4), rng.normal(size=4)
        assert u.score(p, q) == pytest.approx(_independent_neumf(u, p, q), abs=1e-12)


def test_neumf_branch_ablation():
    rng = np.random.default_rng(8)
    E = 4
    u = NeumfUnit(E, 2, rng)
    p, q = rng.normal(size=E), rng.normal(size=E)
    h = u.h.value.copy()
    u.h.value[:E], u.h.value[E:] = 1.0, 0.0
    assert u.score(p, q) == pytest.approx(p @ q, abs=1e-12)
    u.h.value[:E], u.h.value[E:] = 0.0, h[E:]
    mlp = MlpUnit(E, 2, final_width=None)
    for (W, b), (W2, b2) in zip(u.layers, mlp.layers):
        W2.value[...] = W.value
        b2.value[...] = b.value
    mlp.h.value[...] = h[E:]
    assert u.score(p, q) == pytest.approx(mlp.score(p, q), abs=1e-12)


def test_dimension_mismatch():
    u = GmfUnit(3, np.random.default_rng(0))
    with pytest.raises(ValueError):
        u.score(np.ones(3), np.ones(4))


def test_backward_needs_forward():
    u = MlpUnit(3, 1, np.random.default_rng(0))
    with pytest.raises(RuntimeError):
        u.backward(1.0)


@pytest.mark.parametrize("kind", ["gmf", "mlp", "neumf"])
def test_zero_upstream_zero_grads(kind):
    rng = np.random.default_rng(0)
    u = make_unit(kind, 4, rng, num_layers=2)
    u.forward(rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    dp, dq = u.backward(np.zeros(3))
    assert not dp.any() and not dq.any()
    assert all(not p.grad.any() for p in u.params())


def test_relu_mask_reused_in_backward():
    # a forward on one batch followed by backward must use that batch's mask,
    # even if score() is called on other inputs in between
    rng = np.random.default_rng(2)
    u = MlpUnit(3, 2, rng)
    p, q = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    u.forward(p, q)
    u.score(-p, -q)
    dp1, dq1 = u.backward(np.ones(4))
    g1 = [x.grad.copy() for x in u.params()]
    for x in u.params():
        x.zero_grad()
    u.forward(p, q)
    dp2, dq2 = u.backward(np.ones(4))
    assert np.array_equal(dp1, dp2) and np.array_equal(dq1, dq2)
    assert all(np.array_equal(a, x.grad) for a, x in zip(g1, u.params()))


CONFIGS = [(kind, L) for kind in ("gmf", "mlp", "neumf") for L in (1, 2, 3)
           if not (kind == "gmf" and L > 1)]


@pytest.mark.parametrize("kind,layers", CONFIGS)
def test_unit_gradients_match_finite_differences(kind, layers):
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        E = int(rng.integers(2, 7))
        B = int(rng.integers(1, 5))
        u = make_unit(kind, E, rng, num_layers=layers)
        for prm in u.params():
            prm.value[...] += rng.normal(0, 0.3, size=prm.shape)
        P = Param("p", rng.normal(size=(B, E)))
        Q = Param("q", rng.normal(size=(B, E)))
        w = rng.normal(size=B)

        def loss():
            return float(w @ np.tanh(u.score(P.value, Q.value)))

        def loss_and_backward():
            s = u.forward(P.value, Q.value)
            dp, dq = u.backward(w * (1 - np.tanh(s) ** 2))
            P.grad += dp
            Q.grad += dq

        worst = max(worst, check(loss_and_backward, loss, u.params() + [P, Q]))
    assert worst < TOL
