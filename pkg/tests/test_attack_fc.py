from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import central_difference, two_layer_relu_z0

from ami_lab.attack_fc import (FcGradientReport, fc_client_gradients, fc_craft, fc_forward_z0, fc_guess, fc_loss,
                               fc_select_tau, flatten_point)
from ami_lab.data import AlphabetStats, GridAlphabet, alphabet_stats, gen_onehot
from ami_lab.errors import EmptyBatch, InvalidTau, ShapeMismatch, SingletonAlphabet
from ami_lab.numerics import RngStream


def test_craft_zero_target():
    p = fc_craft(np.zeros(3), 1.0)
    assert not p.b1.any() and p.b2_1 == 1.0


def test_craft_bias_layout():
    p = fc_craft(np.array([1.0, 0.0]), 0.5)
    assert p.b1.tolist() == [-1.0, 0.0, 1.0, 0.0]
    assert np.array_equal(p.w1, np.vstack([np.eye(2), -np.eye(2)]))
    assert np.all(p.w2_row == -1)


def test_craft_column_structure():
    p = fc_craft(np.arange(5.0), 2.0)
    assert np.all((p.w1 == 1).sum(axis=0) == 1) and np.all((p.w1 == -1).sum(axis=0) == 1)
    assert np.all((p.w1 == 1).sum() == 5) and (p.w1 == -1).sum() == 5


def test_craft_invalid_tau():
    with pytest.raises(InvalidTau):
        fc_craft(np.zeros(2), 0.0)
    with pytest.raises(InvalidTau):
        fc_craft(np.zeros(2), -1.0)


def test_forward_examples():
    t = np.array([0.0, 1.0, 0.0])
    p = fc_craft(t, 1.0)
    assert fc_forward_z0(p, t) == 1.0
    assert fc_forward_z0(p, np.array([1.0, 0.0, 0.0])) == 0.0
    q = fc_craft(np.array([0.5, 0.5]), 0.3)
    assert fc_forward_z0(q, np.array([0.55, 0.45])) == pytest.approx(0.2)
    with pytest.raises(ShapeMismatch):
        fc_forward_z0(p, np.zeros(2))


def test_forward_matches_closed_form_on_10k_draws():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        d = int(rng.integers(1, 9))
        t, x = rng.standard_normal(d), rng.standard_normal(d)
        tau = float(rng.uniform(0.01, 5))
        p = fc_craft(t, tau)
        assert abs(fc_forward_z0(p, x) - max(tau - np.abs(x - t).sum(), 0.0)) < 1e-10


@settings(max_examples=100, deadline=None)
@given(x=st.lists(st.floats(-10, 10), min_size=3, max_size=3), t=st.lists(st.floats(-10, 10), min_size=3, max_size=3),
       tau=st.floats(0.001, 30))
def test_forward_matches_scalar_oracle(x, t, tau):
    assert fc_forward_z0(fc_craft(np.array(t), tau), np.array(x)) == pytest.approx(
        two_layer_relu_z0(x, t, tau), abs=1e-9)


def test_gradients_examples():
    d = gen_onehot(8, 1, 6, RngStream(0))
    t = np.zeros((8, 1))
    # a target absent from the batch
    absent = [i for i in range(8) if not any(np.argmax(p) == i for p in d)][0]
    t[absent] = 1
    p = fc_craft(t, 1.0)
    rep = fc_client_gradients(p, list(d))
    assert rep.grad_b2_1 == 0 and rep.activated_count == 0 and fc_guess(rep) == 0
    p2 = fc_craft(d[2], 1.0)
    rep2 = fc_client_gradients(p2, list(d))
    assert rep2.grad_b2_1 >= 1 / 6 and fc_guess(rep2) == 1


def test_gradient_quarter():
    batch = [np.eye(4)[i] for i in range(4)]
    rep = fc_client_gradients(fc_craft(batch[1], 1.0), batch)
    assert rep.grad_b2_1 == 0.25 and rep.activated_count == 1


def test_gradient_empty_batch():
    with pytest.raises(EmptyBatch):
        fc_client_gradients(fc_craft(np.zeros(2), 1.0), [])


@pytest.mark.parametrize("grad,bit", [(0.0, 0), (0.25, 1), (1.0, 1)])
def test_guess(grad, bit):
    assert fc_guess(FcGradientReport(grad, int(grad * 4), 4)) == bit


def test_indicator_property():
    rng = np.random.default_rng(1)
    for _ in range(200):
        t = rng.standard_normal(3)
        batch = [rng.standard_normal(3) for _ in range(5)]
        rep = fc_client_gradients(fc_craft(t, 1.5), batch)
        assert (rep.grad_b2_1 != 0) == (rep.activated_count > 0)


def test_gradient_matches_finite_difference():
    rng = np.random.default_rng(2)
    checked = 0
    while checked < 100:
        d, n = int(rng.integers(2, 6)), int(rng.integers(1, 6))
        t = rng.standard_normal(d)
        batch = [t + rng.standard_normal(d) * 0.4 for _ in range(n)]
        p = fc_craft(t, float(rng.uniform(0.5, 2.0)))
        if min(abs(p.b2_1 - np.abs(x - t).sum()) for x in batch) < 1e-3:
            continue  # kink
        g = fc_client_gradients(p, batch).grad_b2_1
        fd = central_difference(lambda b: fc_loss(replace(p, b2_1=b), batch), p.b2_1)
        assert abs(fd - g) <= 1e-5 * max(abs(g), 1e-12) or (g == 0 and abs(fd) < 1e-9)
        checked += 1


def test_flatten_is_column_major():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert flatten_point(x).tolist() == [1.0, 3.0, 2.0, 4.0]


def test_select_tau():
    assert fc_select_tau(alphabet_stats(np.eye(5))) == 1.0
    assert fc_select_tau(alphabet_stats(GridAlphabet(0.4, 5))) == pytest.approx(0.2)
    # unprotected dictionary: default is half the closest pair, below the min distance
    words = np.array([[0.0, 0.0], [3.0, 1.0], [1.0, 1.0]])
    tau = fc_select_tau(alphabet_stats(words))
    assert tau == 1.0 and tau < 2.0
    with pytest.raises(SingletonAlphabet):
        fc_select_tau(AlphabetStats(0.0, 1))


def test_perfect_on_unprotected_dictionary():
    words = gen_onehot(12, 2, 30, RngStream(3))
    tau = fc_select_tau(alphabet_stats(np.stack([flatten_point(w) for w in words])))
    for i in range(0, 30, 3):
        batch = [words[j] for j in range(30) if j != i]
        assert fc_guess(fc_client_gradients(fc_craft(words[i], tau), batch)) == 0
        assert fc_guess(fc_client_gradients(fc_craft(words[i], tau), list(words))) == 1
