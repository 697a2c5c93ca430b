import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import grr_transition, quantizer_levels

from ami_lab.errors import InvalidAlphabet, InvalidParams
from ami_lab.ldp import (BinaryCodec, CategoricalAlphabet, MechanismConfig, bitrand_perturb, bitrand_probabilities,
                         codec_decode, codec_encode, dbitflip_decode, dbitflip_perturb, dbitflip_scores,
                         grr_keep_probability, grr_perturb, grr_perturb_batch, ome_perturb, output_alphabet,
                         perturb_datapoint, perturb_pattern, project, rappor_f_from_epsilon, rappor_perturb)
from ami_lab.numerics import RngStream

N = 100_000


def onehot(k, i):
    x = np.zeros(k)
    x[i] = 1.0
    return x


# ---------------------------------------------------------------- GRR


def test_grr_infinite_epsilon_is_identity():
    s = RngStream(1)
    assert all(grr_perturb(i % 5, 5, math.inf, s) == i % 5 for i in range(500))


def test_grr_keep_probability_matches_reference():
    for k, eps in [(2, 0.0), (4, math.log(3)), (256, 6.0)]:
        assert grr_keep_probability(eps, k) == pytest.approx(grr_transition(k, eps)[0, 0], rel=1e-12)


@pytest.mark.parametrize("k,eps", [(2, 0.0), (4, math.log(3))])
def test_grr_empirical_keep_half(k, eps):
    out = grr_perturb_batch(np.zeros(N, dtype=int), k, eps, RngStream(2))
    assert abs(np.mean(out == 0) - 0.5) < 0.005


def test_grr_scalar_keep_rate():
    s = RngStream(3)
    out = np.array([grr_perturb(1, 4, math.log(3), s) for _ in range(20000)])
    assert abs(np.mean(out == 1) - 0.5) < 0.011
    # the other three levels share the rest uniformly
    for j in (0, 2, 3):
        assert abs(np.mean(out == j) - 1 / 6) < 0.01


def test_grr_errors():
    with pytest.raises(InvalidAlphabet):
        grr_perturb(0, 1, 1.0, RngStream(0))
    with pytest.raises(InvalidAlphabet):
        grr_perturb(4, 4, 1.0, RngStream(0))


def test_grr_ldp_frequency_ratio():
    # empirical ratio P[M(x)=o] / P[M(x')=o] stays under e^eps up to sampling error
    k, eps, trials = 3, 1.0, 1_000_000
    freq = np.empty((k, k))
    for x in range(k):
        out = grr_perturb_batch(np.full(trials, x), k, eps, RngStream(4, x))
        freq[x] = np.bincount(out, minlength=k) / trials
    sigma = np.sqrt(freq * (1 - freq) / trials) / freq
    for o in range(k):
        for x in range(k):
            for y in range(k):
                ratio = freq[x, o] / freq[y, o]
                assert ratio <= math.exp(eps) * (1 + 5 * (sigma[x, o] + sigma[y, o]))


# ---------------------------------------------------------------- RAPPOR


def test_rappor_f_zero_identity():
    bits = (RngStream(5).uniform01(1000) < 0.3).astype(np.int8)
    assert np.array_equal(rappor_perturb(bits, 1.0, RngStream(6), f=0.0), bits)


def test_rappor_f_one_uniform():
    bits = np.ones(N, dtype=np.int8)
    assert abs(rappor_perturb(bits, 1.0, RngStream(7), f=1.0).mean() - 0.5) < 0.005
    assert abs(rappor_perturb(1 - bits, 1.0, RngStream(8), f=1.0).mean() - 0.5) < 0.005


def test_rappor_epsilon_mapping_and_flip_rate():
    f = rappor_f_from_epsilon(4.0)
    assert f == pytest.approx(0.2384058440442351, rel=1e-12)
    # the mapping inverts 2 ln((1 - f/2) / (f/2))
    assert 2 * math.log((1 - f / 2) / (f / 2)) == pytest.approx(4.0, rel=1e-12)
    out = rappor_perturb(np.zeros(N, dtype=np.int8), 4.0, RngStream(9))
    assert abs(out.mean() - f / 2) < 0.005


def test_rappor_instantaneous_step():
    out = rappor_perturb(np.ones(N, dtype=np.int8), 1.0, RngStream(10), f=0.0, p=0.2, q=0.9)
    assert abs(out.mean() - 0.9) < 0.005


def test_rappor_invalid_f():
    with pytest.raises(InvalidParams):
        rappor_perturb(np.zeros(3), 1.0, RngStream(0), f=1.5)


# ---------------------------------------------------------------- dBitFlipPM


def test_dbit_infinite_epsilon_one_hot():
    buckets, bits = dbitflip_perturb(3, 6, 6, math.inf, RngStream(0))
    assert np.array_equal(buckets, np.arange(6))
    assert np.array_equal(bits, onehot(6, 3))


def test_dbit_zero_epsilon_uniform_bits():
    s = RngStream(11)
    bits = np.concatenate([dbitflip_perturb(0, 8, 4, 0.0, s)[1] for _ in range(25000)])
    assert abs(bits.mean() - 0.5) < 0.005


def test_dbit_hit_probability():
    s = RngStream(12)
    bits = np.array([dbitflip_perturb(0, 1, 1, 2.0, s)[1][0] for _ in range(N)])
    assert abs(bits.mean() - math.e / (math.e + 1)) < 0.005


def test_dbit_samples_without_replacement():
    buckets, _ = dbitflip_perturb(0, 10, 7, 1.0, RngStream(13))
    assert len(set(buckets.tolist())) == 7


def test_dbit_errors():
    with pytest.raises(InvalidParams):
        dbitflip_perturb(0, 3, 4, 1.0, RngStream(0))


def test_dbit_decode_picks_reported_one():
    scores = dbitflip_scores([1, 4], [0, 1], 6, 2, 2.0)
    assert np.argmax(scores) == 4
    assert dbitflip_decode([1, 4], [0, 1], 6, 2, 2.0, RngStream(0)) == 4


# ---------------------------------------------------------------- BitRand / OME


def test_bitrand_zero_epsilon_uniform():
    bits = (RngStream(14).uniform01(8 * 20000) < 0.5).astype(np.int8)
    out = bitrand_perturb(bits, 0.0, 1.0, 8, RngStream(15))
    assert abs(out.mean() - 0.5) < 0.005


def test_bitrand_high_order_bit_at_eps_8():
    l, reps = 8, 200_000
    p1, _ = bitrand_probabilities(l, l, 8.0, 1.0)
    assert p1[l - 1] == pytest.approx(1 / (1 + math.exp(7)), rel=1e-12)
    out = bitrand_perturb(np.ones(l * reps, dtype=np.int8), 8.0, 1.0, l, RngStream(16))
    top = out.reshape(reps, l)[:, l - 1]
    p = 1 / (1 + math.exp(7))
    assert abs(top.mean() - p) < 3 * math.sqrt(p * (1 - p) / reps)


def test_bitrand_invert_swaps_cases():
    a1, a0 = bitrand_probabilities(8, 4, 3.0, 1.0)
    b1, b0 = bitrand_probabilities(8, 4, 3.0, 1.0, invert=True)
    assert np.allclose(a1, b0) and np.allclose(a0, b1)


def test_bitrand_ome_determinism_and_errors():
    bits = np.array([1, 0, 1, 1, 0, 0, 1, 0], dtype=np.int8)
    assert np.array_equal(bitrand_perturb(bits, 2.0, 1.0, 4, RngStream(3)), bitrand_perturb(bits, 2.0, 1.0, 4, RngStream(3)))
    assert np.array_equal(ome_perturb(bits, 2.0, 1.0, 4, RngStream(3)), ome_perturb(bits, 2.0, 1.0, 4, RngStream(3)))
    with pytest.raises(InvalidParams):
        bitrand_perturb(bits, 1.0, 0.0, 4, RngStream(0))
    with pytest.raises(InvalidParams):
        ome_perturb(bits, 1.0, -1.0, 4, RngStream(0))
    with pytest.raises(InvalidParams):
        bitrand_perturb(bits[:7], 1.0, 1.0, 4, RngStream(0))


def test_ome_even_one_bits_half():
    out = ome_perturb(np.ones(2 * N, dtype=np.int8), 5.0, 1.0, 4, RngStream(17))
    assert abs(out[0::2].mean() - 0.5) < 0.005


def test_ome_zero_bits_at_eps_zero():
    out = ome_perturb(np.zeros(N, dtype=np.int8), 0.0, 1.0, 4, RngStream(18))
    assert abs(out.mean() - 0.5) < 0.005


def test_bitrand_and_ome_are_not_identity_at_infinite_epsilon():
    # documented exception to "epsilon = inf is the identity": the printed
    # formulas keep randomness in the lowest-order and odd positions
    bits = np.ones(4 * 5000, dtype=np.int8)
    assert not np.array_equal(bitrand_perturb(bits, math.inf, 1.0, 4, RngStream(1)), bits)
    assert not np.array_equal(ome_perturb(bits, math.inf, 1.0, 4, RngStream(1)), bits)


# ---------------------------------------------------------------- codec


def test_codec_levels_and_clip():
    c = BinaryCodec(2, -1.0, 1.0)
    assert np.allclose(c.midpoint(np.arange(4)), quantizer_levels(2, -1, 1))
    assert codec_decode(codec_encode(np.array([0.9]), c), c)[0] == 0.75
    assert codec_decode(codec_encode(np.array([5.0, -5.0]), c), c).tolist() == [0.75, -0.75]


def test_codec_zero_bits_decode_to_lowest_midpoint():
    c = BinaryCodec(3, 0.0, 2.0)
    assert np.allclose(codec_decode(np.zeros(9, dtype=np.int8), c), 0.125)


def test_codec_invalid():
    with pytest.raises(InvalidParams):
        BinaryCodec(0)
    with pytest.raises(InvalidParams):
        BinaryCodec(2, 1.0, 1.0)
    with pytest.raises(InvalidParams):
        BinaryCodec(3).decode(np.zeros(4))


def test_codec_bit_order_lsb_first():
    c = BinaryCodec(3, 0.0, 8.0)
    # level 1 = value in [1, 2)
    assert codec_encode(np.array([1.5]), c).tolist() == [1, 0, 0]


@settings(max_examples=100, deadline=None)
@given(l=st.integers(1, 6), lvls=st.lists(st.integers(0, 63), min_size=1, max_size=8),
       lo=st.floats(-5, 0), width=st.floats(0.1, 10))
def test_codec_midpoint_roundtrip(l, lvls, lo, width):
    c = BinaryCodec(l, lo, lo + width)
    mids = c.midpoint(np.array(lvls) % c.levels)
    assert np.array_equal(codec_decode(codec_encode(mids, c), c), mids)


@settings(max_examples=100, deadline=None)
@given(x=st.lists(st.floats(-3, 3), min_size=1, max_size=10), l=st.integers(1, 6))
def test_codec_idempotent(x, l):
    c = BinaryCodec(l)
    once = codec_decode(codec_encode(np.array(x), c), c)
    assert np.array_equal(codec_decode(codec_encode(once, c), c), once)


def test_categorical_alphabet():
    a = CategoricalAlphabet.onehot(4)
    assert a.k == 4
    assert a.level_of(np.array([0.1, 0.9, 0.0, 0.2])) == 1
    with pytest.raises(InvalidAlphabet):
        CategoricalAlphabet(np.zeros((1, 3)))


# ---------------------------------------------------------------- datapoint level


def test_identity_bit_exact():
    x = RngStream(0).standard_normal((5, 3))
    assert np.array_equal(perturb_datapoint(x, MechanismConfig("identity"), RngStream(1)), x)


def test_grr_onehot_infinite_epsilon_unchanged():
    x = np.eye(6)[:, :3]
    cfg = MechanismConfig("grr", epsilon=math.inf, alphabet="onehot")
    assert np.array_equal(perturb_datapoint(x, cfg, RngStream(2)), x)


def test_grr_onehot_change_fraction():
    cfg = MechanismConfig("grr", epsilon=math.log(3), alphabet="onehot")
    x = np.zeros((4, N))
    x[RngStream(3).integers(0, 4, N), np.arange(N)] = 1.0
    y = perturb_datapoint(x, cfg, RngStream(4))
    changed = np.any(y != x, axis=0).mean()
    assert abs(changed - 0.5) < 0.005
    assert np.all(y.sum(axis=0) == 1)


@pytest.mark.parametrize("cfg", [
    MechanismConfig("identity"),
    MechanismConfig("grr", epsilon=math.inf),
    MechanismConfig("grr", epsilon=math.inf, alphabet="onehot"),
    MechanismConfig("rappor", epsilon=math.inf),
    MechanismConfig("rappor", epsilon=math.inf, alphabet="onehot"),
    MechanismConfig("rappor", epsilon=1.0, rappor_f=0.0, alphabet="onehot"),
    MechanismConfig("dbitflip", epsilon=math.inf),
    MechanismConfig("dbitflip", epsilon=math.inf, alphabet="onehot"),
])
def test_infinite_epsilon_identity_on_alphabet(cfg):
    x = project(RngStream(5).uniform01((6, 4)), cfg)
    for seed in range(20):
        assert np.array_equal(perturb_datapoint(x, cfg, RngStream(seed)), x)


@pytest.mark.parametrize("cfg", [
    MechanismConfig("grr", epsilon=1.0),
    MechanismConfig("grr", epsilon=1.0, alphabet="onehot"),
    MechanismConfig("rappor", epsilon=2.0),
    MechanismConfig("dbitflip", epsilon=2.0, alphabet="onehot"),
    MechanismConfig("bitrand", epsilon=2.0),
    MechanismConfig("ome", epsilon=2.0),
    MechanismConfig("additive", noise_radius=0.3),
])
def test_exchangeable_across_patterns(cfg):
    x = project(RngStream(6).uniform01((5, 4)), cfg)
    s = RngStream(7)
    out = perturb_datapoint(x, cfg, s)
    perm = [2, 0, 3, 1]
    for j in perm:
        assert np.array_equal(perturb_pattern(x[:, j], cfg, s.child(j)), out[:, j])
    # reversed evaluation order gives the same columns
    again = [perturb_pattern(x[:, j], cfg, RngStream(7).child(j)) for j in reversed(range(4))]
    assert np.array_equal(np.column_stack(again[::-1]), out)


def test_additive_noise_norm():
    cfg = MechanismConfig("additive", noise_radius=0.25)
    x = RngStream(8).standard_normal((10, 6))
    y = perturb_datapoint(x, cfg, RngStream(9))
    assert np.allclose(np.linalg.norm(y - x, axis=0), 0.25)


def test_config_validation_and_mapping():
    with pytest.raises(InvalidParams):
        MechanismConfig("laplace")
    with pytest.raises(InvalidParams):
        MechanismConfig("grr", epsilon=-1)
    with pytest.raises(InvalidParams):
        MechanismConfig("rappor", rappor_f=2.0)
    with pytest.raises(InvalidParams):
        MechanismConfig("bitrand", alpha=0.0)
    cfg = MechanismConfig.from_mapping({"mechanism": "dBitFlipPM", "epsilon": "3", "dbit_d": "4",
                                        "bits_per_feature": "3", "clip_min": "-2", "clip_max": "2"})
    assert cfg.kind == "dbitflip" and cfg.dbit_d == 4 and cfg.codec.l == 3
    assert MechanismConfig.from_mapping(cfg.to_mapping()) == cfg
    assert MechanismConfig.from_mapping({"mechanism": "grr", "epsilon": "inf"}).epsilon == math.inf


def test_output_alphabet():
    assert output_alphabet(MechanismConfig("identity"), 4) is None
    a = output_alphabet(MechanismConfig("grr", epsilon=1.0, alphabet="onehot"), 8, 2)
    assert a.cardinality == 64 and a.delta_x == 1.0
    g = output_alphabet(MechanismConfig("grr", epsilon=1.0, bits_per_feature=2), 3)
    assert g.cardinality == 4 ** 3 and g.delta_x == pytest.approx(0.25)
    r = output_alphabet(MechanismConfig("rappor", epsilon=1.0, alphabet="onehot"), 5)
    assert r.cardinality == 32 and r.delta_x == 0.5
