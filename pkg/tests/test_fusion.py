import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdvg.errors import ContractViolation
from cdvg.fusion import (
    FusionConfig,
    TextGuidedFusion,
    calibrate,
    channel_shuffle,
    channel_unshuffle,
    dual_gate_fuse,
    shuffle_permutation,
    similarity_map,
)
from cdvg.numerics import Tensor
from cdvg.numerics.gradcheck import grad_check_params

from oracles import brute_similarity


def make_fusion(C=8, D=6, heads=2, e=4, groups=2, seed=0):
    return TextGuidedFusion(C, D, FusionConfig(heads, e, groups), np.random.default_rng(seed))


def test_shuffle_identity_and_inverse():
    v = np.random.default_rng(0).normal(size=(2, 12, 3, 3))
    np.testing.assert_array_equal(channel_shuffle(v, 1), v)
    for g in (2, 3, 4, 6):
        s = channel_shuffle(v, g)
        assert sorted(map(bytes, s[0].reshape(12, -1))) == sorted(map(bytes, v[0].reshape(12, -1)))
        assert channel_unshuffle(s, g).tobytes() == v.tobytes()
        np.testing.assert_array_equal(s, v[:, shuffle_permutation(12, g)])


def test_shuffle_rejects_non_divisor():
    with pytest.raises(ContractViolation):
        channel_shuffle(np.zeros((1, 10, 2, 2)), 4)


def test_similarity_matches_brute_force():
    fu = make_fusion()
    rng = np.random.default_rng(1)
    v = rng.normal(size=(1, 8, 2, 2))
    texts = rng.normal(size=(2, 6))
    got = similarity_map(v, texts, fu).data
    np.testing.assert_allclose(got, brute_similarity(v, texts, fu), atol=1e-12)


def test_similarity_singleton_and_duplicates():
    fu = make_fusion(seed=3)
    rng = np.random.default_rng(2)
    v = rng.normal(size=(2, 8, 3, 3))
    texts = rng.normal(size=(3, 6))
    base = similarity_map(v, texts, fu).data
    dup = similarity_map(v, np.concatenate([texts, texts[1:2]]), fu).data
    np.testing.assert_array_equal(base, dup)
    single = similarity_map(v, texts[:1], fu).data
    np.testing.assert_allclose(single, brute_similarity(v, texts[:1], fu), atol=1e-12)


def test_per_image_texts():
    fu = make_fusion(seed=4)
    rng = np.random.default_rng(3)
    v = rng.normal(size=(2, 8, 2, 2))
    texts = rng.normal(size=(2, 3, 6))
    got = similarity_map(v, texts, fu).data
    for b in range(2):
        np.testing.assert_allclose(got[b:b + 1], brute_similarity(v[b:b + 1], texts[b], fu), atol=1e-12)


def test_calibration_closed_forms():
    fu = make_fusion()
    a = np.zeros((1, 2, 2, 2))
    np.testing.assert_allclose(calibrate(a, fu).data, 0.5)
    fu.log_tau.data = np.array(np.log(1e6))
    fu.head_bias.data = np.array([0.3, -1.0])
    a = np.random.default_rng(0).normal(size=(1, 2, 2, 2))
    expected = 1 / (1 + np.exp(-np.array([0.3, -1.0])))
    np.testing.assert_allclose(calibrate(a, fu).data, np.broadcast_to(expected[None, :, None, None], a.shape), atol=1e-6)


@given(st.floats(-5, 5), st.floats(0.01, 3))
@settings(max_examples=50, deadline=None)
def test_calibration_monotone(a, d):
    fu = make_fusion()
    lo = calibrate(np.full((1, 2, 1, 1), a), fu).data
    hi = calibrate(np.full((1, 2, 1, 1), a + d), fu).data
    assert (hi >= lo).all()
    assert (hi[lo < 0.999] > lo[lo < 0.999]).all()


def test_fuse_identities_and_arithmetic():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(1, 8, 3, 3))
    g = rng.random(size=(1, 2, 3, 3))
    assert dual_gate_fuse(v, np.ones((1, 2, 3, 3)), 1.0, 0.5, 2).data.tobytes() == v.tobytes()
    assert dual_gate_fuse(v, g, 1.0, 0.0, 2).data.tobytes() == v.tobytes()
    assert dual_gate_fuse(v, g, 0.0, 0.5, 2).data.tobytes() == v.tobytes()
    out = dual_gate_fuse(np.full((1, 1, 1, 1), 2.0), np.full((1, 1, 1, 1), 0.5), 1.0, 1.0)
    assert float(out.data.reshape(())) == 1.0


def test_head_gates_reach_their_own_channels():
    v = np.ones((1, 8, 1, 1))
    gates = np.array([0.0, 1.0]).reshape(1, 2, 1, 1)  # head 0 closes, head 1 stays open
    out = dual_gate_fuse(v, gates, 1.0, 1.0, 2).data.reshape(8)
    # head 0 was built from shuffled channels 0..3, i.e. original channels perm[0..3]
    perm = shuffle_permutation(8, 2)
    closed = set(perm[:4].tolist())
    assert all(out[c] == 0.0 for c in closed)
    assert all(out[c] == 1.0 for c in set(range(8)) - closed)


def test_fusion_gradients():
    fu = make_fusion(seed=5)
    rng = np.random.default_rng(6)
    v = Tensor(rng.normal(size=(1, 8, 2, 2)), requires_grad=True)
    texts = rng.normal(size=(3, 6))
    probe = rng.normal(size=(1, 8, 2, 2))
    params = [v, fu.phi_w, fu.psi_w, fu.log_tau, fu.head_bias, fu.log_scale, fu.alpha_gate, fu.beta_gate]
    assert grad_check_params(lambda: (fu(v, texts) * probe).sum(), params) < 1e-4
