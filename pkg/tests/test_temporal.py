import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tokenadapt import temporal as tf
from tokenadapt.errors import DegenerateWeightsError, ShapeError
from tokenadapt.model import LayerWeights, ArchSpec


def frames(rng, n=2, T=6, d=4):
    return tf.FrameFeatures(rng.normal(size=(n + 1, T, d)), ((0, 0, T // 2), (1, T // 2, T)))


def test_frame_features_spans():
    with pytest.raises(ValueError):
        tf.FrameFeatures(np.zeros((1, 4, 2)), ((0, 0, 2), (1, 3, 4)))
    with pytest.raises(ShapeError):
        tf.FrameFeatures(np.zeros((4, 2)))
    f = tf.FrameFeatures(np.zeros((3, 4, 2)))
    assert f.history == 2 and f.view_spans == ((0, 0, 4),)


def test_time_embedding_examples(rng):
    f = frames(rng)
    out = tf.add_time_embedding(f, np.zeros((3, 4)))
    np.testing.assert_array_equal(out.frames, f.frames)

    single = tf.FrameFeatures(np.array([[[1.0, 1.0]]]))
    out = tf.add_time_embedding(single, [[0.5, -0.5]])
    np.testing.assert_array_equal(out.frames, [[[1.5, 0.5]]])

    e = rng.normal(size=(3, 4))
    out = tf.add_time_embedding(f, e)
    for t in range(3):
        for i in range(6):
            for j in range(4):
                assert out.frames[t, i, j] == f.frames[t, i, j] + e[t, j]

    with pytest.raises(ShapeError):
        tf.add_time_embedding(f, np.zeros((2, 4)))


def oracle_column(x, w, heads):
    # generic bidirectional pre-norm block on one token's (t, d) history
    def norm(v, g):
        return v / np.sqrt(np.mean(v ** 2, axis=1, keepdims=True) + 1e-6) * g

    t, d = x.shape
    hd = d // heads
    n = norm(x, w.attn_norm)
    q, k, v = n @ w.wq, n @ w.wk, n @ w.wv
    outs = []
    for h in range(heads):
        s = slice(h * hd, (h + 1) * hd)
        logits = q[:, s] @ k[:, s].T / math.sqrt(hd)
        p = np.exp(logits - logits.max(axis=1, keepdims=True))
        outs.append((p / p.sum(axis=1, keepdims=True)) @ v[:, s])
    h1 = x + np.concatenate(outs, axis=1) @ w.wo
    n2 = norm(h1, w.ffn_norm)
    g = n2 @ w.w_gate
    return h1 + (g / (1 + np.exp(-g)) * (n2 @ w.w_up)) @ w.w_down


def test_temporal_encode_matches_column_oracle(backend, rng):
    f = frames(rng, n=3, T=5, d=8)
    w = tf.init_tfm_weights(3, 8, seed=3, num_heads=2, std=0.4)
    out = tf.temporal_encode(f, w)
    for i in range(5):
        np.testing.assert_allclose(out.frames[:, i], oracle_column(f.frames[:, i], w.encoder[0], 2), atol=1e-10)


def test_temporal_encode_single_frame(backend, rng):
    f = frames(rng, n=0)
    spec = ArchSpec(num_layers=1, d_model=4, num_heads=2, ffn_dim=8, sparse_layers=())
    w = tf.TfmWeights(np.zeros((1, 4)), [LayerWeights.zeros(spec)], np.ones(1), num_heads=2)
    np.testing.assert_array_equal(tf.temporal_encode(f, w).frames, f.frames)

    # one history element: attention is just the value path of that element
    w = tf.init_tfm_weights(0, 4, seed=1, std=0.5)
    enc = w.encoder[0]
    out = tf.temporal_encode(f, w).frames
    for i in range(f.num_tokens):
        np.testing.assert_allclose(out[:, i], oracle_column(f.frames[:, i], enc, 2), atol=1e-12)


def test_temporal_encode_token_permutation(backend, rng):
    f = frames(rng, T=8)
    w = tf.init_tfm_weights(2, 4, seed=4, std=0.3)
    perm = rng.permutation(8)
    base = tf.temporal_encode(f, w).frames
    permuted = tf.temporal_encode(tf.FrameFeatures(f.frames[:, perm]), w).frames
    np.testing.assert_array_equal(permuted, base[:, perm])


def test_aggregate_examples(rng):
    f = frames(rng)
    np.testing.assert_allclose(tf.time_weighted_aggregate(f, np.ones(3) / 3), f.frames.mean(axis=0), atol=1e-12)
    np.testing.assert_array_equal(tf.time_weighted_aggregate(f, [1.0, 0.0, 0.0]), f.frames[0])

    w = rng.normal(size=3) + 1.0
    out = tf.time_weighted_aggregate(f, w)
    for i in range(6):
        for j in range(4):
            num = sum(w[t] * f.frames[t, i, j] for t in range(3))
            assert abs(out[i, j] - num / sum(w)) <= 1e-12


def test_aggregate_degenerate_weights(rng):
    with pytest.raises(DegenerateWeightsError):
        tf.time_weighted_aggregate(frames(rng), [1.0, -1.0, 0.0])
    with pytest.raises(DegenerateWeightsError):
        tf.time_weighted_aggregate(frames(rng), [1e-9, 0.0, 0.0])
    # signed weights are admissible as long as the sum stays away from zero
    tf.time_weighted_aggregate(frames(rng), [2.0, -0.5, 0.1])


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_aggregate_positive_scale_invariance(seed, c):
    g = np.random.default_rng(seed)
    f = frames(g)
    w = g.uniform(0.05, 1.0, 3)
    np.testing.assert_allclose(tf.time_weighted_aggregate(f, c * w), tf.time_weighted_aggregate(f, w),
                               rtol=0, atol=1e-12)


def test_identical_frames_are_a_fixed_point(rng):
    one = rng.normal(size=(1, 6, 4))
    f = tf.FrameFeatures(np.repeat(one, 3, axis=0))
    for w in ([1, 1, 1], [0.2, 3.0, -1.0], [5, 0, 0]):
        np.testing.assert_allclose(tf.time_weighted_aggregate(f, np.array(w, float)), one[0], atol=1e-12)


@pytest.mark.parametrize("n", [0, 2, 5])
def test_tfm_output_shape(backend, rng, n):
    f = frames(rng, n=n, T=10, d=8)
    out = tf.tfm_forward(f, tf.init_tfm_weights(n, 8, seed=n))
    assert out.shape == (10, 8)


def test_tfm_default_history():
    assert tf.DEFAULT_HISTORY == 2
    assert tf.init_tfm_weights(tf.DEFAULT_HISTORY, 4, 0).time_weights.tolist() == [1 / 3] * 3


def test_tfm_composition(backend, rng):
    f = frames(rng, n=2, T=4, d=8)
    w = tf.init_tfm_weights(2, 8, seed=7, std=0.3)
    w.time_weights = np.array([0.5, 0.2, 1.3])
    x = f.frames + w.time_embedding[:, None, :]
    encoded = np.stack([oracle_column(x[:, i], w.encoder[0], 2) for i in range(4)], axis=1)
    expect = np.tensordot(w.time_weights, encoded, axes=1) / w.time_weights.sum()
    np.testing.assert_allclose(tf.tfm_forward(f, w), expect, atol=1e-10)


def test_adapter(rng):
    x = rng.normal(size=(5, 4))
    np.testing.assert_array_equal(tf.init_adapter(4, 4, 0, identity=True)(x), x)
    a = tf.init_adapter(4, 6, 0)
    np.testing.assert_allclose(a(x), x @ a.weight + a.bias)
    with pytest.raises(ShapeError):
        tf.init_adapter(4, 6, 0, identity=True)
