"""Attention stack: positional encoding, attention semantics, decoder queries."""

import numpy as np
import pytest

from multihar import tensor as T
from multihar.tensor import ShapeError, Tensor
from multihar.transformer import (
    Decoder,
    Encoder,
    MultiHeadAttention,
    positional_encoding,
)


def test_positional_encoding_row_zero():
    pe = positional_encoding(10, 8)
    # t=0: sin(0)=0 on even columns, cos(0)=1 on odd
    assert np.array_equal(pe[0, 0::2], np.zeros(4))
    assert np.array_equal(pe[0, 1::2], np.ones(4))


def test_positional_encoding_values_and_range():
    pe = positional_encoding(50, 16)
    assert np.abs(pe).max() <= 1.0
    # spot-check the defining formula at an arbitrary (t, j)
    t, j = 7, 3
    angle = t / 10000 ** (2 * j / 16)
    assert abs(pe[t, 2 * j] - np.sin(angle)) < 1e-15
    assert abs(pe[t, 2 * j + 1] - np.cos(angle)) < 1e-15


def test_positional_encoding_requires_even_width():
    with pytest.raises(ShapeError):
        positional_encoding(4, 7)


def test_attention_single_key_copies_value():
    """With one key position, softmax weights are 1 and the output is the
    value row pushed through W^V and W^O."""
    rng = np.random.default_rng(0)
    mha = MultiHeadAttention(8, 2, rng)
    xq = Tensor(rng.normal(size=(1, 3, 8)))
    xkv = Tensor(rng.normal(size=(1, 1, 8)))
    out = mha(xq, xkv, xkv).data
    expect = (xkv.data @ mha.wv.data) @ mha.wo.data
    assert np.abs(out - np.repeat(expect, 3, axis=1)).max() < 1e-12


def test_attention_matches_naive_single_head():
    """Against an independent loop-based softmax attention."""
    rng = np.random.default_rng(1)
    d = 6
    mha = MultiHeadAttention(d, 1, rng)
    x = rng.normal(size=(1, 5, d))
    q = x[0] @ mha.wq.data
    k = x[0] @ mha.wk.data
    v = x[0] @ mha.wv.data
    naive = np.zeros((5, d))
    for i in range(5):
        scores = np.array([q[i] @ k[j] / np.sqrt(d) for j in range(5)])
        w = np.exp(scores - scores.max())
        w /= w.sum()
        naive[i] = sum(w[j] * v[j] for j in range(5))
    naive = naive @ mha.wo.data
    out = mha(Tensor(x), Tensor(x), Tensor(x)).data[0]
    assert np.abs(out - naive).max() < 1e-10


def test_multi_head_splits_width():
    rng = np.random.default_rng(2)
    with pytest.raises(ShapeError):
        MultiHeadAttention(10, 4, rng)
    mha = MultiHeadAttention(8, 4, rng)
    out = mha(Tensor(rng.normal(size=(2, 5, 8))),
              Tensor(rng.normal(size=(2, 7, 8))),
              Tensor(rng.normal(size=(2, 7, 8))))
    assert out.shape == (2, 5, 8)


def test_encoder_readds_positions_at_exit():
    rng = np.random.default_rng(3)
    enc = Encoder(8, 2, 1, rng)
    x = rng.normal(size=(1, 6, 8))
    pe = positional_encoding(6, 8)
    out = enc(Tensor(x)).data
    # recompute the body without the exit re-add
    h = Tensor(x) + pe
    for layer in enc.layers:
        h = layer(h)
    assert np.array_equal(out, h.data + pe)


def test_decoder_emits_per_layer_probability_rows():
    rng = np.random.default_rng(4)
    dec = Decoder(8, 2, 3, n_queries=4, n_classes=5, rng=rng)
    enc_out = Tensor(rng.normal(size=(2, 6, 8)))
    logits = dec(enc_out)
    assert len(logits) == 3
    for lg in logits:
        assert lg.shape == (2, 4, 5)
        p = T.softmax(lg).data
        assert np.abs(p.sum(axis=-1) - 1.0).max() < 1e-12


def test_decoder_head_is_shared_across_layers():
    rng = np.random.default_rng(5)
    dec = Decoder(8, 2, 4, n_queries=3, n_classes=5, rng=rng)
    names = dec.parameters()
    head_params = [n for n in names if ".head." in n]
    assert len(head_params) == 2  # one weight, one bias, no per-layer copies


def test_query_permutation_equivariance():
    """Permuting the learned query rows permutes the output rows: queries
    interact only through content, not through their index."""
    rng = np.random.default_rng(6)
    dec = Decoder(8, 2, 2, n_queries=4, n_classes=5, rng=rng)
    enc_out = Tensor(rng.normal(size=(1, 6, 8)))
    base = dec(enc_out)[-1].data[0]
    perm = np.array([2, 0, 3, 1])
    dec.queries.data = dec.queries.data[perm]
    permuted = dec(enc_out)[-1].data[0]
    assert np.abs(permuted - base[perm]).max() < 1e-10


def test_gradient_reaches_queries_and_head():
    rng = np.random.default_rng(7)
    dec = Decoder(8, 2, 2, n_queries=3, n_classes=4, rng=rng)
    enc_out = Tensor(rng.normal(size=(1, 5, 8)))
    logits = dec(enc_out)
    loss = T.tsum(logits[-1] * rng.normal(size=logits[-1].shape))
    for lg in logits[:-1]:
        loss = loss + T.tsum(lg * rng.normal(size=lg.shape))
    loss.backward()
    for name, p in dec.parameters().items():
        assert p.grad is not None and np.abs(p.grad).max() > 0, f"dead {name}"
