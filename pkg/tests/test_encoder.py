"""Encoder forward contract, checked against a straight-line oracle.

The oracle re-implements the whole forward pass as unrolled matrix
arithmetic with scipy primitives, sharing no code with the library path.
"""

import numpy as np
import pytest
from scipy.special import erf

from cocite.config import ModelConfig
from cocite.encoder import Model, ShapeError, expected_shapes, init_params
from cocite.vocab import build_vocabulary, tokenize

DOMAINS = ["cvd", "copd"]


def small_model(num_blocks=2, hidden=8, heads=2, seed=0, dtype=np.float64):
    vocab = build_vocabulary(
        ["alpha beta gamma delta epsilon zeta eta theta"], vocab_size=24, domains=DOMAINS
    )
    cfg = ModelConfig(
        vocab_size=len(vocab.tokens), hidden_dim=hidden, intermediate_dim=2 * hidden,
        num_blocks=num_blocks, num_heads=heads, max_seq_len=10,
    )
    return Model.fresh(cfg, vocab, seed=seed).astype(dtype)


# ------------------------------------------------------------------- oracle

def oracle_layer_norm(x, scale, offset, eps=1e-5):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * scale + offset


def oracle_gelu(x):
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def oracle_forward(model, ids, mask):
    """Unrolled single-sequence forward pass: embeddings, each block's
    attention and MLP with residuals and norms, then the pooler."""
    p = model.params
    cfg = model.cfg
    L = ids.shape[0]
    x = p["embedding.word"][ids] + p["embedding.position"][:L]
    x = oracle_layer_norm(x, p["embedding.norm.scale"], p["embedding.norm.offset"])
    dh = cfg.hidden_dim // cfg.num_heads
    for i in range(cfg.num_blocks):
        q = x @ p[f"block.{i}.attention.query.weight"] + p[f"block.{i}.attention.query.bias"]
        k = x @ p[f"block.{i}.attention.key.weight"] + p[f"block.{i}.attention.key.bias"]
        v = x @ p[f"block.{i}.attention.value.weight"] + p[f"block.{i}.attention.value.bias"]
        heads_out = []
        for h in range(cfg.num_heads):
            sl = slice(h * dh, (h + 1) * dh)
            scores = q[:, sl] @ k[:, sl].T / np.sqrt(dh)
            scores = scores + (1.0 - mask[None, :]) * -1e9
            e = np.exp(scores - scores.max(-1, keepdims=True))
            probs = e / e.sum(-1, keepdims=True)
            heads_out.append(probs @ v[:, sl])
        att = np.concatenate(heads_out, axis=-1)
        att = att @ p[f"block.{i}.attention.output.weight"] + p[f"block.{i}.attention.output.bias"]
        a = oracle_layer_norm(
            x + att, p[f"block.{i}.norm1.scale"], p[f"block.{i}.norm1.offset"]
        )
        m = oracle_gelu(a @ p[f"block.{i}.mlp.w1"] + p[f"block.{i}.mlp.b1"])
        m = m @ p[f"block.{i}.mlp.w2"] + p[f"block.{i}.mlp.b2"]
        x = oracle_layer_norm(
            a + m, p[f"block.{i}.norm2.scale"], p[f"block.{i}.norm2.offset"]
        )
    pooled = np.tanh(p["pooler.weight"].T @ x[0] + p["pooler.bias"])
    return x, pooled


def seq_for(model, text, domain=None, max_len=None):
    L = max_len if max_len is not None else model.cfg.max_seq_len
    return tokenize(text, model.vocab, L, domain=domain)


# -------------------------------------------------------------------- tests

def test_forward_matches_straight_line_oracle():
    model = small_model()
    for text, dom in [("alpha beta gamma", "cvd"), ("delta epsilon", None),
                      ("zeta eta theta alpha beta", "copd")]:
        seq = seq_for(model, text, dom, max_len=6)
        ids = seq.ids[None, :]
        mask = seq.mask[None, :]
        fr = model.forward(ids, mask)
        last_oracle, pooled_oracle = oracle_forward(
            model, seq.ids, seq.mask.astype(np.float64)
        )
        rel = np.abs(fr.hidden[-1][0] - last_oracle).max() / np.abs(last_oracle).max()
        assert rel < 1e-5
        assert np.abs(fr.pooled[0] - pooled_oracle).max() < 1e-6


def test_zero_blocks_is_normed_embedding_sum():
    model = small_model(num_blocks=0)
    seq = seq_for(model, "alpha beta", max_len=4)
    fr = model.forward(seq.ids[None, :], seq.mask[None, :])
    p = model.params
    expect = p["embedding.word"][seq.ids] + p["embedding.position"][:4]
    expect = oracle_layer_norm(expect, p["embedding.norm.scale"], p["embedding.norm.offset"])
    assert np.allclose(fr.hidden[-1][0], expect, atol=1e-12)
    assert len(fr.hidden) == 1


def test_forward_deterministic():
    model = small_model(dtype=np.float32)
    seq = seq_for(model, "alpha beta gamma")
    a = model.forward(seq.ids[None, :], seq.mask[None, :]).pooled
    b = model.forward(seq.ids[None, :], seq.mask[None, :]).pooled
    assert a.tobytes() == b.tobytes()


def test_padding_invariance():
    model = small_model()
    short = seq_for(model, "alpha beta gamma", "cvd", max_len=4)
    padded = seq_for(model, "alpha beta gamma", "cvd", max_len=10)
    a = model.forward(short.ids[None, :], short.mask[None, :]).pooled
    b = model.forward(padded.ids[None, :], padded.mask[None, :]).pooled
    assert np.abs(a - b).max() < 1e-5


def test_hidden_states_shapes_preserved():
    model = small_model(num_blocks=3)
    seq = seq_for(model, "alpha beta gamma delta", max_len=6)
    fr = model.forward(seq.ids[None, :], seq.mask[None, :])
    assert len(fr.hidden) == 4
    for h in fr.hidden:
        assert h.shape == (1, 6, 8)


def test_pooled_in_tanh_range():
    model = small_model()
    rng = np.random.default_rng(0)
    for k in model.params:
        model.params[k][...] = rng.normal(0, 0.5, model.params[k].shape)
    seq = seq_for(model, "alpha beta gamma")
    pooled = model.forward(seq.ids[None, :], seq.mask[None, :]).pooled
    assert np.all(pooled > -1.0) and np.all(pooled < 1.0)


def test_pooler_zero_weights_give_zero_vector():
    model = small_model()
    model.params["pooler.weight"][...] = 0.0
    model.params["pooler.bias"][...] = 0.0
    seq = seq_for(model, "alpha beta")
    pooled = model.forward(seq.ids[None, :], seq.mask[None, :]).pooled
    assert np.all(pooled == 0.0)


def test_missing_tensor_rejected():
    model = small_model()
    params = dict(model.params)
    del params["pooler.bias"]
    with pytest.raises(ShapeError):
        Model(model.cfg, model.vocab, params)


def test_wrong_shape_rejected():
    model = small_model()
    params = {k: v.copy() for k, v in model.params.items()}
    params["pooler.weight"] = params["pooler.weight"][:, :-1]
    with pytest.raises(ShapeError):
        Model(model.cfg, model.vocab, params)


def test_extra_tensor_rejected():
    model = small_model()
    params = dict(model.params)
    params["mystery"] = np.zeros(3)
    with pytest.raises(ShapeError):
        Model(model.cfg, model.vocab, params)


def test_nonfinite_weight_rejected():
    model = small_model()
    params = {k: v.copy() for k, v in model.params.items()}
    params["pooler.bias"][0] = np.nan
    with pytest.raises(ShapeError):
        Model(model.cfg, model.vocab, params)


def test_init_params_conventions():
    model = small_model(seed=5)
    shapes = expected_shapes(model.cfg)
    params = init_params(model.cfg, seed=5)
    assert set(params) == set(shapes)
    assert np.all(params["embedding.norm.scale"] == 1.0)
    assert np.all(params["pooler.bias"] == 0.0)
    w = params["embedding.word"]
    assert 0.01 < w.std() < 0.03


def test_embed_texts_matches_forward():
    model = small_model()
    texts = ["alpha beta", "gamma delta epsilon", "zeta"]
    out = model.embed_texts(texts, ["cvd", "copd", "cvd"], batch_size=2)
    assert out.shape == (3, model.cfg.hidden_dim)
    seq = seq_for(model, "gamma delta epsilon", "copd")
    single = model.forward(seq.ids[None, :], seq.mask[None, :]).pooled[0]
    assert np.abs(out[1] - single).max() < 1e-5
