"""Checkpoint container: byte stability, round trips, corruption handling."""

import numpy as np
import pytest

from cocite.checkpoint import (
    MAGIC,
    CheckpointError,
    load,
    load_model,
    save,
    save_model,
)
from cocite.config import ModelConfig, MoEConfig, RoutingStrategy
from cocite.encoder import Model
from cocite.moe import extend_model
from cocite.vocab import build_vocabulary

DOMAINS = ["cvd", "copd"]


def small_model(seed=0):
    vocab = build_vocabulary(
        ["alpha beta gamma delta epsilon zeta"], vocab_size=20, domains=DOMAINS
    )
    cfg = ModelConfig(
        vocab_size=len(vocab.tokens), hidden_dim=8, intermediate_dim=16,
        num_blocks=2, num_heads=2, max_seq_len=10,
    )
    return Model.fresh(cfg, vocab, seed=seed)


def test_save_load_save_byte_identical(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "zeta": rng.normal(size=(3, 4)).astype(np.float32),
        "alpha": rng.normal(size=7),
        "counts": np.arange(5, dtype=np.int64),
        "flags": np.array([1, 0, 1], dtype=np.uint8),
    }
    meta = {"b": 2, "a": [1, 2], "nested": {"y": 1, "x": "s"}}
    p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
    save(p1, tensors, meta)
    loaded, meta2 = load(p1)
    save(p2, loaded, meta2)
    assert p1.read_bytes() == p2.read_bytes()
    assert meta2 == meta
    for k in tensors:
        assert loaded[k].dtype == tensors[k].dtype
        assert np.array_equal(loaded[k], tensors[k])


def test_entry_order_is_name_sorted(tmp_path):
    t1 = {"b": np.zeros(2), "a": np.ones(2)}
    t2 = {"a": np.ones(2), "b": np.zeros(2)}
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save(p1, t1, {})
    save(p2, t2, {})
    assert p1.read_bytes() == p2.read_bytes()


def test_metadata_key_order_canonical(tmp_path):
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save(p1, {}, {"x": 1, "y": 2})
    save(p2, {}, {"y": 2, "x": 1})
    assert p1.read_bytes() == p2.read_bytes()


def test_starts_with_magic(tmp_path):
    p = tmp_path / "m.ckpt"
    save(p, {"t": np.zeros(1)}, {})
    assert p.read_bytes()[:4] == MAGIC


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "bad.ckpt"
    save(p, {"t": np.zeros(1)}, {})
    raw = bytearray(p.read_bytes())
    raw[:4] = b"NOPE"
    p.write_bytes(bytes(raw))
    with pytest.raises(CheckpointError):
        load(p)


def test_truncation_rejected(tmp_path):
    p = tmp_path / "t.ckpt"
    save(p, {"t": np.arange(100.0)}, {"k": 1})
    raw = p.read_bytes()
    p.write_bytes(raw[: len(raw) - 40])
    with pytest.raises(CheckpointError):
        load(p)


def test_trailing_garbage_rejected(tmp_path):
    p = tmp_path / "g.ckpt"
    save(p, {"t": np.zeros(3)}, {})
    p.write_bytes(p.read_bytes() + b"extra")
    with pytest.raises(CheckpointError):
        load(p)


def test_unsupported_dtype_rejected(tmp_path):
    with pytest.raises(CheckpointError):
        save(tmp_path / "c.ckpt", {"t": np.zeros(2, dtype=np.complex128)}, {})


def test_model_round_trip_reproduces_forward(tmp_path):
    model = small_model()
    path = tmp_path / "model.ckpt"
    save_model(path, model, extra={"note": 1})
    loaded, meta = load_model(path)
    assert meta["note"] == 1
    texts = ["alpha beta gamma", "delta epsilon"]
    a = model.embed_texts(texts, ["cvd", "copd"])
    b = loaded.embed_texts(texts, ["cvd", "copd"])
    assert a.tobytes() == b.tobytes()
    assert loaded.cfg == model.cfg
    assert loaded.vocab.tokens == model.vocab.tokens


def test_moe_model_round_trip(tmp_path):
    base = small_model()
    cfg = MoEConfig(num_experts=2, strategy=RoutingStrategy.ENFORCED,
                    extended_layers=(0, 1), domain_to_expert={"cvd": 0, "copd": 1})
    moe = extend_model(base, cfg, seed=3)
    path = tmp_path / "moe.ckpt"
    save_model(path, moe)
    loaded, _ = load_model(path)
    assert loaded.moe_cfg == cfg
    texts = ["alpha beta", "gamma delta"]
    doms = ["cvd", "copd"]
    ids, mask = moe.tokenize_batch(texts, doms)
    a = moe.forward(ids, mask, domains=doms).pooled
    b = loaded.forward(ids, mask, domains=doms).pooled
    assert a.tobytes() == b.tobytes()


def test_model_save_is_deterministic(tmp_path):
    model = small_model(seed=4)
    p1, p2 = tmp_path / "1.ckpt", tmp_path / "2.ckpt"
    save_model(p1, model)
    save_model(p2, model)
    assert p1.read_bytes() == p2.read_bytes()


def test_load_model_ignores_optimizer_tensors(tmp_path):
    from cocite.checkpoint import model_metadata

    model = small_model()
    tensors = dict(model.params)
    tensors["adam.m.pooler.weight"] = np.zeros_like(model.params["pooler.weight"])
    tensors["adam.v.pooler.weight"] = np.zeros_like(model.params["pooler.weight"])
    tensors["temperature.log"] = np.array([0.5])
    path = tmp_path / "full.ckpt"
    save(path, tensors, model_metadata(model))
    loaded, meta = load_model(path)
    assert set(loaded.params) == set(model.params)


def test_scalar_and_empty_shapes(tmp_path):
    p = tmp_path / "s.ckpt"
    tensors = {"scalar": np.array(3.5), "empty": np.zeros((0, 4))}
    save(p, tensors, {})
    loaded, _ = load(p)
    assert loaded["scalar"].shape == ()
    assert float(loaded["scalar"]) == 3.5
    assert loaded["empty"].shape == (0, 4)


def test_non_contiguous_input_saved_correctly(tmp_path):
    base = np.arange(24.0).reshape(4, 6)
    view = base[:, ::2]
    p = tmp_path / "v.ckpt"
    save(p, {"v": view}, {})
    loaded, _ = load(p)
    assert np.array_equal(loaded["v"], view)
