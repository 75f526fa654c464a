"""Compact bidirectional transformer encoder with a tanh pooler head.

Layout is the standard post-norm arrangement: learned absolute position
embeddings plus an embedding layer norm, then per block multi-head
self-attention and an MLP, each sub-layer wrapped in residual + layer norm.
The pooler reads the position-0 token (the [CLS]/domain token) of the last
hidden state through a single dense layer and tanh.

Weights live in a flat name -> array dict so checkpointing, optimization and
gradient bookkeeping all share one namespace. Blocks listed in an attached
MoEConfig carry expert MLPs and a router instead of a single MLP; their
forward/backward is delegated to the moe module.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import moe, nn
from .config import ConfigError, ModelConfig, MoEConfig
from .vocab import Vocabulary, tokenize

INIT_STD = 0.02


class ShapeError(ValueError):
    """Weight shapes inconsistent with the model configuration."""


def attention_param_names(i: int) -> dict[str, str]:
    base = f"block.{i}.attention"
    return {
        "wq": f"{base}.query.weight", "bq": f"{base}.query.bias",
        "wk": f"{base}.key.weight", "bk": f"{base}.key.bias",
        "wv": f"{base}.value.weight", "bv": f"{base}.value.bias",
        "wo": f"{base}.output.weight", "bo": f"{base}.output.bias",
    }


def expected_shapes(cfg: ModelConfig, moe_cfg: MoEConfig | None = None) -> dict[str, tuple]:
    """Every weight tensor the model must carry, keyed by canonical name."""
    d, I = cfg.hidden_dim, cfg.intermediate_dim
    shapes: dict[str, tuple] = {
        "embedding.word": (cfg.vocab_size, d),
        "embedding.position": (cfg.max_seq_len, d),
        "embedding.norm.scale": (d,),
        "embedding.norm.offset": (d,),
    }
    extended = set(moe_cfg.extended_layers) if moe_cfg else set()
    for i in range(cfg.num_blocks):
        for name in attention_param_names(i).values():
            shapes[name] = (d, d) if name.endswith("weight") else (d,)
        shapes[f"block.{i}.norm1.scale"] = (d,)
        shapes[f"block.{i}.norm1.offset"] = (d,)
        if i in extended:
            for e in range(moe_cfg.num_experts):
                prefix = f"block.{i}.expert.{e}"
                shapes[f"{prefix}.w1"] = (d, I)
                shapes[f"{prefix}.b1"] = (I,)
                shapes[f"{prefix}.w2"] = (I, d)
                shapes[f"{prefix}.b2"] = (d,)
                shapes[f"{prefix}.w3"] = (d, I)
                shapes[f"{prefix}.b3"] = (I,)
            shapes[f"block.{i}.router.weight"] = (d, moe_cfg.num_experts)
            shapes[f"block.{i}.router.bias"] = (moe_cfg.num_experts,)
        else:
            shapes[f"block.{i}.mlp.w1"] = (d, I)
            shapes[f"block.{i}.mlp.b1"] = (I,)
            shapes[f"block.{i}.mlp.w2"] = (I, d)
            shapes[f"block.{i}.mlp.b2"] = (d,)
        shapes[f"block.{i}.norm2.scale"] = (d,)
        shapes[f"block.{i}.norm2.offset"] = (d,)
    shapes["pooler.weight"] = (d, d)
    shapes["pooler.bias"] = (d,)
    return shapes


def init_params(
    cfg: ModelConfig, seed: int = 0, dtype=np.float32
) -> dict[str, np.ndarray]:
    """normal(0, 0.02) matrices, zero biases/offsets, unit norm scales."""
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    for name, shape in expected_shapes(cfg).items():
        if name.endswith(".scale"):
            params[name] = np.ones(shape, dtype=dtype)
        elif len(shape) >= 2:
            params[name] = rng.normal(0.0, INIT_STD, size=shape).astype(dtype)
        else:
            params[name] = np.zeros(shape, dtype=dtype)
    return params


@dataclass
class ForwardResult:
    """All hidden states X^(0..T), the pooled embedding, and backward state."""

    hidden: list[np.ndarray]
    pooled: np.ndarray
    routing: dict[int, moe.RoutingRecord] = field(default_factory=dict)
    cache: dict | None = None


class Model:
    """An encoder (optionally MoE-extended) over a fixed vocabulary."""

    def __init__(
        self,
        cfg: ModelConfig,
        vocab: Vocabulary,
        params: dict[str, np.ndarray],
        moe_cfg: MoEConfig | None = None,
    ):
        if len(vocab) != cfg.vocab_size:
            raise ShapeError(
                f"vocabulary has {len(vocab)} tokens but config says {cfg.vocab_size}"
            )
        if moe_cfg is not None:
            moe_cfg.validate_for(cfg)
        self.cfg = cfg
        self.vocab = vocab
        self.params = params
        self.moe_cfg = moe_cfg
        self.validate()

    @classmethod
    def fresh(
        cls, cfg: ModelConfig, vocab: Vocabulary, seed: int = 0, dtype=np.float32
    ) -> "Model":
        return cls(cfg, vocab, init_params(cfg, seed=seed, dtype=dtype))

    @property
    def dtype(self):
        return self.params["embedding.word"].dtype

    def validate(self) -> None:
        shapes = expected_shapes(self.cfg, self.moe_cfg)
        for name, shape in shapes.items():
            arr = self.params.get(name)
            if arr is None:
                raise ShapeError(f"missing weight tensor {name}")
            if arr.shape != shape:
                raise ShapeError(f"{name}: shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ShapeError(f"{name} contains non-finite values")
        extras = set(self.params) - set(shapes)
        if extras:
            raise ShapeError(f"unexpected weight tensors: {sorted(extras)}")

    def astype(self, dtype) -> "Model":
        params = {k: v.astype(dtype) for k, v in self.params.items()}
        return Model(self.cfg, self.vocab, params, self.moe_cfg)

    def copy(self) -> "Model":
        return Model(
            self.cfg, self.vocab, {k: v.copy() for k, v in self.params.items()}, self.moe_cfg
        )

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.params.items()}

    # ----------------------------------------------------------------- forward

    def forward(
        self,
        ids: np.ndarray,
        mask: np.ndarray,
        domains: list[str] | None = None,
        want_cache: bool = False,
    ) -> ForwardResult:
        """Run a (B, L) id batch through the stack.

        ``domains`` is required when an extended block routes by enforcement.
        With ``want_cache`` the result carries everything backward() needs.
        """
        ids = np.atleast_2d(np.asarray(ids))
        mask = np.atleast_2d(np.asarray(mask))
        if ids.shape != mask.shape:
            raise ShapeError(f"ids {ids.shape} and mask {mask.shape} differ")
        if ids.shape[1] > self.cfg.max_seq_len:
            raise ShapeError(
                f"sequence length {ids.shape[1]} exceeds max {self.cfg.max_seq_len}"
            )
        if ids.max(initial=0) >= self.cfg.vocab_size:
            raise ShapeError("token id outside vocabulary")
        p = self.params
        L = ids.shape[1]
        maskf = mask.astype(self.dtype)
        act = self.cfg.activation.value

        raw = p["embedding.word"][ids] + p["embedding.position"][:L]
        x, emb_ln = nn.layer_norm_fwd(raw, p["embedding.norm.scale"], p["embedding.norm.offset"])

        hidden = [x]
        routing: dict[int, moe.RoutingRecord] = {}
        block_caches = []
        extended = set(self.moe_cfg.extended_layers) if self.moe_cfg else set()
        for i in range(self.cfg.num_blocks):
            attn_params = {k: p[v] for k, v in attention_param_names(i).items()}
            attn_out, attn_cache = nn.attention_fwd(x, maskf, attn_params, self.cfg.num_heads)
            a, ln1 = nn.layer_norm_fwd(
                x + attn_out, p[f"block.{i}.norm1.scale"], p[f"block.{i}.norm1.offset"]
            )
            if i in extended:
                m, record, sub_cache = moe.moe_sublayer_fwd(
                    p, i, a, maskf, self.moe_cfg, domains, act
                )
                routing[i] = record
            else:
                m, sub_cache = nn.mlp_fwd(
                    a,
                    p[f"block.{i}.mlp.w1"], p[f"block.{i}.mlp.b1"],
                    p[f"block.{i}.mlp.w2"], p[f"block.{i}.mlp.b2"],
                    act,
                )
            y, ln2 = nn.layer_norm_fwd(
                a + m, p[f"block.{i}.norm2.scale"], p[f"block.{i}.norm2.offset"]
            )
            hidden.append(y)
            if want_cache:
                block_caches.append({"attn": attn_cache, "ln1": ln1, "sub": sub_cache, "ln2": ln2})
            x = y

        x0 = x[:, 0, :]
        pre = x0 @ p["pooler.weight"] + p["pooler.bias"]
        pooled = np.tanh(pre)

        cache = None
        if want_cache:
            cache = {
                "ids": ids, "maskf": maskf, "emb_ln": emb_ln,
                "blocks": block_caches, "x0": x0, "pooled": pooled,
            }
        return ForwardResult(hidden=hidden, pooled=pooled, routing=routing, cache=cache)

    # ---------------------------------------------------------------- backward

    def backward(
        self,
        result: ForwardResult,
        d_pooled: np.ndarray,
        router_logit_grads: dict[int, np.ndarray] | None = None,
    ) -> dict[str, np.ndarray]:
        """Gradients of a scalar loss w.r.t. every weight tensor.

        ``d_pooled`` is the loss gradient at the pooled embedding;
        ``router_logit_grads`` adds per-block gradients flowing directly into
        router logits (from routing losses computed outside the stack).
        Returns a dict covering every parameter, zeros included.
        """
        if result.cache is None:
            raise ValueError("forward was run without want_cache=True")
        p = self.params
        cache = result.cache
        act = self.cfg.activation.value
        grads = self.zero_grads()
        aux = router_logit_grads or {}

        # pooler
        pooled = cache["pooled"]
        dpre = d_pooled * (1.0 - pooled * pooled)
        grads["pooler.weight"] = cache["x0"].T @ dpre
        grads["pooler.bias"] = dpre.sum(axis=0)
        dx0 = dpre @ p["pooler.weight"].T
        dx = np.zeros_like(result.hidden[-1])
        dx[:, 0, :] = dx0

        extended = set(self.moe_cfg.extended_layers) if self.moe_cfg else set()
        for i in reversed(range(self.cfg.num_blocks)):
            bc = cache["blocks"][i]
            dam, dscale, doffset = nn.layer_norm_bwd(dx, bc["ln2"], p[f"block.{i}.norm2.scale"])
            grads[f"block.{i}.norm2.scale"] = dscale
            grads[f"block.{i}.norm2.offset"] = doffset
            if i in extended:
                da_sub, sub_grads = moe.moe_sublayer_bwd(
                    p, i, dam, bc["sub"], self.moe_cfg, act, aux.get(i)
                )
            else:
                da_sub, mlp_grads = nn.mlp_bwd(
                    dam, bc["sub"], p[f"block.{i}.mlp.w1"], p[f"block.{i}.mlp.w2"], act
                )
                sub_grads = {f"block.{i}.mlp.{k}": g for k, g in mlp_grads.items()}
            grads.update(sub_grads)
            da = dam + da_sub
            dxa, dscale, doffset = nn.layer_norm_bwd(da, bc["ln1"], p[f"block.{i}.norm1.scale"])
            grads[f"block.{i}.norm1.scale"] = dscale
            grads[f"block.{i}.norm1.offset"] = doffset
            attn_params = {k: p[v] for k, v in attention_param_names(i).items()}
            dx_attn, attn_grads = nn.attention_bwd(dxa, bc["attn"], attn_params, self.cfg.num_heads)
            names = attention_param_names(i)
            for local, g in attn_grads.items():
                grads[names[local]] = g
            dx = dxa + dx_attn

        draw, dscale, doffset = nn.layer_norm_bwd(
            dx, cache["emb_ln"], p["embedding.norm.scale"]
        )
        grads["embedding.norm.scale"] = dscale
        grads["embedding.norm.offset"] = doffset
        ids = cache["ids"]
        np.add.at(grads["embedding.word"], ids.reshape(-1), draw.reshape(-1, draw.shape[-1]))
        grads["embedding.position"][: ids.shape[1]] = draw.sum(axis=0)
        return grads

    # ------------------------------------------------------------------ encode

    def embed_text(self, text: str, domain: str | None = None) -> np.ndarray:
        return self.embed_texts([text], [domain] if domain else None)[0]

    def embed_texts(
        self,
        texts: list[str],
        domains: list[str | None] | None = None,
        batch_size: int = 64,
    ) -> np.ndarray:
        """Pooled embeddings for a list of texts, one forward batch at a time."""
        if domains is None:
            domains = [None] * len(texts)
        if len(domains) != len(texts):
            raise ValueError("texts and domains differ in length")
        out = np.empty((len(texts), self.cfg.hidden_dim), dtype=self.dtype)
        for start in range(0, len(texts), batch_size):
            chunk = texts[start : start + batch_size]
            chunk_domains = domains[start : start + batch_size]
            ids, mask = self.tokenize_batch(chunk, chunk_domains)
            fr = self.forward(ids, mask, domains=chunk_domains)
            out[start : start + len(chunk)] = fr.pooled
        return out

    def tokenize_batch(
        self, texts: list[str], domains: list[str | None]
    ) -> tuple[np.ndarray, np.ndarray]:
        """Tokenize and stack, trimmed to the longest real length in the batch."""
        seqs = [
            tokenize(t, self.vocab, self.cfg.max_seq_len, domain=d or None)
            for t, d in zip(texts, domains)
        ]
        L = max(s.length for s in seqs)
        ids = np.stack([s.ids[:L] for s in seqs])
        mask = np.stack([s.mask[:L] for s in seqs])
        return ids, mask
