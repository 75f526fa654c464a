"""Mixture-of-experts extension of a trained encoder.

Extension clones each chosen block's MLP into E experts and augments every
expert with a multiplicative gate branch (W3, b3). Seeding W3 = 0, b3 = 1
makes each expert compute exactly the source MLP, so the extended model's
forward pass matches the base model regardless of how routing decides;
the added capacity only comes alive once training moves the gates.

Routing granularities: one decision per sequence (from the mean of unmasked
token vectors of the routed sublayer's input) or one per token. Strategies:
enforced (the domain's expert, gate 1, router ignored), or learned top-k
with gates softmaxed over the selected logits. Ties in top-k selection go
to the lower expert index.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from . import nn
from .config import ConfigError, Granularity, MoEConfig, ModelConfig, RoutingStrategy

if TYPE_CHECKING:
    from .encoder import Model


@dataclass(frozen=True)
class ExpertMlp:
    """One expert's tensors: the cloned MLP plus the gate branch."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray


@dataclass
class RoutingRecord:
    """What one extended block decided for one batch.

    Arrays are (B, E)/(B, k) for sentence granularity and (B, L, E)/(B, L, k)
    for token granularity. ``probs`` is the full softmax over all experts
    (consumed by routing losses); ``gates`` sums to 1 over the selected axis.
    """

    block: int
    granularity: Granularity
    logits: np.ndarray
    probs: np.ndarray
    selected: np.ndarray
    gates: np.ndarray


def expert_param_names(i: int, e: int) -> dict[str, str]:
    prefix = f"block.{i}.expert.{e}"
    return {t: f"{prefix}.{t}" for t in ("w1", "b1", "w2", "b2", "w3", "b3")}


def get_expert(params: dict[str, np.ndarray], i: int, e: int) -> ExpertMlp:
    names = expert_param_names(i, e)
    return ExpertMlp(**{t: params[n] for t, n in names.items()})


def swiglu_forward(expert: ExpertMlp, x: np.ndarray, activation: str = "gelu") -> np.ndarray:
    """(act(x W1 + b1) * (x W3 + b3)) W2 + b2 for one expert."""
    y, _ = nn.swiglu_fwd(
        x, expert.w1, expert.b1, expert.w2, expert.b2, expert.w3, expert.b3, activation
    )
    return y


def seed_experts_from_mlp(
    params: dict[str, np.ndarray],
    i: int,
    num_experts: int,
    rng: np.random.Generator,
) -> dict[str, np.ndarray]:
    """Expert and router tensors for block ``i``, seeded from its dense MLP.

    W1/b1/W2/b2 are copies of the source, W3 zeros, b3 ones; the router is
    freshly initialized (normal weights, zero bias).
    """
    d, I = params[f"block.{i}.mlp.w1"].shape
    dtype = params[f"block.{i}.mlp.w1"].dtype
    out: dict[str, np.ndarray] = {}
    for e in range(num_experts):
        names = expert_param_names(i, e)
        out[names["w1"]] = params[f"block.{i}.mlp.w1"].copy()
        out[names["b1"]] = params[f"block.{i}.mlp.b1"].copy()
        out[names["w2"]] = params[f"block.{i}.mlp.w2"].copy()
        out[names["b2"]] = params[f"block.{i}.mlp.b2"].copy()
        out[names["w3"]] = np.zeros((d, I), dtype=dtype)
        out[names["b3"]] = np.ones(I, dtype=dtype)
    out[f"block.{i}.router.weight"] = rng.normal(0.0, 0.02, size=(d, num_experts)).astype(dtype)
    out[f"block.{i}.router.bias"] = np.zeros(num_experts, dtype=dtype)
    return out


def extend_model(base: "Model", cfg: MoEConfig, seed: int = 0) -> "Model":
    """Clone a dense encoder into an MoE model that initially computes the same function."""
    if base.moe_cfg is not None:
        raise ConfigError("model is already extended")
    cfg.validate_for(base.cfg, domains=base.vocab.domains if cfg.strategy is RoutingStrategy.ENFORCED else ())
    rng = np.random.default_rng(seed)
    params = {k: v.copy() for k, v in base.params.items()}
    for i in cfg.extended_layers:
        params.update(seed_experts_from_mlp(params, i, cfg.num_experts, rng))
        for t in ("w1", "b1", "w2", "b2"):
            del params[f"block.{i}.mlp.{t}"]
    return base.__class__(base.cfg, base.vocab, params, moe_cfg=cfg)


# --------------------------------------------------------------------- routing

def _top_k_select(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the k largest logits (ties -> lowest index) and their gates."""
    order = np.argsort(-logits, axis=-1, kind="stable")
    selected = order[..., :k]
    chosen = np.take_along_axis(logits, selected, axis=-1)
    gates = nn.softmax(chosen, axis=-1)
    return selected, gates


def route(
    block_input: np.ndarray,
    router_weight: np.ndarray,
    router_bias: np.ndarray,
    cfg: MoEConfig,
    domain: str | None = None,
    mask: np.ndarray | None = None,
) -> RoutingRecord:
    """Routing decision for a single (L, d) sequence.

    Convenience wrapper over the batched path; ``mask`` defaults to all-real.
    """
    x = np.atleast_2d(block_input)[None, :, :]
    if mask is None:
        maskf = np.ones((1, x.shape[1]), dtype=x.dtype)
    else:
        maskf = np.atleast_2d(mask).astype(x.dtype)
    record, _ = _route_batch(
        x, maskf, router_weight, router_bias, cfg,
        [domain] if domain is not None else None, block=-1,
    )
    return RoutingRecord(
        block=record.block,
        granularity=record.granularity,
        logits=record.logits[0],
        probs=record.probs[0],
        selected=record.selected[0],
        gates=record.gates[0],
    )


def _route_batch(
    a: np.ndarray,
    maskf: np.ndarray,
    w: np.ndarray,
    b: np.ndarray,
    cfg: MoEConfig,
    domains: list[str] | None,
    block: int,
) -> tuple[RoutingRecord, dict]:
    """Batched routing decision plus the cache needed for its backward pass."""
    B, L, _ = a.shape
    E = cfg.num_experts
    if cfg.granularity is Granularity.SENTENCE:
        denom = maskf.sum(axis=1, keepdims=True)
        xbar = (a * maskf[:, :, None]).sum(axis=1) / denom
        logits = xbar @ w + b
    else:
        xbar, denom = None, None
        logits = a @ w + b
    probs = nn.softmax(logits, axis=-1)

    if cfg.strategy is RoutingStrategy.ENFORCED:
        if domains is None:
            raise ConfigError("enforced routing needs a domain per example")
        idx = np.array([cfg.expert_for(dom) for dom in domains], dtype=np.int64)
        if cfg.granularity is Granularity.SENTENCE:
            selected = idx[:, None]
            gates = np.ones((B, 1), dtype=a.dtype)
        else:
            selected = np.broadcast_to(idx[:, None, None], (B, L, 1)).copy()
            gates = np.ones((B, L, 1), dtype=a.dtype)
    else:
        selected, gates = _top_k_select(logits, cfg.top_k)

    record = RoutingRecord(
        block=block, granularity=cfg.granularity,
        logits=logits, probs=probs, selected=selected, gates=gates,
    )
    cache = {"xbar": xbar, "denom": denom, "maskf": maskf}
    return record, cache


def _dense_gates(record: RoutingRecord, B: int, L: int, E: int, dtype) -> np.ndarray:
    """(B, L, E) combination weights; zero rows for unselected experts."""
    dense = np.zeros((B, L, E), dtype=dtype)
    if record.granularity is Granularity.SENTENCE:
        per_seq = np.zeros((B, E), dtype=dtype)
        np.put_along_axis(per_seq, record.selected, record.gates.astype(dtype), axis=-1)
        dense[:] = per_seq[:, None, :]
    else:
        np.put_along_axis(dense, record.selected, record.gates.astype(dtype), axis=-1)
    return dense


def moe_sublayer_fwd(
    params: dict[str, np.ndarray],
    i: int,
    a: np.ndarray,
    maskf: np.ndarray,
    cfg: MoEConfig,
    domains: list[str] | None,
    activation: str,
) -> tuple[np.ndarray, RoutingRecord, dict]:
    """Routed expert sublayer for block ``i``: gate-weighted sum of expert outputs.

    Experts that no routed unit selected are skipped entirely; their outputs
    and gradients are exact zeros.
    """
    B, L, _ = a.shape
    E = cfg.num_experts
    record, route_cache = _route_batch(
        a, maskf, params[f"block.{i}.router.weight"], params[f"block.{i}.router.bias"],
        cfg, domains, block=i,
    )
    dense = _dense_gates(record, B, L, E, a.dtype)
    out = np.zeros_like(a)
    expert_caches: list[tuple | None] = [None] * E
    expert_outputs: list[np.ndarray | None] = [None] * E
    for e in range(E):
        if not np.any(dense[:, :, e]):
            continue
        ex = get_expert(params, i, e)
        y_e, c_e = nn.swiglu_fwd(a, ex.w1, ex.b1, ex.w2, ex.b2, ex.w3, ex.b3, activation)
        out += dense[:, :, e : e + 1] * y_e
        expert_caches[e] = c_e
        expert_outputs[e] = y_e
    cache = {
        "a": a, "dense": dense, "record": record, "route": route_cache,
        "expert_caches": expert_caches, "expert_outputs": expert_outputs,
    }
    return out, record, cache


def moe_sublayer_bwd(
    params: dict[str, np.ndarray],
    i: int,
    dout: np.ndarray,
    cache: dict,
    cfg: MoEConfig,
    activation: str,
    aux_dlogits: np.ndarray | None = None,
) -> tuple[np.ndarray, dict[str, np.ndarray]]:
    """Backward through the routed sublayer.

    Gradient reaches router logits two ways: through the gates used to mix
    expert outputs (hard top-k: unselected logits get zero), and through
    ``aux_dlogits`` contributed by routing losses.
    """
    a, dense, record = cache["a"], cache["dense"], cache["record"]
    B, L, _ = a.shape
    E = cfg.num_experts
    da = np.zeros_like(a)
    grads: dict[str, np.ndarray] = {}
    dgate_dense = np.zeros((B, L, E), dtype=a.dtype)
    for e in range(E):
        names = expert_param_names(i, e)
        if cache["expert_caches"][e] is None:
            for t, n in names.items():
                grads[n] = np.zeros_like(params[n])
            continue
        y_e = cache["expert_outputs"][e]
        dgate_dense[:, :, e] = (dout * y_e).sum(axis=-1)
        dy_e = dense[:, :, e : e + 1] * dout
        ex = get_expert(params, i, e)
        da_e, g_e = nn.swiglu_bwd(dy_e, cache["expert_caches"][e], ex.w1, ex.w2, ex.w3, activation)
        da += da_e
        for t, g in g_e.items():
            grads[names[t]] = g

    # gates -> selected logits (softmax over the selection); enforced gates are constants
    if cfg.strategy is RoutingStrategy.ENFORCED:
        dlogits = np.zeros_like(record.logits)
    elif record.granularity is Granularity.SENTENCE:
        dgate_seq = dgate_dense.sum(axis=1)
        dsel = np.take_along_axis(dgate_seq, record.selected, axis=-1)
        dchosen = nn.softmax_bwd(dsel, record.gates.astype(a.dtype))
        dlogits = np.zeros_like(record.logits)
        np.put_along_axis(dlogits, record.selected, dchosen, axis=-1)
    else:
        dsel = np.take_along_axis(dgate_dense, record.selected, axis=-1)
        dchosen = nn.softmax_bwd(dsel, record.gates.astype(a.dtype))
        dlogits = np.zeros_like(record.logits)
        np.put_along_axis(dlogits, record.selected, dchosen, axis=-1)

    if aux_dlogits is not None:
        dlogits = dlogits + aux_dlogits.astype(dlogits.dtype)

    w = params[f"block.{i}.router.weight"]
    maskf = cache["route"]["maskf"]
    if record.granularity is Granularity.SENTENCE:
        xbar, denom = cache["route"]["xbar"], cache["route"]["denom"]
        grads[f"block.{i}.router.weight"] = xbar.T @ dlogits
        grads[f"block.{i}.router.bias"] = dlogits.sum(axis=0)
        dxbar = dlogits @ w.T
        da += maskf[:, :, None] * dxbar[:, None, :] / denom[:, :, None]
    else:
        flat_a = a.reshape(-1, a.shape[-1])
        flat_dl = dlogits.reshape(-1, E)
        grads[f"block.{i}.router.weight"] = flat_a.T @ flat_dl
        grads[f"block.{i}.router.bias"] = flat_dl.sum(axis=0)
        da += dlogits @ w.T
    return da, grads


# ----------------------------------------------------------------- accounting

def mlp_param_count(cfg: ModelConfig) -> int:
    d, I = cfg.hidden_dim, cfg.intermediate_dim
    return d * I + I + I * d + d


def gate_branch_param_count(cfg: ModelConfig) -> int:
    return cfg.hidden_dim * cfg.intermediate_dim + cfg.intermediate_dim


def router_param_count(cfg: ModelConfig, moe_cfg: MoEConfig) -> int:
    return cfg.hidden_dim * moe_cfg.num_experts + moe_cfg.num_experts


def stored_param_count(cfg: ModelConfig, moe_cfg: MoEConfig | None, base_total: int) -> int:
    """Stored total after extension: base + per extended block, the extra
    expert copies, every expert's gate branch, and the router."""
    if moe_cfg is None:
        return base_total
    per_block = (
        (moe_cfg.num_experts - 1) * mlp_param_count(cfg)
        + moe_cfg.num_experts * gate_branch_param_count(cfg)
        + router_param_count(cfg, moe_cfg)
    )
    return base_total + len(moe_cfg.extended_layers) * per_block


def active_mlp_param_count(cfg: ModelConfig, moe_cfg: MoEConfig) -> int:
    """MLP-path parameters touched per routed unit under top-k routing."""
    return moe_cfg.top_k * (mlp_param_count(cfg) + gate_branch_param_count(cfg))


def count_params(params: dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def effective_param_count(model: "Model") -> int:
    """Parameters a single forward pass can touch (unselected experts excluded)."""
    total = count_params(model.params)
    if model.moe_cfg is None:
        return total
    unused = (model.moe_cfg.num_experts - model.moe_cfg.top_k) * (
        mlp_param_count(model.cfg) + gate_branch_param_count(model.cfg)
    )
    return total - len(model.moe_cfg.extended_layers) * unused
