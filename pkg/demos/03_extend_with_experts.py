"""
Extend a dense encoder into a mixture of experts without changing it
====================================================================

Each chosen transformer block's MLP is replaced by E copies that gain a
multiplicative gate branch. The gate projection starts at exactly zero
weight and unit bias, so every expert computes what the original MLP
computed and the extended model is the same function as the base model.
Routing then decides which expert serves which input: enforced by a
domain-to-expert map, or learned by a router trained with cross-entropy
or a mutual-information bonus.
"""

import numpy as np

from cocite import Model, ModelConfig, MoEConfig, TrainConfig, Trainer, extend_model
from cocite.config import Granularity, RoutingStrategy, middle_block
from cocite.moe import count_params, effective_param_count
from cocite.pipeline import Pair
from cocite.trainer import _batch_from_pairs
from cocite.vocab import build_vocabulary

WORDS = ["alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
         "iota", "kappa", "mu", "nu"]
DOMAINS = ["cvd", "copd"]

vocab = build_vocabulary([" ".join(WORDS)], vocab_size=64, domains=DOMAINS)
cfg = ModelConfig(vocab_size=len(vocab.tokens), hidden_dim=16, intermediate_dim=32,
                  num_blocks=2, num_heads=2, max_seq_len=12)
base = Model.fresh(cfg, vocab, seed=0)

moe_cfg = MoEConfig(num_experts=2, strategy=RoutingStrategy.ENFORCED,
                    granularity=Granularity.SENTENCE, extended_layers=(0, 1),
                    domain_to_expert={"cvd": 0, "copd": 1})
moe = extend_model(base, moe_cfg, seed=1)

# Stored parameters grow with the expert copies; the per-input effective
# count stays near the base because only top_k experts run.
print(f"base parameters      {count_params(base.params):7d}")
print(f"stored parameters    {count_params(moe.params):7d}")
print(f"effective parameters {effective_param_count(moe):7d}")

# Function preservation is exact, not approximate.
texts = ["alpha beta gamma", "theta iota kappa mu", "delta epsilon"]
doms = ["cvd", "copd", "cvd"]
ids, mask = base.tokenize_batch(texts, doms)
delta = np.max(np.abs(moe.forward(ids, mask, domains=doms).pooled
                      - base.forward(ids, mask).pooled))
print(f"max |extended - base| over a batch: {delta:.1e}")

# Routing records show where each sentence went.
fr = moe.forward(ids, mask, domains=doms)
rec = fr.routing[0]
print("block 0 expert probabilities:\n", np.round(rec.probs, 3))
print("selected experts per sentence:", rec.selected.ravel().tolist())

# One enforced training step on cvd-only pairs: the copd expert does not
# move, bit for bit.
docs = {}
pairs = []
rng = np.random.default_rng(0)
for i in range(8):
    a, b = f"cvd{i}a", f"cvd{i}b"
    shared = " ".join(rng.choice(WORDS, size=3, replace=False))
    docs[a] = (f"{shared} {WORDS[i]}", "cvd")
    docs[b] = (f"{shared} {WORDS[(i + 5) % 12]}", "cvd")
    pairs.append(Pair(a, b, 1, 1, "cvd"))

train_cfg = TrainConfig(batch_size=8, learning_rate=1e-3, warmup_steps=2,
                        max_epochs=1, validate_every=100, patience=3, seed=0)
trainer = Trainer(moe, train_cfg, docs)
copd_before = {k: v.tobytes() for k, v in moe.params.items() if ".expert.1." in k}
losses = trainer.train_step(_batch_from_pairs(pairs, docs), 1e-3)
print(f"step losses: contrastive {losses.mnr:.3f}, router {losses.router:.3f}")
untouched = all(moe.params[k].tobytes() == copd_before[k] for k in copd_before)
print("copd expert bitwise unchanged after a cvd-only step:", untouched)

# Learned routing instead: a router per extended block picks top_k experts
# and is pushed toward the domain map by a cross-entropy term.
learned_cfg = MoEConfig(num_experts=4, top_k=2, strategy=RoutingStrategy.ROUTER_CE,
                        granularity=Granularity.TOKEN,
                        extended_layers=(middle_block(cfg.num_blocks),),
                        domain_to_expert={"cvd": 0, "copd": 1})
learned = extend_model(base, learned_cfg, seed=2)
fr = learned.forward(ids, mask, domains=doms)
block, rec = next(iter(fr.routing.items()))
print(f"token-level routing in block {block}: probs shape {rec.probs.shape}, "
      f"top-{learned_cfg.top_k} of {learned_cfg.num_experts} experts")
