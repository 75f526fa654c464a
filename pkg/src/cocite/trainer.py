"""Contrastive training loop.

Each step draws a batch of positive pairs, randomly swaps which side is
"left" (both directions of a pair are equally informative), encodes all
2B abstracts independently, and minimizes the in-batch contrastive loss
plus whatever routing loss the strategy calls for. Validation runs every
``validate_every`` steps and once more at the end; the best-scoring
snapshot is what the loop returns, and training halts early once the
count of consecutive non-improving validations exceeds the patience.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import checkpoint, losses, optim
from .config import RoutingStrategy, TrainConfig
from .encoder import Model
from .evaluation import FULL_RANGE, f1max_search, score_pairs
from .pipeline import Pair

TEMPERATURE_KEY = "temperature.log"


class TemperatureParam:
    """Learnable similarity scale, stored as its log so it stays positive."""

    def __init__(self, value: float):
        if value <= 0:
            raise ValueError(f"temperature must be positive, got {value}")
        self.log = np.array([math.log(value)], dtype=np.float64)

    @property
    def value(self) -> float:
        return float(np.exp(self.log[0]))


@dataclass
class TrainBatch:
    left: list[str]
    right: list[str]
    domains: list[str]
    weights: list[int]


@dataclass
class StepLosses:
    total: float
    mnr: float
    router: float
    lr: float
    grad_norm: float


@dataclass
class TrainResult:
    model: Model
    temperature: float
    best_f1max: float
    best_step: int
    steps: int
    history: list[dict[str, Any]] = field(default_factory=list)


def _batch_from_pairs(pairs: list[Pair], documents: dict[str, tuple[str, str]]) -> TrainBatch:
    left, right, doms, weights = [], [], [], []
    for p in pairs:
        left.append(documents[p.id_a][0])
        right.append(documents[p.id_b][0])
        doms.append(p.domain)
        weights.append(p.weight)
    return TrainBatch(left=left, right=right, domains=doms, weights=weights)


class Trainer:
    def __init__(
        self,
        model: Model,
        cfg: TrainConfig,
        documents: dict[str, tuple[str, str]],
        out_dir: str | Path | None = None,
    ):
        self.model = model
        self.cfg = cfg
        self.documents = documents
        self.out_dir = Path(out_dir) if out_dir is not None else None
        self.temperature = TemperatureParam(cfg.init_temperature)
        self.optimizer = optim.AdamW(cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.step = 0
        self.history: list[dict[str, Any]] = []
        self._history_fh = None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    # ------------------------------------------------------------------ steps

    def _routing_targets(self, domains: list[str]) -> np.ndarray:
        assert self.model.moe_cfg is not None
        return np.array([self.model.moe_cfg.expert_for(d) for d in domains], dtype=np.int64)

    def _domain_indices(self, domains: list[str]) -> np.ndarray:
        ordering = {d: k for k, d in enumerate(sorted(set(domains)))}
        return np.array([ordering[d] for d in domains], dtype=np.int64)

    def train_step(self, batch: TrainBatch, lr: float) -> StepLosses:
        """One optimizer update on a batch of positive pairs."""
        B = len(batch.left)
        if B < 2:
            raise ValueError("contrastive batches need at least 2 pairs")
        left, right = batch.left, batch.right
        if self.rng.random() < 0.5:
            left, right = right, left
        texts = list(left) + list(right)
        domains = list(batch.domains) * 2
        ids, mask = self.model.tokenize_batch(texts, domains)
        fr = self.model.forward(ids, mask, domains=domains, want_cache=True)
        pooled = fr.pooled
        mnr, dleft, dright, dlog_t = losses.mnr_loss(
            pooled[:B], pooled[B:], float(self.temperature.log[0])
        )

        router_loss = 0.0
        aux: dict[int, np.ndarray] | None = None
        strategy = self.model.moe_cfg.strategy if self.model.moe_cfg is not None else None
        if strategy is RoutingStrategy.ROUTER_CE:
            router_loss, aux = losses.router_ce_loss(
                fr.routing, self._routing_targets(domains),
                mask.astype(np.float64), weight=self.cfg.router_ce_weight,
            )
        elif strategy is RoutingStrategy.MUTUAL_INFO:
            router_loss, aux = losses.mutual_info_loss(
                fr.routing, self._domain_indices(domains),
                mask.astype(np.float64), weight=self.model.moe_cfg.mi_loss_weight,
            )

        d_pooled = np.concatenate([dleft, dright], axis=0).astype(pooled.dtype)
        grads = self.model.backward(fr, d_pooled, router_logit_grads=aux)
        grads[TEMPERATURE_KEY] = np.array([dlog_t], dtype=np.float64)
        norm = optim.clip_global_norm(grads, self.cfg.clip_norm)
        params = dict(self.model.params)
        params[TEMPERATURE_KEY] = self.temperature.log
        self.optimizer.step(params, grads, lr)
        return StepLosses(
            total=mnr + router_loss, mnr=mnr, router=router_loss, lr=lr, grad_norm=norm
        )

    # ------------------------------------------------------------- validation

    def validate(self, valid_pairs: list[Pair]) -> float:
        scored = score_pairs(self.model, valid_pairs, self.documents)
        return f1max_search(scored, FULL_RANGE).f1max

    # ------------------------------------------------------------------- loop

    def _record(self, entry: dict[str, Any]) -> None:
        self.history.append(entry)
        if self.out_dir is not None:
            if self._history_fh is None:
                self._history_fh = open(self.out_dir / "history.jsonl", "a", encoding="utf-8")
            self._history_fh.write(json.dumps(entry, sort_keys=True) + "\n")
            self._history_fh.flush()

    def _save_snapshot(self, name: str, extra: dict[str, Any]) -> None:
        if self.out_dir is None:
            return
        tensors = dict(self.model.params)
        tensors[TEMPERATURE_KEY] = self.temperature.log
        tensors.update(self.optimizer.state_tensors())
        meta = checkpoint.model_metadata(self.model)
        meta.update(extra)
        meta["optimizer_steps"] = self.optimizer.step_counts()
        meta["trainer"] = {"step": self.step, "rng_state": self.rng.bit_generator.state}
        checkpoint.save(self.out_dir / name, tensors, meta)

    def restore(self, path: str | Path) -> None:
        """Resume from a saved training snapshot: model weights, temperature,
        optimizer moments, step counter, and generator state."""
        model, meta = checkpoint.load_model(path)
        tensors, _ = checkpoint.load(path)
        self.model = model
        if TEMPERATURE_KEY in tensors:
            self.temperature.log = tensors[TEMPERATURE_KEY].astype(np.float64)
        self.optimizer.load_state(
            {k: v for k, v in tensors.items() if k.startswith("adam.")},
            meta.get("optimizer_steps", {}),
        )
        state = meta.get("trainer", {})
        self.step = int(state.get("step", 0))
        if "rng_state" in state:
            self.rng.bit_generator.state = state["rng_state"]

    def fit(self, train_pairs: list[Pair], valid_pairs: list[Pair]) -> TrainResult:
        """Run the full schedule with periodic validation and early stopping."""
        if not train_pairs:
            raise ValueError("empty training split")
        cfg = self.cfg
        steps_per_epoch = len(train_pairs) // cfg.batch_size
        if steps_per_epoch == 0:
            raise ValueError(
                f"training split ({len(train_pairs)} pairs) smaller than one batch "
                f"({cfg.batch_size})"
            )
        total_steps = self.step + steps_per_epoch * cfg.max_epochs
        best_f1 = -np.inf
        best_step = -1
        best_model: Model | None = None
        best_temp = self.temperature.value
        bad_validations = 0
        stop = False

        def run_validation() -> None:
            nonlocal best_f1, best_step, best_model, best_temp, bad_validations, stop
            f1 = self.validate(valid_pairs)
            improved = f1 > best_f1
            if improved:
                best_f1 = f1
                best_step = self.step
                best_model = self.model.copy()
                best_temp = self.temperature.value
                bad_validations = 0
                self._save_snapshot("best.ckpt", {"kind": "best", "step": self.step, "f1max": f1})
            else:
                bad_validations += 1
            self._record({
                "step": self.step, "split": "valid", "f1max": f1,
                "best_f1max": best_f1, "improved": improved,
            })
            if bad_validations > cfg.patience:
                stop = True

        for epoch in range(cfg.max_epochs):
            order = self.rng.permutation(len(train_pairs))
            for b in range(steps_per_epoch):
                chunk = [train_pairs[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
                batch = _batch_from_pairs(chunk, self.documents)
                lr = optim.lr_schedule(
                    self.step + 1, cfg.learning_rate, cfg.warmup_steps, total_steps, cfg.scheduler
                )
                stats = self.train_step(batch, lr)
                self.step += 1
                self._record({
                    "step": self.step, "split": "train", "epoch": epoch,
                    "loss": stats.total, "mnr_loss": stats.mnr,
                    "router_loss": stats.router, "lr": stats.lr,
                    "grad_norm": stats.grad_norm,
                    "temperature": self.temperature.value,
                })
                if self.step % cfg.validate_every == 0:
                    run_validation()
                    if stop:
                        break
            if stop:
                break

        if not stop and self.step % cfg.validate_every != 0:
            run_validation()
        if best_model is None:
            best_model = self.model.copy()
            best_step = self.step
            best_f1 = -np.inf
        self._save_snapshot("last.ckpt", {"kind": "last", "step": self.step})
        if self._history_fh is not None:
            self._history_fh.close()
            self._history_fh = None
        return TrainResult(
            model=best_model,
            temperature=best_temp,
            best_f1max=float(best_f1),
            best_step=best_step,
            steps=self.step,
            history=self.history,
        )
