"""AdamW, gradient clipping, and the learning-rate schedule.

One deliberate deviation from textbook AdamW: a tensor whose gradient is
exactly zero for a step is skipped outright, with no moment update and no
weight decay. Routing that never touches an expert therefore leaves that
expert's bytes untouched, which keeps experts fully isolated under
enforced routing.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .config import Scheduler, TrainConfig


def lr_schedule(
    step: int,
    peak_lr: float,
    warmup_steps: int,
    total_steps: int,
    scheduler: Scheduler = Scheduler.ONE_CYCLE,
) -> float:
    """Learning rate at ``step`` (0-based): linear 0 -> peak over the warmup,
    then cosine peak -> 0 at ``total_steps``.

    Both scheduler variants share this shape; the enum records which was
    asked for.
    """
    del scheduler
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if total_steps < warmup_steps:
        raise ValueError(
            f"total_steps ({total_steps}) must be >= warmup_steps ({warmup_steps})"
        )
    if warmup_steps > 0 and step <= warmup_steps:
        return peak_lr * step / warmup_steps
    span = total_steps - warmup_steps
    if span <= 0:
        return peak_lr
    progress = min((step - warmup_steps) / span, 1.0)
    return peak_lr * 0.5 * (1.0 + np.cos(np.pi * progress))


def clip_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> float:
    """Scale all gradients in place so their global norm is at most
    ``max_norm``. Returns the pre-clip norm."""
    norm = nn.global_norm(grads.values())
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
    return norm


class AdamW:
    """Decoupled-weight-decay Adam over a dict of named tensors.

    Decay applies only to tensors with 2+ dimensions (weight matrices and
    embeddings); biases, norm scales/offsets, and the temperature scalar
    train without it. Moments and step counts are kept per tensor so that
    skipped (all-zero-gradient) tensors stay exactly where they were.
    """

    def __init__(self, cfg: TrainConfig):
        self.beta1 = cfg.adam_beta1
        self.beta2 = cfg.adam_beta2
        self.eps = cfg.adam_eps
        self.weight_decay = cfg.weight_decay
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.steps: dict[str, int] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float) -> None:
        for name, p in params.items():
            g = grads[name]
            if not np.any(g):
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p, dtype=np.float64)
                self.v[name] = np.zeros_like(p, dtype=np.float64)
                self.steps[name] = 0
            self.steps[name] += 1
            t = self.steps[name]
            g64 = g.astype(np.float64)
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g64
            v *= self.beta2
            v += (1.0 - self.beta2) * (g64 * g64)
            mhat = m / (1.0 - self.beta1**t)
            vhat = v / (1.0 - self.beta2**t)
            update = mhat / (np.sqrt(vhat) + self.eps)
            if p.ndim >= 2 and self.weight_decay > 0.0:
                update = update + self.weight_decay * p.astype(np.float64)
            p -= (lr * update).astype(p.dtype)

    def state_tensors(self) -> dict[str, np.ndarray]:
        """Moments flattened into named tensors for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def step_counts(self) -> dict[str, int]:
        return dict(self.steps)

    def load_state(
        self, tensors: dict[str, np.ndarray], step_counts: dict[str, int]
    ) -> None:
        self.m.clear()
        self.v.clear()
        self.steps.clear()
        for name, arr in tensors.items():
            if name.startswith("adam.m."):
                self.m[name[len("adam.m."):]] = arr.astype(np.float64)
            elif name.startswith("adam.v."):
                self.v[name[len("adam.v."):]] = arr.astype(np.float64)
        self.steps.update({k: int(v) for k, v in step_counts.items()})
