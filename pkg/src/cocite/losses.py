"""Training objectives and their gradients.

The contrastive objective treats a batch of (left, right) sentence pairs as
B positives among B*B candidates: temperature-scaled dot products form a
B x B logit matrix and each row is a softmax classification whose correct
class sits on the diagonal. Temperature is learned in log space so it can
never go nonpositive.

Routing losses steer learned routing: a cross-entropy pulling each router
toward the example's designated expert, and a mutual-information term
rewarding routing distributions that identify the example's domain.
"""

from __future__ import annotations

import numpy as np

from . import nn
from .config import Granularity
from .moe import RoutingRecord


def mnr_loss(
    left: np.ndarray,
    right: np.ndarray,
    log_temperature: float,
) -> tuple[float, np.ndarray, np.ndarray, float]:
    """In-batch contrastive loss over pooled embeddings.

    Returns (loss, dleft, dright, dlog_temperature). ``left`` and ``right``
    are (B, d); row i of each is a positive pair, every other row of
    ``right`` serves as a negative for ``left[i]``.
    """
    B = left.shape[0]
    t = float(np.exp(log_temperature))
    sims = left @ right.T
    logits = t * sims
    logp = nn.log_softmax(logits, axis=-1)
    loss = float(-np.trace(logp) / B)
    probs = np.exp(logp)
    dlogits = probs.copy()
    dlogits[np.arange(B), np.arange(B)] -= 1.0
    dlogits /= B
    dleft = t * (dlogits @ right)
    dright = t * (dlogits.T @ left)
    # d loss / d log t = t * d loss / d t, and d logits / d t = sims
    dlog_t = float(t * np.sum(dlogits * sims))
    return loss, dleft, dright, dlog_t


def router_ce_loss(
    records: dict[int, RoutingRecord],
    expert_targets: np.ndarray,
    maskf: np.ndarray,
    weight: float = 1.0,
) -> tuple[float, dict[int, np.ndarray]]:
    """Cross-entropy pushing each router toward the example's designated expert.

    Averaged over the extended blocks, the batch, and (for token-level
    routing) the unmasked tokens. Returns (loss, {block: dlogits}).
    """
    if not records:
        return 0.0, {}
    n_blocks = len(records)
    targets = np.asarray(expert_targets, dtype=np.int64)
    total = 0.0
    grads: dict[int, np.ndarray] = {}
    for i, rec in records.items():
        logits = rec.logits.astype(np.float64)
        logp = nn.log_softmax(logits, axis=-1)
        probs = np.exp(logp)
        if rec.granularity is Granularity.SENTENCE:
            B = logits.shape[0]
            rows = np.arange(B)
            total += -logp[rows, targets].sum() / B
            d = probs
            d[rows, targets] -= 1.0
            d *= weight / (B * n_blocks)
        else:
            B, L, _ = logits.shape
            m = maskf.astype(np.float64)
            n_tok = m.sum()
            tgt = np.broadcast_to(targets[:, None], (B, L))
            picked = np.take_along_axis(logp, tgt[:, :, None], axis=-1)[:, :, 0]
            total += -(picked * m).sum() / n_tok
            d = probs
            np.put_along_axis(
                d,
                tgt[:, :, None],
                np.take_along_axis(d, tgt[:, :, None], axis=-1) - 1.0,
                axis=-1,
            )
            d *= (weight / (n_tok * n_blocks)) * m[:, :, None]
        grads[i] = d
    return weight * total / n_blocks, grads


def _per_example_probs(
    rec: RoutingRecord, maskf: np.ndarray
) -> tuple[np.ndarray, np.ndarray | None]:
    """One routing distribution per example; token-level records are averaged
    over unmasked tokens. Returns (p (B, E), denom or None)."""
    probs = rec.probs.astype(np.float64)
    if rec.granularity is Granularity.SENTENCE:
        return probs, None
    m = maskf.astype(np.float64)
    denom = m.sum(axis=1, keepdims=True)
    p = (probs * m[:, :, None]).sum(axis=1) / denom
    return p, denom


def mutual_info_loss(
    records: dict[int, RoutingRecord],
    domain_indices: np.ndarray,
    maskf: np.ndarray,
    weight: float = 1.0,
) -> tuple[float, dict[int, np.ndarray]]:
    """Negated mutual information between domain and routing distribution.

    Per block: q_de = mean routing probability of expert e over the examples
    of domain d, pi_d = the domain's batch share, p_e = sum_d pi_d q_de, and
    MI = sum_d pi_d sum_e q_de ln(q_de / p_e). The returned loss is
    -weight * MI averaged over extended blocks, so minimizing it makes the
    routing distribution informative about the domain.
    """
    if not records:
        return 0.0, {}
    n_blocks = len(records)
    dom = np.asarray(domain_indices, dtype=np.int64)
    N = dom.shape[0]
    uniq = np.unique(dom)
    total = 0.0
    grads: dict[int, np.ndarray] = {}
    for i, rec in records.items():
        p_i, denom = _per_example_probs(rec, maskf)
        E = p_i.shape[1]
        q = np.empty((uniq.shape[0], E), dtype=np.float64)
        pi = np.empty(uniq.shape[0], dtype=np.float64)
        for row, d_val in enumerate(uniq):
            members = dom == d_val
            q[row] = p_i[members].mean(axis=0)
            pi[row] = members.mean()
        p_e = pi @ q
        mi = float(np.sum(pi[:, None] * q * (np.log(q) - np.log(p_e)[None, :])))
        total += mi
        # d(-MI)/dp_ie = -(ln q_{d(i),e} - ln p_e) / N
        row_of = np.searchsorted(uniq, dom)
        dp = -(np.log(q)[row_of] - np.log(p_e)[None, :]) / N
        dp *= weight / n_blocks
        if rec.granularity is Granularity.SENTENCE:
            dlogits = nn.softmax_bwd(dp, p_i)
        else:
            probs = rec.probs.astype(np.float64)
            m = maskf.astype(np.float64)
            dprobs = dp[:, None, :] * (m[:, :, None] / denom[:, :, None])
            dlogits = nn.softmax_bwd(dprobs, probs)
        grads[i] = dlogits
    return -weight * total / n_blocks, grads
