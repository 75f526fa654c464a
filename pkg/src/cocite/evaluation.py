"""Scoring embedding models on labeled abstract pairs.

Each abstract is embedded independently and a pair's similarity is the
cosine of the two vectors. The headline metric sweeps every achievable
decision threshold and reports the best F1 (positive class = similar),
the smallest cutoff achieving it, accuracy at that cutoff, and the mean
absolute gap between similarity and label.

Validation sweeps the full [-1, 1] range. Test restricts the sweep to
[0.5, 1] so a trivial accept-everything threshold cannot win, and
reports accuracy and distance only.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .pipeline import Pair
from .vocab import Vocabulary


class EvaluationError(ValueError):
    """Undefined metric input (zero vectors, empty documents, missing ids)."""


class EvalMode(str, Enum):
    VALIDATION = "validation"
    TEST = "test"


FULL_RANGE = (-1.0, 1.0)
TEST_RANGE = (0.5, 1.0)


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape:
        raise EvaluationError(f"length mismatch: {u.shape[0]} vs {v.shape[0]}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise EvaluationError("cosine similarity of a zero vector is undefined")
    return float(u @ v / (nu * nv))


@dataclass(frozen=True)
class ScoredPair:
    id_a: str
    id_b: str
    similarity: float
    label: int
    domain: str


@dataclass(frozen=True)
class F1Result:
    f1max: float
    cutoff: float
    no_positives: bool = False


def f1max_search(scored: list[ScoredPair], search_range: tuple[float, float]) -> F1Result:
    """Best F1 over every achievable threshold in ``search_range``.

    Candidates are the distinct observed similarities inside the range plus
    the lower endpoint; prediction is positive when similarity >= threshold,
    and the smallest threshold achieving the maximum is returned. A split
    with no positive labels has F1 pinned at 0 and is flagged.

    With TP predictions counted at threshold t among the count_ge pairs
    scoring >= t, F1 = 2 TP / (count_ge + P); both counts come from one
    sort, so the sweep is O(n log n).
    """
    if not scored:
        raise EvaluationError("cannot search thresholds over an empty split")
    lo, hi = search_range
    sims = np.array([p.similarity for p in scored], dtype=np.float64)
    labels = np.array([p.label for p in scored], dtype=np.int64)
    total_pos = int(np.sum(labels == 1))
    if total_pos == 0:
        return F1Result(f1max=0.0, cutoff=lo, no_positives=True)
    candidates = np.unique(np.concatenate([sims[(sims >= lo) & (sims <= hi)], [lo]]))
    order = np.argsort(sims, kind="stable")
    s_sorted = sims[order]
    l_sorted = labels[order]
    suffix_pos = np.concatenate([np.cumsum(l_sorted[::-1])[::-1], [0]])
    idx = np.searchsorted(s_sorted, candidates, side="left")
    tp = suffix_pos[idx].astype(np.float64)
    count_ge = (sims.size - idx).astype(np.float64)
    f1 = 2.0 * tp / (count_ge + total_pos)
    best = int(np.argmax(f1))
    return F1Result(f1max=float(f1[best]), cutoff=float(candidates[best]))


def distance_and_accuracy(scored: list[ScoredPair], cutoff: float) -> tuple[float, float]:
    """Mean |similarity - label| over the split, and the fraction of pairs
    whose thresholded prediction matches the label."""
    if not scored:
        raise EvaluationError("empty split")
    sims = np.array([p.similarity for p in scored], dtype=np.float64)
    labels = np.array([p.label for p in scored], dtype=np.float64)
    distance = float(np.mean(np.abs(sims - labels)))
    accuracy = float(np.mean((sims >= cutoff) == (labels == 1.0)))
    return distance, accuracy


# -------------------------------------------------------------------- TF-IDF

def tfidf_vectors(
    documents: dict[str, str], vocab: Vocabulary
) -> dict[str, dict[int, float]]:
    """Sparse tf-idf vector per document over the tokenizer's word ids.

    Special tokens never appear (the lexical mapping excludes them); terms
    are weighted by ln((1+N)/(1+df)) + 1. A document with no in-vocabulary
    words has no vector and is reported as an error.
    """
    term_ids: dict[str, list[int]] = {}
    for doc_id in sorted(documents):
        ids = vocab.word_ids(documents[doc_id])
        if not ids:
            raise EvaluationError(f"document {doc_id!r} has no in-vocabulary tokens")
        term_ids[doc_id] = ids
    n_docs = len(documents)
    df: Counter = Counter()
    for ids in term_ids.values():
        df.update(set(ids))
    idf = {t: math.log((1 + n_docs) / (1 + df[t])) + 1.0 for t in df}
    vectors: dict[str, dict[int, float]] = {}
    for doc_id, ids in term_ids.items():
        tf = Counter(ids)
        vectors[doc_id] = {t: c * idf[t] for t, c in tf.items()}
    return vectors


def _sparse_cosine(a: dict[int, float], b: dict[int, float]) -> float:
    if len(b) < len(a):
        a, b = b, a
    dot = sum(w * b.get(t, 0.0) for t, w in a.items())
    na = math.sqrt(sum(w * w for w in a.values()))
    nb = math.sqrt(sum(w * w for w in b.values()))
    return dot / (na * nb)


def tfidf_baseline(
    documents: dict[str, str], pairs: list[Pair], vocab: Vocabulary
) -> list[ScoredPair]:
    """Score pairs by cosine over tf-idf vectors of the raw abstracts."""
    for p in pairs:
        for pid in (p.id_a, p.id_b):
            if pid not in documents:
                raise EvaluationError(f"pair references unknown document {pid!r}")
    vectors = tfidf_vectors(documents, vocab)
    return [
        ScoredPair(p.id_a, p.id_b, _sparse_cosine(vectors[p.id_a], vectors[p.id_b]), p.label, p.domain)
        for p in pairs
    ]


# -------------------------------------------------------------------- report

@dataclass
class EvalReport:
    mode: EvalMode
    cutoff: float
    f1max: float | None
    mean_distance: float
    accuracy: float
    threshold_range: tuple[float, float]
    n_pairs: int
    n_positive: int
    n_negative: int
    no_positives: bool = False
    per_domain: dict[str, "EvalReport"] | None = None

    def to_dict(self) -> dict:
        d = {
            "mode": self.mode.value,
            "cutoff": self.cutoff,
            "f1max": self.f1max,
            "mean_distance": self.mean_distance,
            "accuracy": self.accuracy,
            "threshold_range": list(self.threshold_range),
            "n_pairs": self.n_pairs,
            "n_positive": self.n_positive,
            "n_negative": self.n_negative,
            "no_positives": self.no_positives,
        }
        if self.per_domain is not None:
            d["per_domain"] = {k: v.to_dict() for k, v in self.per_domain.items()}
        return d


def score_report(scored: list[ScoredPair], mode: EvalMode, breakdown: bool = True) -> EvalReport:
    rng_ = FULL_RANGE if mode is EvalMode.VALIDATION else TEST_RANGE
    res = f1max_search(scored, rng_)
    distance, accuracy = distance_and_accuracy(scored, res.cutoff)
    labels = [p.label for p in scored]
    report = EvalReport(
        mode=mode,
        cutoff=res.cutoff,
        f1max=res.f1max if mode is EvalMode.VALIDATION else None,
        mean_distance=distance,
        accuracy=accuracy,
        threshold_range=rng_,
        n_pairs=len(scored),
        n_positive=sum(labels),
        n_negative=len(labels) - sum(labels),
        no_positives=res.no_positives,
    )
    if breakdown:
        domains = sorted({p.domain for p in scored})
        if len(domains) > 1:
            report.per_domain = {
                d: score_report([p for p in scored if p.domain == d], mode, breakdown=False)
                for d in domains
            }
    return report


def score_pairs(model, pairs: list[Pair], documents: dict[str, tuple[str, str]]) -> list[ScoredPair]:
    """Embed each unique abstract once (with its domain token) and score
    every pair by cosine similarity."""
    ids = sorted({pid for p in pairs for pid in (p.id_a, p.id_b)})
    missing = [pid for pid in ids if pid not in documents]
    if missing:
        raise EvaluationError(f"{len(missing)} pair members missing from corpus, first: {missing[0]!r}")
    texts = [documents[pid][0] for pid in ids]
    domains = [documents[pid][1] for pid in ids]
    embeds = model.embed_texts(texts, domains)
    by_id = {pid: embeds[k] for k, pid in enumerate(ids)}
    return [
        ScoredPair(p.id_a, p.id_b, cosine_similarity(by_id[p.id_a], by_id[p.id_b]), p.label, p.domain)
        for p in pairs
    ]


def evaluate_model(
    model,
    pairs: list[Pair],
    documents: dict[str, tuple[str, str]],
    mode: EvalMode,
) -> EvalReport:
    if not pairs:
        raise EvaluationError("empty split")
    return score_report(score_pairs(model, pairs, documents), mode)


def format_report_table(reports: dict[str, EvalReport]) -> str:
    """Rows of Cutoff / F1Max / Dist / Acc per named split."""
    lines = [f"{'Split':<12} {'Cutoff':>8} {'F1Max':>8} {'Dist':>8} {'Acc':>8}"]
    for name, rep in reports.items():
        f1 = f"{rep.f1max:.2f}" if rep.f1max is not None else "-"
        lines.append(
            f"{name:<12} {rep.cutoff:>8.2f} {f1:>8} {rep.mean_distance:>8.2f} {rep.accuracy:>8.2f}"
        )
        if rep.per_domain:
            for dom, sub in rep.per_domain.items():
                sub_f1 = f"{sub.f1max:.2f}" if sub.f1max is not None else "-"
                lines.append(
                    f"{'  ' + dom:<12} {sub.cutoff:>8.2f} {sub_f1:>8} "
                    f"{sub.mean_distance:>8.2f} {sub.accuracy:>8.2f}"
                )
    return "\n".join(lines)
