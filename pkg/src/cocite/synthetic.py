"""Synthetic citation corpora with planted topic structure.

Each domain holds a set of topic clusters. Cluster members share a
cluster-specific word pool, but every abstract samples only a few of
those words, so two same-cluster abstracts usually have little direct
overlap: surface word matching cannot recover the cluster, while a model
that learns which words belong together can. Citing papers reference
foundational papers of their own cluster, so co-citation pairs land
inside clusters.

The ``homonym_fraction`` knob plants cross-domain ambiguity: that share
of topic words is common to both domains but assigned to independently
chosen clusters in each, so the same word signals different clusters
depending on the domain. A single shared encoder pathway must conflate
the two readings; domain-specialized pathways need not.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .pipeline import CitationGraph, PaperRecord, build_graph


@dataclass(frozen=True)
class CorpusSpec:
    domains: tuple[str, ...] = ("cvd", "copd")
    clusters_per_domain: int = 10
    foundational_per_cluster: int = 15
    citing_per_cluster: int = 85
    refs_per_citing: int = 6
    topic_words_per_cluster: int = 40
    topic_words_per_abstract: int = 4
    common_words: int = 200
    common_words_per_abstract: int = 10
    noise_words: int = 3000
    noise_words_per_abstract: int = 6
    homonym_fraction: float = 0.0
    recent_year: int = 2022
    recent_fraction: float = 0.1
    year_lo: int = 2018
    year_hi: int = 2021
    min_foundational_citations: int = 15
    max_foundational_citations: int = 100
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.homonym_fraction <= 1.0:
            raise ValueError("homonym_fraction must lie in [0, 1]")
        if self.refs_per_citing > self.foundational_per_cluster:
            raise ValueError("refs_per_citing cannot exceed foundational_per_cluster")
        if self.topic_words_per_abstract > self.topic_words_per_cluster:
            raise ValueError("topic_words_per_abstract cannot exceed the cluster pool")

    @property
    def papers(self) -> int:
        return len(self.domains) * self.clusters_per_domain * (
            self.foundational_per_cluster + self.citing_per_cluster
        )


def _cluster_word_pools(spec: CorpusSpec, rng: np.random.Generator) -> dict[str, list[list[str]]]:
    """Per domain, a word pool per cluster. A ``homonym_fraction`` share of
    each domain's words is drawn from a pool common to all domains, with an
    independent cluster assignment per domain."""
    per_domain = spec.clusters_per_domain * spec.topic_words_per_cluster
    n_shared = round(spec.homonym_fraction * per_domain)
    shared = [f"met{k:04d}" for k in range(n_shared)]
    pools: dict[str, list[list[str]]] = {}
    for dom in spec.domains:
        private = [f"{dom}term{k:04d}" for k in range(per_domain - n_shared)]
        words = np.array(shared + private, dtype=object)
        order = rng.permutation(len(words))
        shuffled = [str(words[i]) for i in order]
        pools[dom] = [
            shuffled[c * spec.topic_words_per_cluster : (c + 1) * spec.topic_words_per_cluster]
            for c in range(spec.clusters_per_domain)
        ]
    return pools


def _abstract(
    spec: CorpusSpec,
    cluster_pool: list[str],
    common: list[str],
    noise: list[str],
    rng: np.random.Generator,
) -> str:
    picks: list[str] = []
    picks += [cluster_pool[i] for i in rng.choice(len(cluster_pool), spec.topic_words_per_abstract, replace=False)]
    picks += [common[i] for i in rng.choice(len(common), spec.common_words_per_abstract, replace=False)]
    picks += [noise[i] for i in rng.choice(len(noise), spec.noise_words_per_abstract, replace=False)]
    order = rng.permutation(len(picks))
    return " ".join(picks[i] for i in order)


def generate_records(spec: CorpusSpec) -> list[PaperRecord]:
    rng = np.random.default_rng(spec.seed)
    pools = _cluster_word_pools(spec, rng)
    common = [f"common{k:03d}" for k in range(spec.common_words)]
    noise = [f"rare{k:04d}" for k in range(spec.noise_words)]
    records: list[PaperRecord] = []
    for dom in spec.domains:
        for c in range(spec.clusters_per_domain):
            pool = pools[dom][c]
            foundational_ids = [
                f"{dom}-c{c:02d}-f{k:02d}" for k in range(spec.foundational_per_cluster)
            ]
            for pid in foundational_ids:
                year = (
                    spec.recent_year
                    if rng.random() < spec.recent_fraction
                    else int(rng.integers(spec.year_lo, spec.year_hi + 1))
                )
                records.append(PaperRecord(
                    id=pid,
                    abstract=_abstract(spec, pool, common, noise, rng),
                    domain=dom,
                    year=year,
                    references=(),
                    citation_count=int(rng.integers(
                        spec.min_foundational_citations, spec.max_foundational_citations
                    )),
                ))
            for k in range(spec.citing_per_cluster):
                refs = rng.choice(
                    spec.foundational_per_cluster, spec.refs_per_citing, replace=False
                )
                records.append(PaperRecord(
                    id=f"{dom}-c{c:02d}-s{k:03d}",
                    abstract=_abstract(spec, pool, common, noise, rng),
                    domain=dom,
                    year=int(rng.integers(spec.year_lo, spec.year_hi + 1)),
                    references=tuple(foundational_ids[r] for r in sorted(refs)),
                    citation_count=int(rng.integers(0, spec.min_foundational_citations)),
                ))
    return records


def generate_graph(spec: CorpusSpec) -> CitationGraph:
    return build_graph(generate_records(spec))


def write_records_file(path: str | Path, records: list[PaperRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps({
                "id": r.id,
                "abstract": r.abstract,
                "domain": r.domain,
                "year": r.year,
                "references": list(r.references),
                "citation_count": r.citation_count,
            }, sort_keys=True) + "\n")
