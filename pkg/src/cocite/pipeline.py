"""Dataset construction from citation graphs.

Two papers cited together by a third are treated as a similar pair; how
many distinct papers cite them together is the pair's multiplicity, and
the training split repeats each pair that many times. Dissimilar pairs
are drawn uniformly from papers that are individually well cited (so the
absence of a co-citation is informative) yet never co-cited.

Splits: pairs touching the most recent year form the held-out test set;
the rest divide 99:1 into train/validation, and validation gains an equal
count of sampled negatives. All sampling is driven by a caller-supplied
generator, and iteration orders are fixed, so a fixed seed reproduces the
output files byte for byte.
"""

from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np


class DataError(ValueError):
    """Invalid input data or an unsatisfiable sampling request."""


@dataclass(frozen=True)
class PaperRecord:
    id: str
    abstract: str
    domain: str
    year: int
    references: tuple[str, ...]
    citation_count: int


@dataclass
class CitationGraph:
    """Paper records plus the co-citation multiset over unordered id pairs."""

    records: dict[str, PaperRecord]
    cocitations: Counter = field(default_factory=Counter)

    def subgraph(self, domain: str) -> "CitationGraph":
        kept = {pid: r for pid, r in self.records.items() if r.domain == domain}
        sub = CitationGraph(records=kept)
        sub.cocitations = extract_cocitations(sub)
        return sub


@dataclass(frozen=True)
class Pair:
    id_a: str
    id_b: str
    label: int
    weight: int
    domain: str


@dataclass
class PairDataset:
    train: list[Pair]
    valid: list[Pair]
    test: list[Pair]

    def split(self, name: str) -> list[Pair]:
        try:
            return {"train": self.train, "valid": self.valid, "test": self.test}[name]
        except KeyError:
            raise KeyError(f"unknown split {name!r}") from None


@dataclass
class IngestReport:
    accepted: int = 0
    rejected: list[tuple[str, str]] = field(default_factory=list)


def _pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a < b else (b, a)


_REQUIRED_FIELDS = ("id", "abstract", "domain", "year", "references", "citation_count")


def parse_record(obj: dict) -> PaperRecord:
    for f in _REQUIRED_FIELDS:
        if f not in obj:
            raise DataError(f"missing field {f!r}")
    if not isinstance(obj["id"], str) or not obj["id"]:
        raise DataError("id must be a non-empty string")
    if not isinstance(obj["abstract"], str) or not obj["abstract"].strip():
        raise DataError("abstract must be a non-empty string")
    if not isinstance(obj["year"], int):
        raise DataError("year must be an integer")
    if not isinstance(obj["citation_count"], int) or obj["citation_count"] < 0:
        raise DataError("citation_count must be a non-negative integer")
    refs = obj["references"]
    if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
        raise DataError("references must be a list of ids")
    return PaperRecord(
        id=obj["id"],
        abstract=obj["abstract"],
        domain=str(obj["domain"]),
        year=obj["year"],
        references=tuple(refs),
        citation_count=obj["citation_count"],
    )


def build_graph(records: Iterable[PaperRecord]) -> CitationGraph:
    by_id: dict[str, PaperRecord] = {}
    for r in records:
        if r.id in by_id:
            raise DataError(f"duplicate paper id {r.id!r}")
        by_id[r.id] = r
    graph = CitationGraph(records=by_id)
    graph.cocitations = extract_cocitations(graph)
    return graph


def ingest(path: str | Path) -> tuple[CitationGraph, IngestReport]:
    """Read line-delimited JSON paper records into a citation graph.

    Structurally invalid records are dropped and reported; a duplicate id is
    a hard error.
    """
    report = IngestReport()
    kept: list[PaperRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.rejected.append((f"line {lineno}", f"bad JSON: {exc.msg}"))
                continue
            try:
                kept.append(parse_record(obj))
            except DataError as exc:
                label = obj.get("id", f"line {lineno}") if isinstance(obj, dict) else f"line {lineno}"
                report.rejected.append((str(label), str(exc)))
    graph = build_graph(kept)
    report.accepted = len(graph.records)
    return graph, report


def extract_cocitations(graph: CitationGraph) -> Counter:
    """Unordered pairs of known papers cited together, with multiplicity =
    number of distinct citing papers listing both."""
    counts: Counter = Counter()
    for pid in sorted(graph.records):
        refs = sorted({r for r in graph.records[pid].references if r in graph.records and r != pid})
        for a, b in itertools.combinations(refs, 2):
            counts[_pair_key(a, b)] += 1
    return counts


def eligible_negative_ids(graph: CitationGraph, min_citations: int = 15) -> list[str]:
    return sorted(pid for pid, r in graph.records.items() if r.citation_count >= min_citations)


def _count_eligible_pairs(graph: CitationGraph, ids: list[str], same_domain: bool) -> int:
    if same_domain:
        per_domain = Counter(graph.records[i].domain for i in ids)
        total = sum(n * (n - 1) // 2 for n in per_domain.values())
    else:
        n = len(ids)
        total = n * (n - 1) // 2
    id_set = set(ids)
    blocked = 0
    for (a, b) in graph.cocitations:
        if a in id_set and b in id_set:
            if not same_domain or graph.records[a].domain == graph.records[b].domain:
                blocked += 1
    return total - blocked


def sample_negatives(
    graph: CitationGraph,
    count: int,
    min_citations: int = 15,
    rng: np.random.Generator | None = None,
    same_domain: bool = True,
) -> list[tuple[str, str]]:
    """Uniformly sample ``count`` distinct never-co-cited pairs of papers
    that each have at least ``min_citations`` citations.

    Raises when fewer than ``count`` such pairs exist, reporting the
    achievable maximum. Enumerates the pool when it is small; otherwise
    rejection-samples.
    """
    if rng is None:
        rng = np.random.default_rng()
    if count == 0:
        return []
    ids = eligible_negative_ids(graph, min_citations)
    achievable = _count_eligible_pairs(graph, ids, same_domain)
    if achievable < count:
        raise DataError(
            f"requested {count} negative pairs but only {achievable} exist "
            f"(papers with >= {min_citations} citations, never co-cited)"
        )

    def valid(a: str, b: str) -> bool:
        if same_domain and graph.records[a].domain != graph.records[b].domain:
            return False
        return _pair_key(a, b) not in graph.cocitations

    if achievable <= max(100_000, 4 * count):
        pool = [
            _pair_key(a, b)
            for a, b in itertools.combinations(ids, 2)
            if valid(a, b)
        ]
        idx = rng.choice(len(pool), size=count, replace=False)
        return [pool[i] for i in sorted(idx)]

    chosen: set[tuple[str, str]] = set()
    out: list[tuple[str, str]] = []
    while len(out) < count:
        i, j = rng.integers(0, len(ids), size=2)
        if i == j:
            continue
        key = _pair_key(ids[i], ids[j])
        if key in chosen or not valid(*key):
            continue
        chosen.add(key)
        out.append(key)
    return out


def build_splits(
    cocitations: Counter,
    graph: CitationGraph,
    recent_year: int,
    valid_fraction: float = 0.01,
    rng: np.random.Generator | None = None,
    min_citations: int = 15,
    same_domain: bool = True,
    domain: str | None = None,
) -> PairDataset:
    """Split co-citation pairs into train/validation/test.

    Test takes every distinct pair with a member published in
    ``recent_year``; the rest divide (1 - valid_fraction) : valid_fraction,
    validation receiving at least one pair plus an equal count of sampled
    negatives; train is materialized by multiplicity.
    """
    if not cocitations:
        raise DataError("no co-citation pairs to split")
    if rng is None:
        rng = np.random.default_rng()

    def dom_of(a: str, b: str) -> str:
        if domain is not None:
            return domain
        da, db = graph.records[a].domain, graph.records[b].domain
        return da if da == db else f"{da}+{db}"

    all_pairs = sorted(cocitations)
    test_keys = [
        k for k in all_pairs
        if graph.records[k[0]].year == recent_year or graph.records[k[1]].year == recent_year
    ]
    test_set = set(test_keys)
    remaining = [k for k in all_pairs if k not in test_set]
    if not remaining:
        raise DataError("no pairs left for training after the test-year removal")
    n_valid = max(1, round(valid_fraction * len(remaining)))
    if n_valid >= len(remaining):
        raise DataError(
            f"validation would take all {len(remaining)} non-test pairs, leaving train empty"
        )
    valid_idx = set(rng.choice(len(remaining), size=n_valid, replace=False).tolist())
    valid_keys = [remaining[i] for i in sorted(valid_idx)]
    train_keys = [k for i, k in enumerate(remaining) if i not in valid_idx]

    negatives = sample_negatives(
        graph, len(valid_keys), min_citations=min_citations, rng=rng, same_domain=same_domain
    )

    train = [
        Pair(a, b, 1, cocitations[(a, b)], dom_of(a, b))
        for a, b in train_keys
        for _ in range(cocitations[(a, b)])
    ]
    valid = [Pair(a, b, 1, cocitations[(a, b)], dom_of(a, b)) for a, b in valid_keys]
    valid += [Pair(a, b, 0, 1, dom_of(a, b)) for a, b in negatives]
    test = [Pair(a, b, 1, cocitations[(a, b)], dom_of(a, b)) for a, b in test_keys]
    return PairDataset(train=train, valid=valid, test=test)


def build_dataset(
    graph: CitationGraph,
    recent_year: int,
    valid_fraction: float = 0.01,
    min_citations: int = 15,
    seed: int = 0,
) -> tuple[PairDataset, dict]:
    """Run the per-domain pipeline over every domain in the graph and
    concatenate the splits. Returns the dataset and a stats report."""
    domains = sorted({r.domain for r in graph.records.values()})
    if not domains:
        raise DataError("empty citation graph")
    rng = np.random.default_rng(seed)
    dataset = PairDataset(train=[], valid=[], test=[])
    per_domain: dict[str, dict] = {}
    hist: Counter = Counter()
    distinct_total = 0
    for dom in domains:
        sub = graph.subgraph(dom)
        if not sub.cocitations:
            per_domain[dom] = {"papers": len(sub.records), "distinct_pairs": 0}
            continue
        ds = build_splits(
            sub.cocitations, sub, recent_year,
            valid_fraction=valid_fraction, rng=rng,
            min_citations=min_citations, domain=dom,
        )
        dataset.train.extend(ds.train)
        dataset.valid.extend(ds.valid)
        dataset.test.extend(ds.test)
        for mult in sub.cocitations.values():
            hist[mult] += 1
        distinct_total += len(sub.cocitations)
        per_domain[dom] = {
            "papers": len(sub.records),
            "distinct_pairs": len(sub.cocitations),
            "train": len(ds.train),
            "valid": len(ds.valid),
            "test": len(ds.test),
        }
    if distinct_total == 0:
        raise DataError("no co-citation pairs in any domain")
    stats = {
        "papers": len(graph.records),
        "domains": domains,
        "distinct_pairs": distinct_total,
        "multiplicity_histogram": {str(k): hist[k] for k in sorted(hist)},
        "splits": {
            "train": len(dataset.train),
            "valid": len(dataset.valid),
            "test": len(dataset.test),
        },
        "per_domain": per_domain,
    }
    return dataset, stats


# ------------------------------------------------------------------ file IO

def write_pairs(path: str | Path, pairs: list[Pair]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(f"{p.id_a}\t{p.id_b}\t{p.label}\t{p.weight}\t{p.domain}\n")


def read_pairs(path: str | Path) -> list[Pair]:
    out: list[Pair] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise DataError(f"{path}: line {lineno}: expected 5 tab-separated fields")
            a, b, label, weight, dom = parts
            out.append(Pair(a, b, int(label), int(weight), dom))
    return out


def write_dataset(out_dir: str | Path, dataset: PairDataset, stats: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_pairs(out / "pairs.train", dataset.train)
    write_pairs(out / "pairs.valid", dataset.valid)
    write_pairs(out / "pairs.test", dataset.test)
    (out / "stats.json").write_text(
        json.dumps(stats, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def read_dataset(data_dir: str | Path) -> PairDataset:
    d = Path(data_dir)
    return PairDataset(
        train=read_pairs(d / "pairs.train"),
        valid=read_pairs(d / "pairs.valid"),
        test=read_pairs(d / "pairs.test"),
    )


def write_corpus(path: str | Path, graph: CitationGraph) -> None:
    """Abstracts and domains for every paper, needed to embed pairs later."""
    with open(path, "w", encoding="utf-8") as fh:
        for pid in sorted(graph.records):
            r = graph.records[pid]
            fh.write(json.dumps(
                {"id": r.id, "abstract": r.abstract, "domain": r.domain},
                sort_keys=True,
            ) + "\n")


def read_corpus(path: str | Path) -> dict[str, tuple[str, str]]:
    """id -> (abstract, domain) map written by ``write_corpus``."""
    out: dict[str, tuple[str, str]] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            out[obj["id"]] = (obj["abstract"], obj["domain"])
    return out
