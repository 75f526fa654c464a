"""
Build a co-citation pair dataset from a citation corpus
=======================================================

Two papers cited together by the same later paper tend to say related
things. This script generates a small synthetic citation corpus, counts
those co-citation events, and splits them into train/valid/test pair
files, first through the library and then through the `cocite` CLI.
"""

import json
import tempfile
from pathlib import Path

from cocite.cli import main
from cocite.pipeline import build_dataset, extract_cocitations, ingest, sample_negatives
from cocite.synthetic import CorpusSpec, generate_records, write_records_file

out = Path(tempfile.mkdtemp(prefix="cocite-demo-"))
print("working in", out)

# A toy corpus: two domains, three topic clusters each. Foundational papers
# are heavily cited; citing papers reference a few foundational papers from
# their own cluster, which is what creates co-citation pairs.
spec = CorpusSpec(
    clusters_per_domain=3, foundational_per_cluster=5, citing_per_cluster=8,
    refs_per_citing=3, topic_words_per_cluster=12, topic_words_per_abstract=3,
    common_words=30, common_words_per_abstract=4, noise_words=100,
    noise_words_per_abstract=3, seed=1,
)
records = generate_records(spec)
records_path = out / "records.jsonl"
write_records_file(records_path, records)
print(f"{len(records)} paper records written")

# Library route: ingest the jsonl, count co-citations, sample negatives.
graph, rep = ingest(records_path)
print(f"ingested {rep.accepted} records, {len(rep.rejected)} rejected")
cocit = extract_cocitations(graph)
print(f"{len(cocit)} distinct co-cited pairs, {sum(cocit.values())} citation events")
top = cocit.most_common(3)
for (a, b), n in top:
    print(f"  {a} + {b} cited together {n}x")

# Negatives are never-co-cited pairs of well-cited papers, same domain.
negs = sample_negatives(graph, 4, min_citations=15)
print("sample negatives:", negs)

dataset, stats = build_dataset(graph, recent_year=spec.recent_year, valid_fraction=0.05, seed=0)
print("split sizes:", stats["splits"])
print("a train pair:", dataset.train[0])

# CLI route: same pipeline behind one command. The directory it fills is
# what `cocite train` and `cocite evaluate` consume.
code = main(["build-dataset", "--records", str(records_path),
             "--out-dir", str(out / "data"), "--recent-year", str(spec.recent_year),
             "--valid-fraction", "0.05", "--seed", "0"])
print("cli exit code", code)
stats2 = json.loads((out / "data" / "stats.json").read_text())
assert stats2["splits"] == stats["splits"]
print("cli wrote:", sorted(p.name for p in (out / "data").iterdir()))
