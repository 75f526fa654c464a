"""Command-line interface.

Subcommands: build-dataset, extend, train, evaluate, embed. Options can
come from a JSON config file (--config); explicit flags win over config
values, which win over defaults. Every run writes a resolved_config.json
snapshot beside its outputs so it can be replayed exactly.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint, evaluation, moe, pipeline
from .config import (
    ConfigError,
    Granularity,
    ModelConfig,
    MoEConfig,
    RoutingStrategy,
    Scheduler,
    TrainConfig,
    middle_block,
)
from .encoder import Model, ShapeError
from .evaluation import EvalMode
from .trainer import Trainer
from .vocab import UnknownDomainError, build_vocabulary

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4

DATA_DIR_ENV = "COCITE_DATA_DIR"


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path}: invalid JSON: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise ConfigError(f"config file {path}: expected a JSON object")
    return obj


def _resolve(args: argparse.Namespace, keys: list[str]) -> dict:
    """Defaults < config file < explicit flags. Flags parse with default
    None so an unset flag defers to the config file."""
    cfg_file = _load_config_file(getattr(args, "config", None))
    unknown = set(cfg_file) - set(keys)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    resolved = dict(cfg_file)
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            resolved[k] = v
    return resolved


def _write_snapshot(target: Path, command: str, resolved: dict) -> None:
    snap = {"command": command}
    for k, v in sorted(resolved.items()):
        snap[k] = str(v) if isinstance(v, Path) else v
    if target.is_dir():
        out = target / "resolved_config.json"
    else:
        out = target.parent / (target.name + ".resolved_config.json")
    out.write_text(json.dumps(snap, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _data_dir(resolved: dict) -> Path:
    d = resolved.get("data_dir") or os.environ.get(DATA_DIR_ENV)
    if not d:
        raise ConfigError(f"no data directory: pass --data-dir or set {DATA_DIR_ENV}")
    return Path(d)


# ------------------------------------------------------------- build-dataset

BUILD_KEYS = ["records", "out_dir", "recent_year", "valid_fraction", "min_citations", "seed"]


def cmd_build_dataset(args: argparse.Namespace) -> int:
    resolved = _resolve(args, BUILD_KEYS)
    for req in ("records", "out_dir", "recent_year"):
        if req not in resolved:
            raise ConfigError(f"build-dataset requires {req}")
    resolved.setdefault("valid_fraction", 0.01)
    resolved.setdefault("min_citations", 15)
    resolved.setdefault("seed", 0)
    graph, report = pipeline.ingest(resolved["records"])
    if not graph.records:
        raise pipeline.DataError(f"no valid records in {resolved['records']}")
    dataset, stats = pipeline.build_dataset(
        graph,
        recent_year=int(resolved["recent_year"]),
        valid_fraction=float(resolved["valid_fraction"]),
        min_citations=int(resolved["min_citations"]),
        seed=int(resolved["seed"]),
    )
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    pipeline.write_dataset(out_dir, dataset, stats)
    pipeline.write_corpus(out_dir / "corpus.jsonl", graph)
    _write_snapshot(out_dir, "build-dataset", resolved)
    print(f"accepted {report.accepted} records, rejected {len(report.rejected)}")
    for label, reason in report.rejected[:10]:
        print(f"  rejected {label}: {reason}")
    print(
        f"splits: train {stats['splits']['train']}, valid {stats['splits']['valid']}, "
        f"test {stats['splits']['test']} ({stats['distinct_pairs']} distinct pairs)"
    )
    return EXIT_OK


# -------------------------------------------------------------------- extend

EXTEND_KEYS = [
    "base", "out", "num_experts", "granularity", "top_k", "strategy",
    "extended_layers", "single_middle_layer", "mi_loss_weight",
    "domain_to_expert", "seed",
]


def _parse_domain_map(value) -> dict[str, int] | None:
    if value is None:
        return None
    if isinstance(value, dict):
        return {str(k): int(v) for k, v in value.items()}
    out: dict[str, int] = {}
    for part in str(value).split(","):
        part = part.strip()
        if not part:
            continue
        if "=" not in part:
            raise ConfigError(f"bad domain mapping {part!r}, expected name=index")
        name, idx = part.split("=", 1)
        out[name.strip()] = int(idx)
    return out


def _parse_layers(value) -> tuple[int, ...] | None:
    if value is None:
        return None
    if isinstance(value, (list, tuple)):
        return tuple(int(v) for v in value)
    return tuple(int(p) for p in str(value).split(",") if p.strip())


def cmd_extend(args: argparse.Namespace) -> int:
    resolved = _resolve(args, EXTEND_KEYS)
    for req in ("base", "out", "num_experts"):
        if req not in resolved:
            raise ConfigError(f"extend requires {req}")
    base, _ = checkpoint.load_model(resolved["base"])
    layers = _parse_layers(resolved.get("extended_layers"))
    if resolved.get("single_middle_layer"):
        if layers is not None:
            raise ConfigError("give either extended_layers or single_middle_layer, not both")
        layers = (middle_block(base.cfg.num_blocks),)
    if layers is None:
        layers = tuple(range(base.cfg.num_blocks))
    moe_cfg = MoEConfig(
        num_experts=int(resolved["num_experts"]),
        granularity=Granularity(resolved.get("granularity", "sentence")),
        top_k=int(resolved.get("top_k", 1)),
        strategy=RoutingStrategy(resolved.get("strategy", "enforced")),
        extended_layers=layers,
        mi_loss_weight=float(resolved.get("mi_loss_weight", 1.0)),
        domain_to_expert=_parse_domain_map(resolved.get("domain_to_expert")),
    )
    extended = moe.extend_model(base, moe_cfg, seed=int(resolved.get("seed", 0)))
    out = Path(resolved["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint.save_model(out, extended)
    _write_snapshot(out, "extend", resolved)
    base_total = moe.count_params(base.params)
    stored = moe.count_params(extended.params)
    effective = moe.effective_param_count(extended)
    print(f"base parameters:      {base_total}")
    print(f"stored parameters:    {stored}")
    print(f"effective parameters: {effective}")
    return EXIT_OK


# --------------------------------------------------------------------- train

TRAIN_KEYS = [
    "data_dir", "out_dir", "init_checkpoint", "resume",
    "vocab_size", "hidden_dim", "intermediate_dim", "num_blocks", "num_heads",
    "max_seq_len", "activation",
    "batch_size", "learning_rate", "scheduler", "warmup_steps", "max_epochs",
    "validate_every", "patience", "router_ce_weight", "seed",
]


def _train_config(resolved: dict) -> TrainConfig:
    kwargs = {}
    for f in (
        "batch_size", "learning_rate", "warmup_steps", "max_epochs",
        "validate_every", "patience", "router_ce_weight", "seed",
    ):
        if f in resolved:
            kwargs[f] = resolved[f]
    if "scheduler" in resolved:
        kwargs["scheduler"] = Scheduler(resolved["scheduler"])
    return TrainConfig(**kwargs)


def cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve(args, TRAIN_KEYS)
    if "out_dir" not in resolved:
        raise ConfigError("train requires out_dir")
    data_dir = _data_dir(resolved)
    out_dir = Path(resolved["out_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset = pipeline.read_dataset(data_dir)
    documents = pipeline.read_corpus(data_dir / "corpus.jsonl")
    train_cfg = _train_config(resolved)

    if resolved.get("resume"):
        restored, _ = checkpoint.load_model(resolved["resume"])
        trainer = Trainer(restored, train_cfg, documents, out_dir=out_dir)
        trainer.restore(resolved["resume"])
    else:
        if resolved.get("init_checkpoint"):
            model, _ = checkpoint.load_model(resolved["init_checkpoint"])
        else:
            domains = sorted({dom for _, dom in documents.values()})
            vocab = build_vocabulary(
                (text for text, _ in documents.values()),
                vocab_size=int(resolved.get("vocab_size", 8000)),
                domains=domains,
            )
            model_cfg = ModelConfig(
                vocab_size=len(vocab.tokens),
                hidden_dim=int(resolved.get("hidden_dim", 64)),
                intermediate_dim=int(resolved.get("intermediate_dim", 256)),
                num_blocks=int(resolved.get("num_blocks", 2)),
                num_heads=int(resolved.get("num_heads", 2)),
                max_seq_len=int(resolved.get("max_seq_len", 64)),
            )
            model = Model.fresh(model_cfg, vocab, seed=train_cfg.seed)
        trainer = Trainer(model, train_cfg, documents, out_dir=out_dir)
    result = trainer.fit(dataset.train, dataset.valid)

    report = evaluation.evaluate_model(
        result.model, dataset.valid, documents, EvalMode.VALIDATION
    )
    (out_dir / "report.valid.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_snapshot(out_dir, "train", resolved)
    print(evaluation.format_report_table({"VALID": report}))
    print(
        f"best F1max {result.best_f1max:.4f} at step {result.best_step} "
        f"({result.steps} steps total)"
    )
    return EXIT_OK


# ------------------------------------------------------------------ evaluate

EVAL_KEYS = ["model", "data_dir", "split", "mode", "out", "vocab_size"]


def cmd_evaluate(args: argparse.Namespace) -> int:
    resolved = _resolve(args, EVAL_KEYS)
    for req in ("model", "out"):
        if req not in resolved:
            raise ConfigError(f"evaluate requires {req}")
    data_dir = _data_dir(resolved)
    split = resolved.get("split", "valid")
    split_path = Path(split) if Path(split).exists() else data_dir / f"pairs.{split}"
    if not split_path.exists():
        raise pipeline.DataError(f"split file not found: {split_path}")
    pairs = pipeline.read_pairs(split_path)
    documents = pipeline.read_corpus(data_dir / "corpus.jsonl")
    default_mode = "test" if split == "test" else "validation"
    mode = EvalMode(resolved.get("mode", default_mode))

    if str(resolved["model"]).lower() == "tfidf":
        domains = sorted({dom for _, dom in documents.values()})
        vocab = build_vocabulary(
            (text for text, _ in documents.values()),
            vocab_size=int(resolved.get("vocab_size", 30000)),
            domains=domains,
        )
        texts = {pid: text for pid, (text, _) in documents.items()}
        scored = evaluation.tfidf_baseline(texts, pairs, vocab)
        report = evaluation.score_report(scored, mode)
        name = "TF-IDF"
    else:
        model, _ = checkpoint.load_model(resolved["model"])
        report = evaluation.evaluate_model(model, pairs, documents, mode)
        name = Path(str(resolved["model"])).stem
    out = Path(resolved["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _write_snapshot(out, "evaluate", resolved)
    print(evaluation.format_report_table({name: report}))
    return EXIT_OK


# --------------------------------------------------------------------- embed

EMBED_KEYS = ["model", "input", "domain", "out", "batch_size"]


def cmd_embed(args: argparse.Namespace) -> int:
    resolved = _resolve(args, EMBED_KEYS)
    for req in ("model", "input", "out"):
        if req not in resolved:
            raise ConfigError(f"embed requires {req}")
    model, _ = checkpoint.load_model(resolved["model"])
    domain = resolved.get("domain")
    if domain is not None:
        model.vocab.domain_token_id(domain)
    texts = [
        line.rstrip("\n")
        for line in Path(resolved["input"]).read_text(encoding="utf-8").splitlines()
    ]
    texts = [t for t in texts if t.strip()]
    if not texts:
        raise pipeline.DataError(f"no abstracts in {resolved['input']}")
    vectors = model.embed_texts(
        texts, [domain] * len(texts), batch_size=int(resolved.get("batch_size", 64))
    )
    out = Path(resolved["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for row in vectors:
            fh.write(" ".join(f"{x:.8e}" for x in row) + "\n")
    _write_snapshot(out, "embed", resolved)
    print(f"wrote {vectors.shape[0]} vectors of length {vectors.shape[1]} to {out}")
    return EXIT_OK


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cocite",
        description="Co-citation sentence-embedding toolkit: datasets, training, "
        "mixture-of-experts extension, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="build pair splits from a citation records file")
    p.add_argument("--records", help="line-delimited JSON paper records")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--recent-year", dest="recent_year", type=int)
    p.add_argument("--valid-fraction", dest="valid_fraction", type=float)
    p.add_argument("--min-citations", dest="min_citations", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="JSON config file; flags win on conflict")
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("extend", help="extend a dense checkpoint into a mixture of experts")
    p.add_argument("--base", help="dense model checkpoint")
    p.add_argument("--out")
    p.add_argument("--num-experts", dest="num_experts", type=int)
    p.add_argument("--granularity", choices=[g.value for g in Granularity])
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--strategy", choices=[s.value for s in RoutingStrategy])
    p.add_argument("--extended-layers", dest="extended_layers",
                   help="comma-separated block indices (default: all)")
    p.add_argument("--single-middle-layer", dest="single_middle_layer",
                   action="store_const", const=True,
                   help="extend only the middle block")
    p.add_argument("--mi-loss-weight", dest="mi_loss_weight", type=float)
    p.add_argument("--domain-to-expert", dest="domain_to_expert",
                   help="e.g. 'cvd=0,copd=1' (needed for enforced routing)")
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_extend)

    p = sub.add_parser("train", help="train a model on built pair splits")
    p.add_argument("--data-dir", dest="data_dir", help=f"default ${DATA_DIR_ENV}")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--init-checkpoint", dest="init_checkpoint",
                   help="start from these weights (e.g. an extended model)")
    p.add_argument("--resume", help="continue a run from its last.ckpt")
    p.add_argument("--vocab-size", dest="vocab_size", type=int)
    p.add_argument("--hidden-dim", dest="hidden_dim", type=int)
    p.add_argument("--intermediate-dim", dest="intermediate_dim", type=int)
    p.add_argument("--num-blocks", dest="num_blocks", type=int)
    p.add_argument("--num-heads", dest="num_heads", type=int)
    p.add_argument("--max-seq-len", dest="max_seq_len", type=int)
    p.add_argument("--activation", choices=["gelu", "relu"])
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--scheduler", choices=[s.value for s in Scheduler])
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--max-epochs", dest="max_epochs", type=int)
    p.add_argument("--validate-every", dest="validate_every", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--router-ce-weight", dest="router_ce_weight", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint or the tf-idf baseline on a split")
    p.add_argument("--model", help="checkpoint path, or 'tfidf'")
    p.add_argument("--data-dir", dest="data_dir", help=f"default ${DATA_DIR_ENV}")
    p.add_argument("--split", help="train | valid | test, or a pairs file path")
    p.add_argument("--mode", choices=[m.value for m in EvalMode])
    p.add_argument("--out", help="report JSON path")
    p.add_argument("--vocab-size", dest="vocab_size", type=int,
                   help="vocabulary budget for the tf-idf baseline")
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("embed", help="embed abstracts, one vector per input line")
    p.add_argument("--model", help="checkpoint path")
    p.add_argument("--input", help="file with one abstract per line")
    p.add_argument("--domain", help="domain token to prepend")
    p.add_argument("--out")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (
        pipeline.DataError,
        checkpoint.CheckpointError,
        evaluation.EvaluationError,
        UnknownDomainError,
        ShapeError,
        FileNotFoundError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
