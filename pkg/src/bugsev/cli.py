"""Command-line entry point: ``bugsev {ingest,train,evaluate,benchmark,predict,synth}``.

Exit codes: 0 ok, 1 partial benchmark failure, 2 usage (bad flags, unknown or
out-of-scope model, missing column, bad config), 3 data (parse errors,
degenerate corpus), 4 artifact checksum mismatch, 5 unsupported artifact
version.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Sequence

from bugsev import __version__
from bugsev.artifact import atomic_write_text, load_model, save_model
from bugsev.config import MODEL_KINDS, RunConfig, load_config
from bugsev.corpus import BugReport, Corpus, Severity, parse_csv, read_jsonl, split_indices, write_jsonl
from bugsev.errors import (
    ArtifactError,
    BugsevError,
    ChecksumError,
    ConfigError,
    DegenerateError,
    SchemaError,
    StratificationError,
    VersionError,
)
from bugsev.evaluation import benchmark, evaluate, report_json, report_markdown
from bugsev.models import train
from bugsev.seeding import derive_seed

EXIT_OK = 0
EXIT_PARTIAL = 1
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_CHECKSUM = 4
EXIT_VERSION = 5

log = logging.getLogger("bugsev")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, VersionError):
        return EXIT_VERSION
    if isinstance(exc, (ChecksumError, ArtifactError)):
        return EXIT_CHECKSUM
    if isinstance(exc, (SchemaError, ConfigError)):
        return EXIT_USAGE
    return EXIT_DATA


def _print_json(obj) -> None:
    print(json.dumps(obj, sort_keys=True))


def _load_corpus(path: str, config: RunConfig) -> Corpus:
    if Path(path).suffix.lower() == ".csv":
        return parse_csv(path, policy=config.severity_policy, numeric_columns=config.numeric_columns)
    return read_jsonl(path)


def _config(args) -> RunConfig:
    config = load_config(getattr(args, "config", None))
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "folds", None) is not None:
        overrides["folds"] = args.folds
    return config.with_overrides(**overrides) if overrides else config


def cmd_ingest(args) -> int:
    config = _config(args)
    schema = None
    if args.schema:
        try:
            schema = json.loads(Path(args.schema).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read schema {args.schema}: {exc}") from None
    corpus = parse_csv(args.input, schema, config.severity_policy, config.numeric_columns)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(corpus, out)
    ledger_path = Path(args.ledger) if args.ledger else out.with_name(out.name + ".ledger.json")
    ledger = dict(corpus.provenance)
    counts = corpus.class_counts()
    ledger["class_counts"] = {c.name: n for c, n in counts.items()}
    ledger["prevalence_high"] = corpus.prevalence()
    atomic_write_text(ledger_path, json.dumps(ledger, indent=2, sort_keys=True) + "\n")
    p = corpus.provenance
    print(f"rows: total={p['total_rows']} kept={len(corpus)} excluded={p['excluded_rows']}")
    print(f"HIGH={counts[Severity.HIGH]} LOW={counts[Severity.LOW]} prevalence(HIGH)={100 * corpus.prevalence():.2f}%")
    if len(corpus) == 0:
        print("warning: corpus is empty", file=sys.stderr)
    elif corpus.degenerate:
        print("warning: corpus has a single class (degenerate)", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    config = _config(args)
    corpus = _load_corpus(args.corpus, config)
    if corpus.degenerate:
        raise DegenerateError("corpus needs both HIGH and LOW rows")
    train_idx, test_idx = split_indices(corpus.labels, config.test_fraction, derive_seed(config.seed, "split"))
    model = train(corpus.subset(train_idx), args.model, config, context="train")
    save_model(model, args.out, config.to_dict(), config.severity_policy)
    result = {"model": args.model, "artifact": str(args.out), "train_rows": len(train_idx), "test_rows": len(test_idx)}
    if len(test_idx):
        m = evaluate(model, corpus.subset(test_idx))
        result["metrics"] = asdict(m)
    _print_json(result)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = load_model(args.artifact)
    corpus = _load_corpus(args.corpus, RunConfig())
    if len(corpus) == 0:
        raise DegenerateError("nothing to evaluate: corpus is empty")
    m = evaluate(model, corpus)
    _print_json({"model": model.kind, "rows": len(corpus), "metrics": asdict(m)})
    return EXIT_OK


def cmd_benchmark(args) -> int:
    config = _config(args)
    corpus = _load_corpus(args.corpus, config)
    report = benchmark(corpus, config)
    out = Path(args.out)
    atomic_write_text(out, report_json(report))
    md_path = Path(args.markdown) if args.markdown else out.with_suffix(".md")
    table = report_markdown(report)
    atomic_write_text(md_path, table)
    print(table, end="")
    failed = [k for k, m in report["models"].items() if m.get("status") != "ok"]
    if failed:
        print(f"failed models: {', '.join(failed)}", file=sys.stderr)
        return EXIT_PARTIAL
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.artifact)
    report = BugReport(
        project="",
        bug_id=0,
        resolution_status="",
        short_description=args.text,
        bug_type=args.bug_type or None,
        priority_label=args.priority or None,
        raw_severity="",
    )
    p = float(model.predict_proba([report])[0])
    label = Severity.HIGH if p >= 0.5 else Severity.LOW
    _print_json({"label": label.name, "probability": p, "model": model.kind})
    return EXIT_OK


def cmd_synth(args) -> int:
    from bugsev.synth import synthetic_corpus, write_csv

    corpus = synthetic_corpus(args.n_high, args.n_low, seed=args.seed, signal=args.signal)
    write_csv(corpus, args.out)
    print(f"wrote {len(corpus)} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bugsev", description="Bug-report severity prediction toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse a bug-report CSV into the canonical JSONL corpus")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--schema", help="JSON object mapping field names to CSV headers")
    p.add_argument("--ledger", help="exclusion ledger path (default: <out>.ledger.json)")
    p.add_argument("--config", help="run config JSON (severity policy, numeric columns)")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="fit one model on the training split and save an artifact")
    p.add_argument("--corpus", required=True, help="JSONL corpus (or raw CSV)")
    p.add_argument("--model", required=True, help=f"one of: {', '.join(MODEL_KINDS)}")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a labelled corpus")
    p.add_argument("--artifact", required=True)
    p.add_argument("--corpus", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="run all configured models and write JSON + Markdown reports")
    p.add_argument("--corpus", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--markdown", help="Markdown table path (default: report path with .md)")
    p.add_argument("--folds", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("predict", help="predict severity for one report")
    p.add_argument("--artifact", required=True)
    p.add_argument("--text", required=True)
    p.add_argument("--bug-type")
    p.add_argument("--priority")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("synth", help="write a synthetic bug-report CSV")
    p.add_argument("--out", required=True)
    p.add_argument("--n-high", type=int, default=128)
    p.add_argument("--n-low", type=int, default=872)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", type=float, default=1.0)
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BugsevError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exit_code_for(exc)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
