"""Command line entry point: ``curriclab {run,matrix,score,report}``.

Exit codes: 0 success, 1 configuration error, 2 numerical divergence.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from .config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    flat_fields,
    load_config,
)
from .data import load_parallel_text
from .evaluation import corpus_bleu
from .harness import METHOD_ROWS, RunLog, build_task, run_experiment, run_matrix
from .model import NumericalDivergence
from .reports import (
    DEFAULT_BUCKETS,
    parse_buckets,
    report_avg_loss,
    report_curves,
    report_length_buckets,
    slug,
    write_csv,
)

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2


def _add_config_flags(parser):
    parser.add_argument("--config", help="YAML experiment config")
    group = parser.add_argument_group("config overrides")
    for name, f in flat_fields():
        group.add_argument(f"--{name}", dest=f"cfg::{name}", metavar=f.name.upper(), default=None)


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k.split("::", 1)[1]: v for k, v in vars(args).items() if k.startswith("cfg::") and v is not None}
    return apply_overrides(cfg, overrides)


def _write_reports(logs, test_corpus, out, buckets):
    report_curves(logs, out)
    report_avg_loss(logs, out)
    for run in logs:
        rows = report_length_buckets(run, test_corpus, buckets)
        write_csv(rows, Path(out) / f"length_buckets_{slug(run.method)}.csv")


def cmd_run(args) -> int:
    cfg = _resolve_config(args).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    data = build_task(cfg.task, cfg.seed)
    run = run_experiment(cfg, log_path=out / "run.jsonl", checkpoint_path=out / "checkpoint.npz", data=data)
    _write_reports([run], data[2], out, parse_buckets(args.buckets) if args.buckets else DEFAULT_BUCKETS)
    print(f"{run.method}: best dev BLEU {run.final['best_dev_bleu']:.2f}, "
          f"test BLEU {run.final['test_bleu']:.2f} after {run.final['phases_run']} phases "
          f"({run.final['total_steps']} steps)")
    return EXIT_OK


def cmd_matrix(args) -> int:
    cfg = _resolve_config(args)
    rows = METHOD_ROWS
    if args.rows:
        rows = [tuple(r) for r in yaml.safe_load(Path(args.rows).read_text())]
    out = Path(args.out)
    result = run_matrix(cfg, rows, out_dir=out)
    write_csv(result.table, out / "table.csv")
    data = build_task(cfg.task, cfg.seed)
    _write_reports(result.logs, data[2], out, parse_buckets(args.buckets) if args.buckets else DEFAULT_BUCKETS)
    width = max(len(r["method"]) for r in result.table)
    for r in result.table:
        print(f"{r['method']:<{width}}  test {r['test_bleu']:6.2f}  dev {r['best_dev_bleu']:6.2f}  steps {r['total_steps']}")
    return EXIT_OK


def cmd_score(args) -> int:
    tok = args.tokenizer
    corpus = load_parallel_text(args.hyp, args.ref, tok)
    hyps = [corpus.source_vocab.decode(s.source) for s in corpus]
    refs = [corpus.target_vocab.decode(s.target) for s in corpus]
    report = corpus_bleu(hyps, refs)
    print(json.dumps(report.to_dict(), indent=2) if args.json else str(report))
    return EXIT_OK


def cmd_report(args) -> int:
    logs = [RunLog.read(p) for p in args.logs]
    out = Path(args.out)
    report_curves(logs, out)
    report_avg_loss(logs, out)
    if not args.no_buckets:
        buckets = parse_buckets(args.buckets) if args.buckets else DEFAULT_BUCKETS
        for run in logs:
            cfg = config_from_dict(run.config)
            test = build_task(cfg.task, cfg.seed)[2]
            write_csv(report_length_buckets(run, test, buckets), out / f"length_buckets_{slug(run.method)}.csv")
    print(f"wrote reports for {len(logs)} run(s) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="curriclab", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    _add_config_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument("--buckets", help="source-length bucket edges, e.g. 0,5,10,15")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("matrix", help="baseline plus method rows")
    _add_config_flags(p)
    p.add_argument("--rows", help="YAML list of [metric, schedule, batching]; default: the 9 standard method rows")
    p.add_argument("--out", required=True)
    p.add_argument("--buckets")
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("score", help="corpus BLEU of a hypothesis file against a reference file")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--tokenizer", default="whitespace", choices=["whitespace", "char"])
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("report", help="CSV reports from run logs")
    p.add_argument("logs", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--buckets")
    p.add_argument("--no-buckets", action="store_true", help="skip the decoding-based length-bucket table")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalDivergence as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
