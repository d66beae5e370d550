"""Command-line entry point.

Subcommands mirror the benchmark phases: ingest, bench, report, plus
plan inspection, corpus export, and a full end-to-end run (all).

Configuration comes from a JSON file of flat key paths (e.g.
"corpus.n_records", "runs_per_setup") with a CLI flag twin for every
key; flags override file values. The exit code is 0 on success, 1 for
configuration errors, 2 for run failures, 3 for I/O errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .broker import LogBroker, TopicConfig
from .corpus import CorpusSpec, generate_corpus, write_corpus
from .harness import (
    INPUT_TOPIC,
    BenchmarkConfig,
    build_slowdown_report,
    emit_report,
    phase_execute,
    phase_ingest,
    read_results_csv,
    write_results_csv,
)
from .microbatch import BatchPolicy
from .plan import plan_to_text
from .queries import ApiKind, EngineKind, QueryKind, build_query
from .harness import Setup

OUTPUT_DIR_ENV = "STREAMLAB_OUTPUT_DIR"

DESK_SCALE_RECORDS = 10_001
PAPER_SCALE_RECORDS = 1_000_001


class ConfigError(Exception):
    pass


def _parse_int_list(value: str) -> list[int]:
    return [int(v) for v in value.split(",") if v]


def _parse_str_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


CONFIG_KEYS = frozenset({
    "corpus.n_records",
    "corpus.grep_needle",
    "corpus.grep_match_count",
    "corpus.rng_seed",
    "runs_per_setup",
    "parallelisms",
    "engines",
    "api_kinds",
    "queries",
    "batch_policy.max_batch_size",
    "batch_policy.max_batch_delay_ms",
    "output_dir",
    "warmup",
})


def load_config_file(path: Path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    return data


def _flag_overrides(args: argparse.Namespace) -> dict:
    mapping = {
        "corpus.n_records": args.corpus_n_records,
        "corpus.grep_needle": args.corpus_grep_needle,
        "corpus.grep_match_count": args.corpus_grep_match_count,
        "corpus.rng_seed": args.corpus_rng_seed,
        "runs_per_setup": args.runs,
        "parallelisms": args.parallelisms,
        "engines": args.engines,
        "api_kinds": args.api_kinds,
        "queries": args.queries,
        "batch_policy.max_batch_size": args.batch_max_size,
        "batch_policy.max_batch_delay_ms": args.batch_max_delay_ms,
        "output_dir": args.output_dir,
        "warmup": args.warmup,
    }
    overrides = {k: v for k, v in mapping.items() if v is not None}
    if getattr(args, "paper_scale", False):
        overrides["corpus.n_records"] = PAPER_SCALE_RECORDS
    return overrides


def build_benchmark_config(args: argparse.Namespace) -> BenchmarkConfig:
    values: dict = {}
    if args.config:
        values.update(load_config_file(args.config))
    env_out = os.environ.get(OUTPUT_DIR_ENV)
    if env_out:
        values["output_dir"] = env_out
    values.update(_flag_overrides(args))
    return _config_from_values(values, Path(values.get("output_dir", "bench-out")))


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file (flat key paths)")
    parser.add_argument("--corpus-n-records", type=int, dest="corpus_n_records")
    parser.add_argument("--corpus-grep-needle", dest="corpus_grep_needle")
    parser.add_argument("--corpus-grep-match-count", type=int, dest="corpus_grep_match_count")
    parser.add_argument("--corpus-rng-seed", type=int, dest="corpus_rng_seed")
    parser.add_argument("--runs", type=int, help="runs per setup")
    parser.add_argument("--parallelisms", type=_parse_int_list)
    parser.add_argument("--engines", type=_parse_str_list)
    parser.add_argument("--api-kinds", type=_parse_str_list, dest="api_kinds")
    parser.add_argument("--queries", type=_parse_str_list)
    parser.add_argument("--batch-max-size", type=int, dest="batch_max_size")
    parser.add_argument("--batch-max-delay-ms", type=int, dest="batch_max_delay_ms")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--warmup", type=int)
    parser.add_argument("--paper-scale", action="store_true",
                        help="use the full-scale record count (1,000,001)")


def cmd_ingest(args) -> int:
    config = build_benchmark_config(args)
    broker = LogBroker()
    summary = phase_ingest(config, broker)
    print(f"ingested {summary.count} records into topic {INPUT_TOPIC!r} "
          f"(append ts {summary.first_ts}..{summary.last_ts})")
    return 0


def _write_bench_artifacts(config, outcome) -> None:
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_csv(outcome.results, out_dir / "results.csv")
    (out_dir / "metadata.json").write_text(
        json.dumps({"config": config.config_dict(),
                    "config_hash": config.config_hash()}, indent=2, sort_keys=True)
    )
    plans_dir = out_dir / "plans"
    plans_dir.mkdir(exist_ok=True)
    for slug in sorted(outcome.plans):
        (plans_dir / f"plan-{slug}.txt").write_text(plan_to_text(outcome.plans[slug]))


def _print_failures(failures) -> None:
    print(f"{len(failures)} setup(s) failed:", file=sys.stderr)
    print(f"{'setup':<40} {'run':<8} error", file=sys.stderr)
    for f in failures:
        print(f"{f.setup.slug():<40} {f.run_label:<8} {f.error}", file=sys.stderr)


def cmd_bench(args) -> int:
    config = build_benchmark_config(args)
    broker = LogBroker()
    phase_ingest(config, broker)
    outcome = phase_execute(config, broker)
    _write_bench_artifacts(config, outcome)
    print(f"wrote {len(outcome.results)} run results to {config.output_dir}/results.csv")
    if outcome.failures:
        _print_failures(outcome.failures)
        return 2
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.dir)
    results_path = out_dir / "results.csv"
    metadata_path = out_dir / "metadata.json"
    if not results_path.exists() or not metadata_path.exists():
        raise ConfigError(
            f"{out_dir} does not contain bench output (results.csv, metadata.json)"
        )
    results = read_results_csv(results_path)
    file_config = json.loads(metadata_path.read_text())["config"]
    config = _config_from_values(file_config, out_dir)
    report = build_slowdown_report(config, results)
    written = emit_report(report, results, out_dir)
    print(f"wrote {', '.join(str(p) for p in written)}")
    return 0


def _config_from_values(values: dict, out_dir: Path) -> BenchmarkConfig:
    unknown = sorted(set(values) - set(CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return BenchmarkConfig(
            corpus_spec=CorpusSpec(
                n_records=int(values.get("corpus.n_records", DESK_SCALE_RECORDS)),
                grep_needle=str(values.get("corpus.grep_needle", "test")),
                grep_match_count=values.get("corpus.grep_match_count"),
                rng_seed=int(values.get("corpus.rng_seed", CorpusSpec(1).rng_seed)),
            ),
            runs_per_setup=int(values.get("runs_per_setup", 10)),
            parallelisms=tuple(int(p) for p in values.get("parallelisms", (1, 2))),
            engines=tuple(EngineKind(e) for e in values.get("engines",
                          ("tuple", "microbatch"))),
            api_kinds=tuple(ApiKind(a) for a in values.get("api_kinds",
                            ("native", "unified"))),
            queries=tuple(QueryKind(q) for q in values.get("queries",
                          ("identity", "sample", "projection", "grep"))),
            batch_policy=BatchPolicy(
                max_batch_size=int(values.get("batch_policy.max_batch_size", 1000)),
                max_batch_delay_ms=int(values.get("batch_policy.max_batch_delay_ms", 100)),
            ),
            output_dir=out_dir,
            warmup=int(values.get("warmup", 0)),
        )
    except (ValueError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def cmd_plan(args) -> int:
    try:
        query = QueryKind(args.query)
        api_kind = ApiKind(args.api_kind)
        engine = EngineKind(args.engine)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if args.parallelism < 1:
        raise ConfigError("parallelism must be >= 1")
    broker = LogBroker()
    broker.create_topic(TopicConfig(INPUT_TOPIC))
    setup = Setup(engine, api_kind, query, args.parallelism)
    job = build_query(
        BenchmarkConfig(corpus_spec=CorpusSpec(1)).query_spec(query),
        api_kind,
        engine,
        broker=broker,
        source_topic=INPUT_TOPIC,
        end_offset=0,
        sink_topic=f"out-{setup.slug()}",
        parallelism=args.parallelism,
    )
    sys.stdout.write(plan_to_text(job.plan))
    return 0


def cmd_all(args) -> int:
    config = build_benchmark_config(args)
    broker = LogBroker()
    phase_ingest(config, broker)
    outcome = phase_execute(config, broker)
    _write_bench_artifacts(config, outcome)
    report = build_slowdown_report(config, outcome.results)
    emit_report(report, outcome.results, config.output_dir, plans=outcome.plans)
    print(f"benchmark complete: {len(outcome.results)} runs, "
          f"report in {config.output_dir}")
    if outcome.failures:
        _print_failures(outcome.failures)
        return 2
    return 0


def cmd_corpus_export(args) -> int:
    values: dict = {}
    if args.spec:
        values = load_config_file(args.spec)
        non_corpus = sorted(k for k in values if not k.startswith("corpus."))
        if non_corpus:
            raise ConfigError(f"corpus spec only accepts corpus.* keys, got: "
                              f"{', '.join(non_corpus)}")
    overrides = {
        "corpus.n_records": args.corpus_n_records,
        "corpus.grep_needle": args.corpus_grep_needle,
        "corpus.grep_match_count": args.corpus_grep_match_count,
        "corpus.rng_seed": args.corpus_rng_seed,
    }
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        spec = CorpusSpec(
            n_records=int(values.get("corpus.n_records", DESK_SCALE_RECORDS)),
            grep_needle=str(values.get("corpus.grep_needle", "test")),
            grep_match_count=values.get("corpus.grep_match_count"),
            rng_seed=int(values.get("corpus.rng_seed", CorpusSpec(1).rng_seed)),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    count = write_corpus(generate_corpus(spec), args.out)
    print(f"wrote {count} records to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="streamlab")
    sub = parser.add_subparsers(dest="command", required=True)

    p_ingest = sub.add_parser("ingest", help="generate the corpus and ingest it")
    _add_config_flags(p_ingest)
    p_ingest.set_defaults(fn=cmd_ingest)

    p_bench = sub.add_parser("bench", help="run all configured setups")
    _add_config_flags(p_bench)
    p_bench.set_defaults(fn=cmd_bench)

    p_report = sub.add_parser("report", help="aggregate statistics from bench output")
    p_report.add_argument("dir", help="directory holding bench output")
    p_report.set_defaults(fn=cmd_report)

    p_plan = sub.add_parser("plan", help="print the execution plan for one setup")
    p_plan.add_argument("query")
    p_plan.add_argument("api_kind")
    p_plan.add_argument("engine")
    p_plan.add_argument("parallelism", type=int)
    p_plan.set_defaults(fn=cmd_plan)

    p_all = sub.add_parser("all", help="ingest, bench, and report in one run")
    _add_config_flags(p_all)
    p_all.set_defaults(fn=cmd_all)

    p_corpus = sub.add_parser("corpus", help="corpus utilities")
    corpus_sub = p_corpus.add_subparsers(dest="corpus_command", required=True)
    p_export = corpus_sub.add_parser("export", help="write the corpus to a text file")
    p_export.add_argument("--spec", type=Path, help="JSON file with corpus.* keys")
    p_export.add_argument("--out", type=Path, required=True)
    p_export.add_argument("--corpus-n-records", type=int, dest="corpus_n_records")
    p_export.add_argument("--corpus-grep-needle", dest="corpus_grep_needle")
    p_export.add_argument("--corpus-grep-match-count", type=int,
                          dest="corpus_grep_match_count")
    p_export.add_argument("--corpus-rng-seed", type=int, dest="corpus_rng_seed")
    p_export.set_defaults(fn=cmd_corpus_export)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
