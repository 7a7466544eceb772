"""Command-line entry points: build, query, eval and serve."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace
from datetime import datetime, timezone
from pathlib import Path

from . import graph as graph_io
from .builder import BuildError, build_graph
from .config import SECTIONS, ConfigError, RunConfig
from .corpus import CorpusError, ingest_corpus, load_qa_dataset
from .eval import METRICS, SUMMARY_HEADER, run_eval
from .graph import GraphError
from .llm import ProviderError
from .pipeline import answer_query, answer_to_json

EXIT_OK = 0
EXIT_VIOLATIONS = 1
EXIT_INPUT = 2
EXIT_PROVIDER = 3
EXIT_USAGE = 64

log = logging.getLogger("sentgraph")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="TOML config file with [build] [pipeline] [llm] [retrieval] sections")
    for section, klass in SECTIONS.items():
        group = parser.add_argument_group(f"[{section}] settings")
        for f in fields(klass):
            group.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None, metavar="VALUE")
    parser.add_argument("-v", "--verbose", action="store_true")


def _config(args) -> RunConfig:
    overrides = {name: getattr(args, name, None) for name in RunConfig.flag_map()}
    return RunConfig.load(args.config, overrides)


def _source_stamp(path: Path) -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    seconds = int(epoch) if epoch else int(path.stat().st_mtime)
    return datetime.fromtimestamp(seconds, timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def cmd_build(args) -> int:
    cfg = _config(args)
    corpus_path = Path(args.corpus)
    docs = ingest_corpus(corpus_path)
    if not docs:
        raise CorpusError("corpus is empty", corpus_path)
    client = cfg.make_client()
    try:
        g = build_graph(docs, client, cfg.build, cfg.make_similarity(), created=_source_stamp(corpus_path))
    except BuildError as exc:
        for v in exc.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_VIOLATIONS
    graph_io.save(g, args.out)
    stats = g.stats()
    print(
        "nodes " + " ".join(f"{k}={v}" for k, v in stats["nodes"].items())
        + " | edges " + " ".join(f"{k}={v}" for k, v in stats["edges"].items())
    )
    print(f"wrote {args.out}")
    return EXIT_OK


def _load_graph(path: str):
    try:
        return graph_io.load(path)
    except OSError as exc:
        raise CorpusError(f"cannot read graph ({exc.strerror or exc})", path) from exc
    except (ValueError, KeyError) as exc:
        raise CorpusError(f"malformed graph file ({exc})", path) from exc


def cmd_query(args) -> int:
    cfg = _config(args)
    g = _load_graph(args.graph)
    ranker = cfg.make_ranker(g)
    answer = answer_query(args.question, g, ranker, cfg.make_client(), cfg.pipeline)
    if args.json:
        print(answer_to_json(answer, include_trace=args.trace))
        return EXIT_OK
    print(answer.text)
    if args.trace:
        print(answer_to_json(answer, include_trace=True))
    return EXIT_OK


def _report_path(out: Path, k: int | None) -> Path:
    if k is None:
        return out
    return out.with_name(f"{out.stem}.k{k}{out.suffix or '.json'}")


def cmd_eval(args) -> int:
    cfg = _config(args)
    g = _load_graph(args.graph)
    sample_n = None if args.sample_n is None else int(args.sample_n)
    if sample_n is not None and sample_n < 0:
        raise UsageError("--sample-n must be non-negative")
    items = load_qa_dataset(args.qa, sample_n=sample_n, seed=cfg.build.seed)
    if not items:
        raise CorpusError("no QA items selected", args.qa)
    metrics = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = sorted(set(metrics) - set(METRICS))
    if unknown or not metrics:
        raise UsageError(f"--metrics takes a comma-separated subset of {','.join(METRICS)}")
    try:
        sweep = [int(k) for k in args.sweep_anchors.split(",")] if args.sweep_anchors else [None]
    except ValueError:
        raise UsageError("--sweep-anchors takes comma-separated integers") from None
    if any(k is not None and k < 1 for k in sweep):
        raise UsageError("--sweep-anchors values must be positive")

    ranker = cfg.make_ranker(g)
    client = cfg.make_client()
    print(SUMMARY_HEADER)
    all_failed_on_provider = True
    for k in sweep:
        pipe = cfg.pipeline if k is None else replace(cfg.pipeline, k_anchors=k)
        settings = {"k_anchors": pipe.k_anchors, "sample_n": sample_n, "seed": cfg.build.seed,
                    "graph": str(args.graph), "qa": str(args.qa), "ranker": cfg.retrieval.ranker}
        report = run_eval(
            items,
            lambda item, pipe=pipe: answer_query(item.question, g, ranker, client, pipe),
            metrics,
            workers=args.workers,
            settings=settings,
        )
        path = _report_path(Path(args.out), k)
        report.write(path)
        if k is not None:
            print(f"# k_anchors={k} -> {path}")
        print(report.summary_line())
        if not all(r.error and r.error.split(":")[0] in _PROVIDER_ERRORS for r in report.per_item):
            all_failed_on_provider = False
    if all_failed_on_provider:
        print("error: every item failed with a provider error", file=sys.stderr)
        return EXIT_PROVIDER
    return EXIT_OK


_PROVIDER_ERRORS = {"ProviderError", "ProviderTimeout", "RateLimited", "BadResponse", "TransportError"}


def cmd_serve(args) -> int:
    from .server import make_server

    cfg = _config(args)
    g = _load_graph(args.graph)
    host, _, port = args.bind.rpartition(":")
    server = make_server(g, cfg.make_ranker(g), cfg.make_client(), cfg.pipeline, host or "127.0.0.1", int(port))
    print(f"serving {args.graph} on http://{server.server_address[0]}:{server.server_address[1]}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="sentgraph", description="Sentence logic graph retrieval for multi-hop QA.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build", help="build a sentence graph from a JSONL corpus")
    p.add_argument("corpus")
    p.add_argument("-o", "--out", required=True, help="graph file to write")
    _add_config_flags(p)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("query", help="answer one question over a graph")
    p.add_argument("graph")
    p.add_argument("question")
    p.add_argument("--trace", action="store_true", help="also print the answer JSON with its retrieval trace")
    p.add_argument("--json", action="store_true", help="print only the answer JSON")
    _add_config_flags(p)
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="evaluate over a JSONL QA file")
    p.add_argument("graph")
    p.add_argument("qa")
    p.add_argument("-o", "--out", default="report.json")
    p.add_argument("--sample-n", default=None)
    p.add_argument("--metrics", default="em,f1")
    p.add_argument("--sweep-anchors", default=None, help="comma-separated anchor counts, one report each")
    p.add_argument("--workers", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="serve POST /query over a graph")
    p.add_argument("graph")
    p.add_argument("--bind", default="127.0.0.1:8080")
    _add_config_flags(p)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"sentgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, ConfigError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ProviderError as exc:
        print(f"error: provider {exc.kind}: {exc}", file=sys.stderr)
        return EXIT_PROVIDER


if __name__ == "__main__":
    sys.exit(main())
