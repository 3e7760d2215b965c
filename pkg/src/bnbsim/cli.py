"""Command-line entry point: ``bnbsim <command> ...``.

Exit codes: 0 success, 1 replay mismatch, 2 usage error, 3 configuration
error, 4 data error (missing or invalid input files), 5 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .cards import CatalogError, default_catalog
from .engine import GameError
from .gateway import AuthError, Gateway, GatewayError
from .harness import (
    ConfigError,
    ExperimentConfig,
    _parse_structures,
    load_config,
    replay_trajectory,
    resolve_table_path,
    run_batch,
    run_single,
    write_batch,
)
from .newsgen import gen_news, load_exclusions
from .rag import ChunkParams, EmbedderMismatch, EmptyCorpusError, HashingEmbedder, RemoteEmbedder, ingest_corpus
from .render import render_sweep_table, render_trajectory, render_winrate_table
from .teams import Structure

log = logging.getLogger("bnbsim")

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3, 4, 5


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="experiment config (YAML with engine/team/rag/gateway/batch sections)")
    p.add_argument("--seed", type=int, help="game seed (run) or base seed (batch)")
    p.add_argument("--rag", choices=("none", "wiki", "news"), help="retrieval mode")
    p.add_argument("--corpus", type=Path, help="corpus directory for retrieval")
    p.add_argument("--index", type=Path, help="prebuilt index file (.npz) for retrieval")
    p.add_argument("--top-k", type=int, help="passages returned per retrieval query")
    p.add_argument("--chunk-size", type=int, help="chunk size in characters (overlap defaults to a tenth)")
    p.add_argument("--backend", choices=("scripted", "remote"), help="agent backend")
    p.add_argument("--scenario", type=Path, help="scenario override file")
    p.add_argument("--out", type=Path, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bnbsim", description="Multi-agent incident response tabletop simulator.")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="more logging (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="play a single game and print its trajectory")
    _common(p)
    p.add_argument("--structure", default="HomoCen", help="team structure, e.g. HomoCen or HeteroArg")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")

    p = sub.add_parser("batch", help="play many games per structure and tabulate win rates")
    _common(p)
    p.add_argument("--structure", default=None, help="'all' or a comma-separated list of structures")
    p.add_argument("--runs", type=int, help="games per structure")
    p.add_argument("--workers", type=int, help="games played concurrently")

    p = sub.add_parser("ingest", help="chunk and embed a corpus directory into an index file")
    p.add_argument("corpus", type=Path)
    p.add_argument("--out", type=Path, required=True, help="index file to write (.npz)")
    p.add_argument("--chunk-size", type=int, default=5000)
    p.add_argument("--overlap", type=int, default=None, help="defaults to a tenth of the chunk size")
    p.add_argument("--embedder", choices=("hashing", "remote"), default="hashing")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--config", type=Path, help="config supplying gateway settings for remote embeddings")

    p = sub.add_parser("gen-news", help="generate synthetic news stories (or their prompts)")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("news"))
    p.add_argument("--dry-run", action="store_true", help="write prompts only; no model calls")
    p.add_argument("--exclude", type=Path, action="append", default=[],
                   help="file of attack-card combinations to avoid, or a packaged trajectory such as tables/northface.cfg (repeatable)")
    p.add_argument("--procedures", type=int, default=6, help="procedure cards offered per story")
    p.add_argument("--config", type=Path, help="config supplying gateway settings")

    p = sub.add_parser("replay", help="replay a printed trajectory and compare it cell by cell")
    p.add_argument("--trajectory", required=True, help="trajectory file, e.g. tables/cockli.cfg")
    p.add_argument("--format", choices=("markdown", "csv"), default="markdown")
    p.add_argument("--out", type=Path, help="also write the transcript here")

    p = sub.add_parser("report", help="combine batch summaries into tables and figures")
    p.add_argument("--out", type=Path, required=True, help="output directory of earlier batch runs")
    return parser


def _experiment(args: argparse.Namespace) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {}
    if args.seed is not None:
        over["base_seed"] = args.seed
    if args.rag:
        over["rag"] = args.rag
    if args.corpus:
        over["corpus"] = str(args.corpus)
    if args.index:
        over["index"] = str(args.index)
    if args.top_k is not None:
        over["top_k"] = args.top_k
    if args.chunk_size is not None:
        over["chunk_size"] = args.chunk_size
    if args.backend:
        over["backend"] = args.backend
    if args.scenario:
        over["scenario"] = str(args.scenario)
    if getattr(args, "runs", None) is not None:
        over["runs"] = args.runs
    if getattr(args, "workers", None) is not None:
        over["workers"] = args.workers
    if args.command == "batch" and args.structure:
        over["structures"] = _parse_structures(args.structure.split(",") if args.structure != "all" else "all", "--structure")
    cfg = replace(cfg, **over)
    cfg.validate()
    return cfg


def _gateway(cfg: ExperimentConfig) -> Gateway | None:
    if cfg.backend != "remote" and cfg.embedder != "remote":
        return None
    try:
        return Gateway(cfg.gateway)
    except AuthError as exc:
        raise ConfigError(f"gateway.api_key_env: {exc}") from None


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    structure = Structure.parse(args.structure)
    seed = cfg.base_seed
    report = run_single(cfg, structure, seed, gateway=_gateway(cfg))
    print(render_trajectory(report.turns, args.format), end="")
    print(f"# outcome: {report.status} in {len(report.turns)} turns (seed {seed}, {structure.value})")
    if report.diagnostic:
        print(f"# diagnostic: {report.diagnostic}")
    if args.out:
        path = report.write(Path(args.out) / "transcripts")
        print(f"# transcript: {path}")
    return EXIT_RUNTIME if report.aborted else EXIT_OK


def cmd_batch(args: argparse.Namespace) -> int:
    cfg = _experiment(args)
    out = args.out or Path("out")
    gateway = _gateway(cfg)
    sweep: dict[str, dict[object, str]] = {}
    knob = "top_k" if isinstance(cfg.top_k, tuple) else "chunk_size"
    last = None
    for point in cfg.expand():
        report = run_batch(point, gateway=gateway)
        write_batch(report, out)
        last = report
        for s, r in report.results.items():
            print(f"{report.label}\t{s}\twins={r.wins}\tlosses={r.losses}\taborts={r.aborts}\twin_rate={r.win_rate}")
        if cfg.is_sweep and len(point.structures) == 1:
            sweep.setdefault(point.rag, {})[getattr(point, knob)] = report.results[point.structures[0].value].win_rate
    if sweep:
        table = render_sweep_table(knob, sweep)
        (out / "reports" / f"sweep-{knob}.md").write_text(table, encoding="utf-8")
        print(table, end="")
    elif last is not None:
        labels = {s.value: s.label for s in Structure}
        print(render_winrate_table({cfg.rag: last.rates()}, labels), end="")
    return EXIT_OK


def cmd_ingest(args: argparse.Namespace) -> int:
    overlap = args.overlap if args.overlap is not None else args.chunk_size // 10
    try:
        params = ChunkParams(args.chunk_size, overlap)
    except ValueError as exc:
        raise ConfigError(f"--chunk-size/--overlap: {exc}") from None
    if args.embedder == "remote":
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        try:
            embedder = RemoteEmbedder(Gateway(cfg.gateway))
        except AuthError as exc:
            raise ConfigError(f"gateway.api_key_env: {exc}") from None
    else:
        embedder = HashingEmbedder()
    index = ingest_corpus(args.corpus, embedder, params, workers=args.workers)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    index.save(args.out)
    print(f"documents\t{index.doc_count}")
    print(f"chunks\t{len(index)}")
    print(f"skipped\t{len(index.skipped)}")
    print(f"embedder\t{index.embedder_id}")
    print(f"digest\t{index.digest()}")
    return EXIT_OK


def cmd_gen_news(args: argparse.Namespace) -> int:
    catalog = default_catalog()
    exclude: set = set()
    for path in args.exclude:
        try:
            exclude |= load_exclusions(resolve_table_path(path), catalog)
        except ValueError as exc:
            raise ConfigError(f"--exclude: {exc}") from None
    gateway = None
    if not args.dry_run:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        try:
            gateway = Gateway(cfg.gateway)
        except AuthError as exc:
            raise ConfigError(f"gateway.api_key_env: {exc}") from None
    items = gen_news(
        catalog, args.count, args.seed, args.out,
        gateway=gateway, dry_run=args.dry_run, exclude=exclude, procedure_count=args.procedures,
    )
    failed = [it for it in items if it.status == "failed"]
    print(f"written\t{len(items) - len(failed)}")
    print(f"failed\t{len(failed)}")
    print(f"manifest\t{Path(args.out) / 'manifest.json'}")
    return EXIT_RUNTIME if failed else EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    result = replay_trajectory(args.trajectory)
    print(f"# {result.title}")
    print(render_trajectory(result.report.turns, args.format), end="")
    for m in result.mismatches:
        tag = "known anomaly" if m["known"] else "MISMATCH"
        print(f"# {tag}: turn {m['turn']} {m['column']}: printed {m['printed']!r}, replay {m['actual']!r}")
    print(f"# outcome: {result.report.status} in {len(result.report.turns)} turns; "
          f"{'matches' if result.ok else 'differs from'} the printed trajectory")
    if args.out:
        result.report.write(Path(args.out) / "transcripts")
    return EXIT_OK if result.ok else EXIT_MISMATCH


def cmd_report(args: argparse.Namespace) -> int:
    from .plotting import plot_winrates

    reports_dir = Path(args.out) / "reports"
    summaries = sorted(reports_dir.glob("batch-*.json"))
    if not summaries:
        raise FileNotFoundError(f"no batch summaries under {reports_dir}")
    rates: dict[str, dict[str, str]] = {}
    for path in summaries:
        doc = json.loads(path.read_text(encoding="utf-8"))
        mode = doc["config"]["rag"]
        if mode in rates:
            log.warning("several %s batches under %s; using %s", mode, reports_dir, path.name)
        rates[mode] = {s: r["win_rate"] for s, r in doc["results"].items()}
    labels = {s.value: s.label for s in Structure}
    table = render_winrate_table(rates, labels)
    (reports_dir / "winrate.md").write_text(table, encoding="utf-8")
    fig = plot_winrates(rates, reports_dir / "winrate.png", labels)
    print(table, end="")
    print(f"# figure: {fig}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "batch": cmd_batch,
    "ingest": cmd_ingest,
    "gen-news": cmd_gen_news,
    "replay": cmd_replay,
    "report": cmd_report,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, CatalogError, EmptyCorpusError, EmbedderMismatch) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (GatewayError, GameError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
