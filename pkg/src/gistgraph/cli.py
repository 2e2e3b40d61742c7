"""Command line entry point: ``gistgraph <command> --config cfg.json ...``.

Machine-readable output is JSON lines (stdout, or files under ``--out``);
human tables go to stdout. Wall-clock timings are written to their own
file so the other outputs stay byte-identical between runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import Config, ConfigError, EmbedderConfig, ProviderConfig, load_config
from .corpus import CorpusError
from .embedding import EmbeddingError, IndexFormatError
from .extraction import ExtractionError, ProviderError
from .graph import GraphError, graph_stats
from .metrics import QAExample
from .pipeline import (
    IndexMissingError,
    Retriever,
    build_index,
    load_eval_dataset,
    load_index_dir,
    run_eval,
    run_sweep,
)
from .synthetic import write_planted


def _dump(record) -> str:
    return json.dumps(record, ensure_ascii=False, sort_keys=True)


def _emit(record) -> None:
    sys.stdout.write(_dump(record) + "\n")


def _write_jsonl(path: Path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(_dump(rec) + "\n")


def _config(args) -> Config:
    cfg = load_config(args.config) if args.config else Config()
    if args.mock:
        cfg = replace(
            cfg,
            provider=ProviderConfig(mode="mock", max_workers=cfg.provider.max_workers),
            embedder=EmbedderConfig(mode="mock", dim=cfg.embedder.dim, bigrams=cfg.embedder.bigrams),
        )
    overrides = {}
    if getattr(args, "k", None) is not None:
        overrides["k_final"] = args.k
    if getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = args.epsilon
    return cfg.with_overrides(**overrides) if overrides else cfg


def _parse_grid(items: list[str]) -> dict[str, list[float]]:
    grid = {}
    for item in items:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError(f"grid entries look like KEY=v1,v2 (got {item!r})")
        try:
            grid[key.strip()] = [float(v) for v in values.split(",")]
        except ValueError as exc:
            raise ConfigError(f"non-numeric grid value in {item!r}") from exc
    return grid


def cmd_index(args) -> int:
    cfg = _config(args)
    index = build_index(cfg, force=args.force)
    _emit(index.stats)
    return 0


def _retriever(args) -> Retriever:
    cfg = _config(args)
    return Retriever(load_index_dir(cfg), cfg)


def cmd_retrieve(args, answer: bool = False, explain: bool | None = None) -> int:
    retriever = _retriever(args)
    explain = args.explain if explain is None else explain
    result = retriever.retrieve(args.question, explain=explain, answer=answer)
    _emit(result.to_record(retriever.index.kg, explain=explain))
    return 0


def cmd_answer(args) -> int:
    return cmd_retrieve(args, answer=True)


def cmd_explain(args) -> int:
    return cmd_retrieve(args, explain=True)


def cmd_stats(args) -> int:
    index = load_index_dir(_config(args))
    _emit(graph_stats(index.kg))
    return 0


def _out_dir(args, cfg: Config, name: str) -> Path:
    out = Path(args.out) if args.out else cfg.workdir_path / name
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_eval(args) -> int:
    cfg = _config(args)
    dataset = load_eval_dataset(cfg, args.dataset)
    retriever = Retriever(load_index_dir(cfg), cfg)
    run = run_eval(retriever, dataset, answer=False if args.no_answer else None, hit_rate=args.hit_rate)
    out = _out_dir(args, cfg, "eval")
    _write_jsonl(out / "report.jsonl", [run.report.to_record()])
    traces = []
    for ex, row, res in zip(dataset, run.report.per_example, run.results):
        traces.append({**row, "gold_answers": list(ex.gold_answers),
                       "gold_passage_ids": list(ex.gold_passage_ids),
                       "retrieval": res.to_record(retriever.index.kg)})
    _write_jsonl(out / "traces.jsonl", traces)
    (out / "timings.json").write_text(json.dumps(run.timings, indent=2) + "\n", encoding="utf-8")
    print(run.report.table())
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    grid = _parse_grid(args.grid)
    dataset: list[QAExample] = load_eval_dataset(cfg, args.dataset)
    rows = run_sweep(load_index_dir(cfg), cfg, grid, dataset)
    out = _out_dir(args, cfg, "sweep")
    _write_jsonl(out / "sweep.jsonl", rows)
    keys = [k for k in grid]
    ks = sorted(cfg.recall_ks)
    head = keys + ["EM", "F1"] + [f"R@{k}" for k in ks]
    print("\t".join(head))
    for r in rows:
        cells = [f"{r[k]:g}" for k in keys] + [f"{r['em']:.2f}", f"{r['f1']:.2f}"]
        cells += [f"{r['recall_at'][str(k)]:.2f}" for k in ks]
        print("\t".join(cells))
    return 0


def cmd_synth(args) -> int:
    path = write_planted(args.outdir, seed=args.seed)
    _emit({"config": str(path)})
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--mock", action="store_true", help="force mock provider and embedder")
    common.add_argument("-v", "--verbose", action="store_true")

    ranking = argparse.ArgumentParser(add_help=False)
    ranking.add_argument("--k", type=int, help="number of final passages")
    ranking.add_argument("--epsilon", type=float, help="diffusion weight in the fused score")

    parser = argparse.ArgumentParser(prog="gistgraph", description="Gist-memory graph retrieval.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", parents=[common], help="extract, build and persist the graph")
    p.add_argument("--force", action="store_true", help="ignore checkpointed extractions")
    p.set_defaults(func=cmd_index)

    for name, func, text in (
        ("retrieve", cmd_retrieve, "rank passages for a question"),
        ("answer", cmd_answer, "retrieve and generate an answer"),
        ("explain", cmd_explain, "retrieve and dump activations and scores"),
    ):
        p = sub.add_parser(name, parents=[common, ranking], help=text)
        p.add_argument("question")
        if name != "explain":
            p.add_argument("--explain", action="store_true")
        p.set_defaults(func=func)

    p = sub.add_parser("stats", parents=[common], help="print graph statistics")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("eval", parents=[common, ranking], help="evaluate on a QA dataset")
    p.add_argument("dataset", nargs="?")
    p.add_argument("--out", help="output directory (default <workdir>/eval)")
    p.add_argument("--hit-rate", action="store_true", help="recall as any-gold hit rate")
    p.add_argument("--no-answer", action="store_true", help="skip answer generation")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", parents=[common, ranking], help="grid over alpha/beta/gamma/epsilon")
    p.add_argument("grid", nargs="+", metavar="KEY=v1,v2")
    p.add_argument("--dataset")
    p.add_argument("--out", help="output directory (default <workdir>/sweep)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("synth", help="write a planted synthetic corpus, dataset and config")
    p.add_argument("outdir")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth, verbose=False)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except (ConfigError, IndexMissingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (CorpusError, ExtractionError, ProviderError, EmbeddingError,
            GraphError, IndexFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
