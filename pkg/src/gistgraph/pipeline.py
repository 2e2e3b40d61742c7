"""Offline indexing and online retrieval wired end to end."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence


from .config import Config, ConfigError, make_embedder, make_extractor
from .corpus import CorpusError, Passage, load_corpus, segment_corpus
from .diffusion import (
    NoAnchorError,
    as_mapping,
    diffuse,
    fact_similarities,
    initial_activation,
    passage_diffusion_scores,
    top_k_facts,
)
from .embedding import Embedder, VectorIndex, embed, load_index, save_index
from .extraction import (
    DecompositionResult,
    EntityMention,
    ExtractionError,
    Extractor,
    MemoryRecord,
    Triple,
)
from .graph import (
    DiffusionGraph,
    KnowledgeGraph,
    build_diffusion_graph,
    build_graph,
    graph_stats,
    load_graph,
    save_graph,
)
from .metrics import EvalReport, QAExample, evaluate, load_dataset
from .rerank import (
    EvidencePair,
    RankedPassage,
    assemble_evidence,
    candidate_set,
    rank_candidates,
    merge_2_2_1,
)

log = logging.getLogger(__name__)

GRAPH_FILE = "graph.kg"
META_FILE = "meta.json"
CHECKPOINT_FILE = "extraction.jsonl"
INDEX_KINDS = ("entity", "memory", "relation", "fact", "passage")


class IndexMissingError(FileNotFoundError):
    pass


def _text_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


def _embedder_signature(config: Config) -> dict:
    e = config.embedder
    return {"mode": e.mode, "dim": e.dim, "bigrams": e.bigrams, "model": e.model,
            "query_instruction": e.query_instruction}


@dataclass
class PassageExtraction:
    memory: MemoryRecord
    entities: list[EntityMention]
    triples: list[Triple]

    def to_record(self, passage: Passage) -> dict:
        m = self.memory
        return {
            "passage_id": passage.passage_id,
            "text_hash": _text_hash(passage.text),
            "memory": [m.memory_id, m.passage_id, m.think_text, m.memory_text],
            "entities": [[e.surface, e.canonical] for e in self.entities],
            "triples": [[t.head, t.relation, t.tail] for t in self.triples],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "PassageExtraction":
        memory = MemoryRecord(*rec["memory"])
        return cls(
            memory,
            [EntityMention(s, c) for s, c in rec["entities"]],
            [Triple(h, r, t, memory.memory_id) for h, r, t in rec["triples"]],
        )


def extract_passage(extractor: Extractor, passage: Passage) -> PassageExtraction:
    memory = extractor.extract_memory(passage)
    entities = extractor.extract_entities(memory)
    triples = extractor.extract_triples(memory, entities)
    return PassageExtraction(memory, entities, triples)


def _read_checkpoint(path: Path) -> dict[str, dict]:
    done: dict[str, dict] = {}
    if not path.exists():
        return done
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            try:
                rec = json.loads(line)
                done[rec["passage_id"]] = rec
            except (json.JSONDecodeError, KeyError, TypeError):
                # a torn last line from an interrupted run is expected
                continue
    return done


@dataclass
class Index:
    kg: KnowledgeGraph
    dg: DiffusionGraph
    vectors: dict[str, VectorIndex]
    stats: dict[str, int]

    @property
    def fact_index(self) -> VectorIndex:
        return self.vectors["fact"]

    @property
    def passage_index(self) -> VectorIndex:
        return self.vectors["passage"]


def embed_graph(kg: KnowledgeGraph, embedder: Embedder) -> dict[str, VectorIndex]:
    """Vectors for every object kind (relation vectors are stored but not used in ranking)."""
    items = {
        "entity": {e: e for e in sorted(kg.entities)},
        "memory": {mid: kg.memories[mid].memory_text for mid in sorted(kg.memories)},
        "relation": {r: r for r in sorted(kg.relations)},
        "fact": {fid: kg.facts[fid].fact_string for fid in sorted(kg.facts)},
        "passage": {pid: kg.passages[pid].text for pid in sorted(kg.passages)},
    }
    return {kind: VectorIndex.build(embedder, items[kind], kind) for kind in INDEX_KINDS}


def build_index(
    config: Config,
    extractor: Extractor | None = None,
    embedder: Embedder | None = None,
    force: bool = False,
) -> Index:
    """Segment, extract, build the graph, embed everything and persist it.

    Finished passages are appended to a checkpoint file as they complete, so
    a rerun after a provider failure only redoes the missing ones. ``force``
    discards the checkpoint.
    """
    extractor = extractor or make_extractor(config)
    embedder = embedder or make_embedder(config.embedder)
    documents = load_corpus(config.corpus)
    if not documents:
        raise CorpusError(f"corpus {config.corpus} is empty")
    passages = segment_corpus(documents, config.max_tokens)

    workdir = config.workdir_path
    workdir.mkdir(parents=True, exist_ok=True)
    ckpt = workdir / CHECKPOINT_FILE
    if force and ckpt.exists():
        ckpt.unlink()
    cached = _read_checkpoint(ckpt)

    results: dict[str, PassageExtraction] = {}
    todo = []
    for p in passages:
        rec = cached.get(p.passage_id)
        if rec is not None and rec.get("text_hash") == _text_hash(p.text):
            results[p.passage_id] = PassageExtraction.from_record(rec)
        else:
            todo.append(p)
    if cached:
        log.info("reusing %d checkpointed passages, extracting %d", len(results), len(todo))

    lock = threading.Lock()
    failures: list[str] = []

    with open(ckpt, "a", encoding="utf-8") as out:

        def work(p: Passage):
            try:
                res = extract_passage(extractor, p)
            except Exception as exc:  # noqa: BLE001 - reported below with passage context
                with lock:
                    failures.append(f"{p.passage_id}: {exc}")
                return
            with lock:
                results[p.passage_id] = res
                out.write(json.dumps(res.to_record(p), ensure_ascii=False) + "\n")
                out.flush()

        extractor.map(work, todo)

    if failures:
        raise ExtractionError(
            f"extraction failed for {len(failures)} passage(s); progress saved to {ckpt}. "
            f"First: {failures[0]}"
        )

    # rewrite the checkpoint in passage order so reruns see a stable file
    with open(ckpt, "w", encoding="utf-8") as out:
        for p in passages:
            out.write(json.dumps(results[p.passage_id].to_record(p), ensure_ascii=False) + "\n")

    ordered = [results[p.passage_id] for p in passages]
    kg = build_graph(
        [r.memory for r in ordered],
        itertools.chain.from_iterable(r.triples for r in ordered),
        passages,
        {r.memory.memory_id: r.entities for r in ordered},
    )
    dg = build_diffusion_graph(kg)
    vectors = embed_graph(kg, embedder)

    save_graph(kg, workdir / GRAPH_FILE)
    for kind, index in vectors.items():
        save_index(index, workdir / f"vectors-{kind}.jsonl")
    stats = graph_stats(kg)
    meta = {"embedder": _embedder_signature(config), "stats": stats}
    (workdir / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return Index(kg, dg, vectors, stats)


def load_index_dir(config: Config) -> Index:
    workdir = config.workdir_path
    needed = [workdir / GRAPH_FILE, workdir / META_FILE] + [
        workdir / f"vectors-{k}.jsonl" for k in INDEX_KINDS
    ]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise IndexMissingError(
            f"index files missing ({', '.join(missing)}); run the 'index' command first"
        )
    meta = json.loads((workdir / META_FILE).read_text(encoding="utf-8"))
    if meta.get("embedder") != _embedder_signature(config):
        raise ConfigError(
            "the index was built with different embedder settings; rebuild it with --force"
        )
    kg = load_graph(workdir / GRAPH_FILE)
    vectors = {k: load_index(workdir / f"vectors-{k}.jsonl") for k in INDEX_KINDS}
    return Index(kg, build_diffusion_graph(kg), vectors, graph_stats(kg))


# -- retrieval ------------------------------------------------------------------


@dataclass
class SubQueryResult:
    query: str
    ranked: list[RankedPassage]
    no_anchor: bool
    top_facts: list[tuple[str, float]]
    converged: bool | None = None
    iterations: int = 0
    pi0: dict[str, float] = field(default_factory=dict)
    pi_star: dict[str, float] = field(default_factory=dict)


@dataclass
class RetrievalResult:
    question: str
    decomposition: DecompositionResult
    subqueries: list[SubQueryResult]
    passage_ids: list[str]
    ranking: list[str]
    evidence: list[EvidencePair]
    answer: str | None = None

    def best_scores(self) -> dict[str, tuple[int, RankedPassage]]:
        best: dict[str, tuple[int, RankedPassage]] = {}
        for i, sub in enumerate(self.subqueries):
            for r in sub.ranked:
                if r.passage_id not in best or r.s_fused > best[r.passage_id][1].s_fused:
                    best[r.passage_id] = (i, r)
        return best

    def to_record(self, kg: KnowledgeGraph | None = None, explain: bool = False) -> dict:
        best = self.best_scores()
        rec = {
            "question": self.question,
            "split": self.decomposition.split,
            "sub_questions": list(self.decomposition.sub_questions),
            "no_anchor": [s.no_anchor for s in self.subqueries],
            "passage_ids": list(self.passage_ids),
            "scores": [
                {
                    "passage_id": pid,
                    "sub_query": best[pid][0],
                    "s_diff": best[pid][1].s_diff,
                    "s_sim": best[pid][1].s_sim,
                    "s_fused": best[pid][1].s_fused,
                }
                for pid in self.passage_ids
            ],
            "evidence": [
                {
                    "passage_id": e.passage.passage_id,
                    "memory_id": e.memory.memory_id,
                    "passage": e.passage.text,
                    "memory": e.memory.memory_text,
                }
                for e in self.evidence
            ],
        }
        if self.answer is not None:
            rec["answer"] = self.answer
        if explain:
            rec["explain"] = [
                {
                    "query": s.query,
                    "no_anchor": s.no_anchor,
                    "converged": s.converged,
                    "iterations": s.iterations,
                    "top_facts": [
                        {
                            "fact_id": fid,
                            "fact": kg.facts[fid].fact_string if kg else None,
                            "score": score,
                        }
                        for fid, score in s.top_facts
                    ],
                    "pi0": dict(sorted(s.pi0.items())),
                    "pi_star": dict(sorted(s.pi_star.items())),
                    "candidates": [
                        {"passage_id": r.passage_id, "s_diff": r.s_diff, "s_sim": r.s_sim, "s_fused": r.s_fused}
                        for r in s.ranked[:20]
                    ],
                }
                for s in self.subqueries
            ]
        return rec


class Retriever:
    """Answers queries against a built :class:`Index`.

    Holds only immutable state after construction, so one instance can serve
    concurrent queries.
    """

    def __init__(self, index: Index, config: Config, extractor: Extractor | None = None,
                 embedder: Embedder | None = None):
        self.index = index
        self.config = config
        self.extractor = extractor or make_extractor(config)
        self.embedder = embedder or make_embedder(config.embedder)

    def rank_subquery(self, query: str, explain: bool = False) -> SubQueryResult:
        cfg = self.config
        params = cfg.diffusion
        idx = self.index
        q_emb = embed(self.embedder, query, "query")
        topk = top_k_facts(fact_similarities(q_emb, idx.fact_index), params.K_facts) if len(idx.fact_index) else []

        s_diff: dict[str, float] = {}
        sub = SubQueryResult(query, [], True, topk)
        try:
            pi0 = initial_activation(topk, idx.kg, idx.dg, params)
        except NoAnchorError:
            log.info("no anchor entity for %r; falling back to dense ranking", query)
        else:
            res = diffuse(pi0, idx.dg, params)
            if not res.converged:
                log.warning("diffusion stopped at max_iters=%d without converging", params.max_iters)
            s_diff = passage_diffusion_scores(res.pi, idx.dg)
            sub.no_anchor = False
            sub.converged = res.converged
            sub.iterations = res.iterations
            if explain:
                sub.pi0 = as_mapping(pi0, idx.dg)
                sub.pi_star = as_mapping(res.pi, idx.dg)

        s_sim = idx.passage_index.similarities(q_emb)
        candidates = candidate_set(q_emb, idx.passage_index, s_diff, cfg.n_dense)
        sub.ranked = rank_candidates(s_diff, s_sim, candidates, cfg.epsilon, cfg.delta)
        return sub

    def retrieve(self, question: str, explain: bool = False, answer: bool = False) -> RetrievalResult:
        cfg = self.config
        decomposition = self.extractor.decompose_query(question, cfg.m_split)
        queries = list(decomposition.sub_questions) if decomposition.split else [question]
        subs = [self.rank_subquery(q, explain) for q in queries]
        final = merge_2_2_1([s.ranked for s in subs], cfg.k_final)

        # beyond the final K, continue with every other candidate by best fused score
        chosen = set(final)
        best: dict[str, float] = {}
        for s in subs:
            for r in s.ranked:
                if r.passage_id not in chosen:
                    best[r.passage_id] = max(best.get(r.passage_id, -1.0), r.s_fused)
        ranking = final + sorted(best, key=lambda p: (-best[p], p))

        evidence = assemble_evidence(final, self.index.kg)
        result = RetrievalResult(question, decomposition, subs, final, ranking, evidence)
        if answer:
            result.answer = self.extractor.generate_answer(question, evidence)
        return result


# -- evaluation -------------------------------------------------------------------


@dataclass
class EvalRun:
    report: EvalReport
    results: list[RetrievalResult]
    timings: dict[str, float]


def run_eval(
    retriever: Retriever,
    dataset: Sequence[QAExample],
    answer: bool | None = None,
    hit_rate: bool = False,
) -> EvalRun:
    cfg = retriever.config
    answer = cfg.generate_answers if answer is None else answer
    timings: dict[str, float] = {}

    t0 = time.perf_counter()

    def one(ex: QAExample) -> RetrievalResult:
        return retriever.retrieve(ex.question)

    if cfg.eval_workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.eval_workers) as pool:
            results = list(pool.map(one, dataset))
    else:
        results = [one(ex) for ex in dataset]
    timings["retrieve"] = time.perf_counter() - t0

    predictions: list[str | None] = [None] * len(dataset)
    if answer:
        t0 = time.perf_counter()
        for i, (ex, res) in enumerate(zip(dataset, results)):
            res.answer = retriever.extractor.generate_answer(ex.question, res.evidence)
            predictions[i] = res.answer
        timings["answer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    passages = {pid: p.text for pid, p in retriever.index.kg.passages.items()}
    report = evaluate(
        dataset, predictions, [r.ranking for r in results], cfg.recall_ks, passages, hit_rate
    )
    timings["metrics"] = time.perf_counter() - t0
    return EvalRun(report, results, timings)


SWEEP_KEYS = ("alpha", "beta", "gamma", "epsilon")


def expand_grid(grid: Mapping[str, Sequence[float]], base: Config) -> list[tuple[dict, Config]]:
    """Cartesian product of the grid; every cell is validated before any run."""
    unknown = set(grid) - set(SWEEP_KEYS)
    if unknown:
        raise ConfigError(f"cannot sweep {sorted(unknown)}; choose from {SWEEP_KEYS}")
    keys = [k for k in SWEEP_KEYS if k in grid]
    cells = []
    for values in itertools.product(*(grid[k] for k in keys)):
        cell = dict(zip(keys, (float(v) for v in values)))
        cells.append((cell, base.with_overrides(**cell)))
    return cells


def run_sweep(
    index: Index,
    base: Config,
    grid: Mapping[str, Sequence[float]],
    dataset: Sequence[QAExample],
    extractor: Extractor | None = None,
    embedder: Embedder | None = None,
) -> list[dict]:
    cells = expand_grid(grid, base)
    extractor = extractor or make_extractor(base)
    embedder = embedder or make_embedder(base.embedder)
    rows = []
    for cell, cfg in cells:
        run = run_eval(Retriever(index, cfg, extractor, embedder), dataset)
        rows.append({**cell, **run.report.to_record()})
    return rows


def load_eval_dataset(config: Config, path: str | None = None) -> list[QAExample]:
    path = path or config.dataset
    if not path:
        raise ConfigError("no dataset given (config 'dataset' or command argument)")
    return load_dataset(path)
