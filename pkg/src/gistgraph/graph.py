"""Knowledge graph over entities, memories, relations, facts and passages.

The graph keeps the provenance chain fact -> memory -> passage intact and
derives the entity/passage adjacency used for diffusion.
"""

from __future__ import annotations

import hashlib
import json
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .corpus import Passage
from .extraction import EntityMention, MemoryRecord, Triple, canonicalize

GRAPH_MAGIC = "GISTGRAPH-KG"
GRAPH_VERSION = 1


class GraphError(ValueError):
    pass


class GraphFormatError(GraphError):
    """A persisted graph is corrupt, truncated or of an unsupported version."""


def fact_id_for(head: str, relation: str, tail: str, memory_id: str) -> str:
    key = "\x1f".join((head, relation, tail, memory_id)).encode("utf-8")
    return "f:" + hashlib.blake2b(key, digest_size=8).hexdigest()


@dataclass(frozen=True)
class Fact:
    fact_id: str
    head: str
    relation: str
    tail: str
    memory_id: str

    @property
    def fact_string(self) -> str:
        return f"{self.head} {self.relation} {self.tail}"

    def involves(self, entity: str) -> bool:
        return entity == self.head or entity == self.tail


@dataclass
class KnowledgeGraph:
    passages: dict[str, Passage] = field(default_factory=dict)
    memories: dict[str, MemoryRecord] = field(default_factory=dict)
    entities: set[str] = field(default_factory=set)
    relations: set[str] = field(default_factory=set)
    facts: dict[str, Fact] = field(default_factory=dict)
    memory_to_passage: dict[str, str] = field(default_factory=dict)
    memory_entities: dict[str, set[str]] = field(default_factory=dict)
    entity_to_passages: dict[str, set[str]] = field(default_factory=dict)

    @cached_property
    def passage_to_memory(self) -> dict[str, str]:
        # the graph is frozen once built or loaded, so caching is safe
        return {p: m for m, p in self.memory_to_passage.items()}

    @property
    def fact_to_memory(self) -> dict[str, str]:
        return {fid: f.memory_id for fid, f in self.facts.items()}

    def memory_for(self, passage_id: str) -> MemoryRecord:
        return self.memories[self.passage_to_memory[passage_id]]

    def passage_for_fact(self, fact_id: str) -> Passage:
        return self.passages[self.memory_to_passage[self.facts[fact_id].memory_id]]

    def chunk_count(self, entity: str) -> int:
        return len(self.entity_to_passages.get(entity, ()))


def build_graph(
    memories: Sequence[MemoryRecord],
    triples: Iterable[Triple],
    passages: Sequence[Passage],
    mentions: Mapping[str, Sequence[EntityMention]] | None = None,
) -> KnowledgeGraph:
    """Assemble the knowledge graph from extraction output.

    ``mentions`` maps a memory id to its NER output; those entities join the
    triple endpoints in the entity set and in the entity-to-passage links.
    """
    kg = KnowledgeGraph()
    for p in passages:
        if p.passage_id in kg.passages:
            raise GraphError(f"duplicate passage id {p.passage_id!r}")
        kg.passages[p.passage_id] = p

    for m in memories:
        if m.memory_id in kg.memories:
            raise GraphError(f"duplicate memory id {m.memory_id!r}")
        if m.passage_id not in kg.passages:
            raise GraphError(f"memory {m.memory_id!r} points at unknown passage {m.passage_id!r}")
        kg.memories[m.memory_id] = m
        kg.memory_to_passage[m.memory_id] = m.passage_id
        kg.memory_entities[m.memory_id] = set()
    mapped = set(kg.memory_to_passage.values())
    if len(mapped) != len(kg.memory_to_passage):
        raise GraphError("more than one memory for a passage")
    missing = set(kg.passages) - mapped
    if missing:
        raise GraphError(f"passages without a memory: {sorted(missing)[:5]}")

    for mid, found in (mentions or {}).items():
        if mid not in kg.memories:
            raise GraphError(f"entity mentions reference unknown memory {mid!r}")
        for mention in found:
            name = canonicalize(mention.canonical)
            if name:
                kg.entities.add(name)
                kg.memory_entities[mid].add(name)

    for t in triples:
        if t.memory_id not in kg.memories:
            raise GraphError(f"triple {(t.head, t.relation, t.tail)} references unknown memory {t.memory_id!r}")
        head, tail = canonicalize(t.head), canonicalize(t.tail)
        if not head or not tail:
            raise GraphError(f"triple {(t.head, t.relation, t.tail)} has an empty endpoint")
        relation = " ".join(t.relation.split())
        fid = fact_id_for(head, relation, tail, t.memory_id)
        existing = kg.facts.get(fid)
        if existing is not None and (existing.head, existing.relation, existing.tail, existing.memory_id) != (
            head, relation, tail, t.memory_id
        ):
            raise GraphError(f"fact id collision on {fid}")
        kg.facts[fid] = Fact(fid, head, relation, tail, t.memory_id)
        kg.entities.update((head, tail))
        kg.relations.add(relation)
        kg.memory_entities[t.memory_id].update((head, tail))

    links: dict[str, set[str]] = defaultdict(set)
    for mid, names in kg.memory_entities.items():
        pid = kg.memory_to_passage[mid]
        for name in names:
            links[name].add(pid)
    kg.entity_to_passages = dict(links)
    return kg


@dataclass
class DiffusionGraph:
    """Entity + passage nodes with a column-stochastic transition matrix.

    ``W[i, j]`` is the probability of stepping from node ``j`` to node ``i``:
    column ``j`` holds node ``j``'s neighbours weighted by edge multiplicity.
    Columns of isolated nodes are all-zero and flagged in ``dangling``.
    """

    nodes: list[str]
    n_entities: int
    W: sp.csc_matrix
    dangling: np.ndarray
    chunk_counts: np.ndarray

    def __post_init__(self):
        self.index = {node: i for i, node in enumerate(self.nodes)}

    @property
    def entity_ids(self) -> list[str]:
        return self.nodes[: self.n_entities]

    @property
    def passage_ids(self) -> list[str]:
        return self.nodes[self.n_entities:]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def edge_count(self) -> int:
        """Distinct undirected edges."""
        return int(sp.triu(self.W != 0).nnz)


def _entity_edges(kg: KnowledgeGraph) -> dict[tuple[str, str], int]:
    counts: dict[tuple[str, str], int] = defaultdict(int)
    for f in kg.facts.values():
        if f.head != f.tail:
            counts[tuple(sorted((f.head, f.tail)))] += 1
    return counts


def build_diffusion_graph(kg: KnowledgeGraph) -> DiffusionGraph:
    """Materialize the entity/passage adjacency and column-normalize it.

    Entity-entity edges come from fact endpoints (self-loops skipped), weighted
    by how many facts join the pair; entity-passage edges come from
    ``entity_to_passages`` with weight 1. Memory nodes stay out of the walk.
    """
    if not kg.entities and not kg.passages:
        raise GraphError("cannot build a diffusion graph from an empty knowledge graph")
    entity_ids = sorted(kg.entities)
    passage_ids = sorted(kg.passages)
    nodes = entity_ids + passage_ids
    index = {node: i for i, node in enumerate(nodes)}

    rows, cols, vals = [], [], []

    def link(a: int, b: int, w: float):
        rows.extend((a, b))
        cols.extend((b, a))
        vals.extend((w, w))

    for (h, t), mult in sorted(_entity_edges(kg).items()):
        link(index[h], index[t], float(mult))
    for name in entity_ids:
        for pid in sorted(kg.entity_to_passages.get(name, ())):
            link(index[name], index[pid], 1.0)

    n = len(nodes)
    A = sp.coo_matrix((vals, (rows, cols)), shape=(n, n)).tocsc()
    A.sum_duplicates()
    col_sums = np.asarray(A.sum(axis=0)).ravel()
    dangling = col_sums == 0
    scale = np.divide(1.0, col_sums, out=np.zeros(n), where=~dangling)
    W = (A @ sp.diags(scale)).tocsc()
    chunk_counts = np.array([kg.chunk_count(e) for e in entity_ids], dtype=float)
    return DiffusionGraph(nodes, len(entity_ids), W, dangling, chunk_counts)


def graph_stats(kg: KnowledgeGraph) -> dict[str, int]:
    """Node and edge counts, each link family reported on its own."""
    entity_entity = len(_entity_edges(kg))
    entity_passage = sum(len(v) for v in kg.entity_to_passages.values())
    memory_passage = len(kg.memory_to_passage)
    fact_memory = len(kg.facts)
    memory_entity = sum(len(v) for v in kg.memory_entities.values())
    diffusion_edges = entity_entity + entity_passage
    return {
        "entities": len(kg.entities),
        "memories": len(kg.memories),
        "passages": len(kg.passages),
        "facts": len(kg.facts),
        "relations": len(kg.relations),
        "nodes": len(kg.entities) + len(kg.memories) + len(kg.passages),
        "entity_entity_edges": entity_entity,
        "entity_passage_edges": entity_passage,
        "diffusion_edges": diffusion_edges,
        "memory_passage_links": memory_passage,
        "fact_memory_links": fact_memory,
        "memory_entity_links": memory_entity,
        "edges": diffusion_edges + memory_passage + fact_memory + memory_entity,
    }


# -- persistence ----------------------------------------------------------------


def _to_payload(kg: KnowledgeGraph) -> dict:
    return {
        "passages": [
            [p.passage_id, p.doc_id, p.ordinal, p.text]
            for p in sorted(kg.passages.values(), key=lambda p: p.passage_id)
        ],
        "memories": [
            [m.memory_id, m.passage_id, m.think_text, m.memory_text]
            for m in sorted(kg.memories.values(), key=lambda m: m.memory_id)
        ],
        "entities": sorted(kg.entities),
        "relations": sorted(kg.relations),
        "facts": [
            [f.fact_id, f.head, f.relation, f.tail, f.memory_id]
            for f in sorted(kg.facts.values(), key=lambda f: f.fact_id)
        ],
        "memory_entities": {k: sorted(v) for k, v in sorted(kg.memory_entities.items())},
        "entity_to_passages": {k: sorted(v) for k, v in sorted(kg.entity_to_passages.items())},
    }


def _from_payload(data: dict) -> KnowledgeGraph:
    kg = KnowledgeGraph()
    for pid, doc_id, ordinal, text in data["passages"]:
        kg.passages[pid] = Passage(pid, doc_id, ordinal, text)
    for mid, pid, think, memory in data["memories"]:
        kg.memories[mid] = MemoryRecord(mid, pid, think, memory)
        kg.memory_to_passage[mid] = pid
    kg.entities = set(data["entities"])
    kg.relations = set(data["relations"])
    for fid, h, r, t, mid in data["facts"]:
        kg.facts[fid] = Fact(fid, h, r, t, mid)
    kg.memory_entities = {k: set(v) for k, v in data["memory_entities"].items()}
    kg.entity_to_passages = {k: set(v) for k, v in data["entity_to_passages"].items()}
    return kg


def save_graph(kg: KnowledgeGraph, path: str | Path) -> None:
    """Write ``GISTGRAPH-KG <version> sha256=<digest>`` then one JSON object."""
    body = json.dumps(_to_payload(kg), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    digest = hashlib.sha256(body.encode("utf-8")).hexdigest()
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{GRAPH_MAGIC} {GRAPH_VERSION} sha256={digest}\n{body}\n")


def load_graph(path: str | Path) -> KnowledgeGraph:
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise GraphFormatError(f"{path}: cannot read graph file ({exc})") from exc
    header, _, body = raw.partition("\n")
    parts = header.split()
    if len(parts) != 3 or parts[0] != GRAPH_MAGIC or not parts[2].startswith("sha256="):
        raise GraphFormatError(f"{path}: missing {GRAPH_MAGIC} header")
    if parts[1] != str(GRAPH_VERSION):
        raise GraphFormatError(f"{path}: graph version {parts[1]} unsupported (expected {GRAPH_VERSION})")
    body = body.rstrip("\n")
    if hashlib.sha256(body.encode("utf-8")).hexdigest() != parts[2][len("sha256="):]:
        raise GraphFormatError(f"{path}: checksum mismatch (truncated or corrupted file)")
    try:
        return _from_payload(json.loads(body))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise GraphFormatError(f"{path}: malformed graph body ({exc})") from exc
