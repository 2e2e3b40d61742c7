"""Builders shared by the test modules."""

from __future__ import annotations

import numpy as np

from gistgraph.corpus import Passage
from gistgraph.extraction import EntityMention, MemoryRecord, Triple, memory_id_for
from gistgraph.graph import build_diffusion_graph, build_graph


def make_kg(spec: dict[str, list[tuple[str, str, str]]], mentions: dict[str, list[str]] | None = None):
    """Knowledge graph from ``{passage_id: [(head, rel, tail), ...]}``.

    Every passage gets a memory whose text is the passage text.
    """
    passages, memories, triples = [], [], []
    for pid, facts in spec.items():
        text = f"text of {pid}"
        passages.append(Passage(pid, pid.split("#")[0], 0, text))
        mid = memory_id_for(pid)
        memories.append(MemoryRecord(mid, pid, "", text))
        triples.extend(Triple(h, r, t, mid) for h, r, t in facts)
    ments = None
    if mentions:
        ments = {memory_id_for(pid): [EntityMention.from_surface(n) for n in names]
                 for pid, names in mentions.items()}
    return build_graph(memories, triples, passages, ments)


def random_kg(rng: np.random.Generator, max_nodes: int = 200, dangling: bool = False):
    """Random entity/passage graph with at most ``max_nodes`` diffusion nodes.

    Entities hang off passages through facts, so no node is isolated unless
    ``dangling`` asks for a few bare passages.
    """
    n_pass = int(rng.integers(2, max_nodes // 3))
    n_ent = int(rng.integers(2, max_nodes - n_pass - (5 if dangling else 0)))
    ents = [f"e{i:03d}" for i in range(n_ent)]
    spec: dict[str, list] = {f"p{i:03d}#0": [] for i in range(n_pass)}
    pids = list(spec)
    # every entity appears in at least one fact
    order = rng.permutation(n_ent)
    for k in range(n_ent):
        h = ents[order[k]]
        t = ents[order[(k + 1) % n_ent]]
        spec[pids[int(rng.integers(n_pass))]].append((h, "r", t))
    for _ in range(int(rng.integers(0, 2 * n_ent))):
        h, t = rng.choice(ents, 2, replace=False)
        spec[pids[int(rng.integers(n_pass))]].append((str(h), f"r{int(rng.integers(3))}", str(t)))
    # passages without facts still need a link unless we want them dangling
    mentions = {pid: [str(rng.choice(ents))] for pid, facts in spec.items() if not facts}
    if dangling:
        for i in range(int(rng.integers(1, 5))):
            spec[f"z{i:03d}#0"] = []
    kg = make_kg(spec, mentions)
    return kg, build_diffusion_graph(kg)


def random_pi0(rng: np.random.Generator, dg) -> np.ndarray:
    pi0 = np.zeros(dg.n_nodes)
    k = int(rng.integers(1, min(5, dg.n_entities) + 1))
    seeds = rng.choice(dg.n_entities, k, replace=False)
    pi0[seeds] = rng.random(k) + 0.01
    return pi0 / pi0.sum()


def transition_oracle(kg, dg) -> np.ndarray:
    """Row-stochastic transition matrix built straight from the KG links.

    ``P[i, j]`` is the chance of stepping from node i to node j. Written
    independently of ``build_diffusion_graph``.
    """
    n = dg.n_nodes
    pos = {node: i for i, node in enumerate(dg.nodes)}
    A = np.zeros((n, n))
    for f in kg.facts.values():
        if f.head != f.tail:
            A[pos[f.head], pos[f.tail]] += 1
            A[pos[f.tail], pos[f.head]] += 1
    for e, pids in kg.entity_to_passages.items():
        for p in pids:
            A[pos[e], pos[p]] += 1
            A[pos[p], pos[e]] += 1
    rows = A.sum(axis=1, keepdims=True)
    return np.divide(A, rows, out=np.zeros_like(A), where=rows > 0)


def rwr_oracle(P: np.ndarray, pi0: np.ndarray, gamma: float) -> np.ndarray:
    """gamma * (I - (1 - gamma) P^T)^-1 pi0, with dangling rows restarting to pi0."""
    n = len(pi0)
    P = P.copy()
    dangling = P.sum(axis=1) == 0
    P[dangling] = pi0
    return gamma * np.linalg.solve(np.eye(n) - (1 - gamma) * P.T, pi0)
