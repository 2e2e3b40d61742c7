"""Fact-anchored entity activation and random walk with restart.

Activation vectors are 1-D numpy arrays aligned with ``DiffusionGraph.nodes``
(entities first, then passages).
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .embedding import VectorIndex, top_k_mapping
from .graph import DiffusionGraph, KnowledgeGraph


class NoAnchorError(RuntimeError):
    """No entity received any activation, so there is nothing to diffuse."""


@dataclass(frozen=True)
class DiffusionParams:
    # alpha and beta come from reward sweeps on a multi-hop benchmark;
    # the remaining values are conventional.
    K_facts: int = 50
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 0.5
    tol: float = 1e-8
    max_iters: int = 200

    def __post_init__(self):
        if not (isinstance(self.K_facts, int) and self.K_facts >= 1):
            raise ValueError(f"K_facts must be a positive integer, got {self.K_facts!r}")
        if not self.alpha >= 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha!r}")
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta!r}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma!r}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol!r}")
        if not (isinstance(self.max_iters, int) and self.max_iters >= 1):
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters!r}")


def fact_similarities(q_emb: np.ndarray, fact_index: VectorIndex) -> dict[str, float]:
    """Cosine between the query and every textualized fact."""
    return fact_index.similarities(q_emb)


def top_k_facts(sims: Mapping[str, float], K: int) -> list[tuple[str, float]]:
    return top_k_mapping(sims, K)


def entity_fact_score(entity: str, topk: Sequence[tuple[str, float]], kg: KnowledgeGraph) -> float:
    """Mean similarity of the top-K facts that have ``entity`` as head or tail.

    An entity that hits none of them scores 0.
    """
    hits = [score for fid, score in topk if kg.facts[fid].involves(entity)]
    return sum(hits) / len(hits) if hits else 0.0


def frequency_reward(c_v: int, alpha: float, beta: float) -> float:
    """``1 + alpha * (1 - exp(-beta * c_v))``: 1 at zero hits, saturating at 1 + alpha."""
    if c_v < 0:
        raise ValueError("hit count cannot be negative")
    return 1.0 + alpha * -math.expm1(-beta * c_v)


def entity_evidence(topk: Sequence[tuple[str, float]], kg: KnowledgeGraph) -> dict[str, tuple[float, int]]:
    """Per entity: (mean top-K fact similarity, hit count)."""
    total: dict[str, float] = defaultdict(float)
    hits: dict[str, int] = defaultdict(int)
    for fid, score in topk:
        fact = kg.facts[fid]
        for v in {fact.head, fact.tail}:
            total[v] += score
            hits[v] += 1
    return {v: (total[v] / hits[v], hits[v]) for v in total}


def initial_activation(
    topk: Sequence[tuple[str, float]],
    kg: KnowledgeGraph,
    dg: DiffusionGraph,
    params: DiffusionParams,
    normalize: bool = True,
) -> np.ndarray:
    """Seed vector: fact evidence times frequency reward over chunk coverage.

    Negative mean similarities are floored at 0. Passage nodes start at 0.
    Raises :class:`NoAnchorError` when no entity gets positive mass.
    """
    pi0 = np.zeros(dg.n_nodes)
    for v, (fact_score, c_v) in entity_evidence(topk, kg).items():
        i = dg.index.get(v)
        if i is None or i >= dg.n_entities:
            continue
        n_v = dg.chunk_counts[i]
        pi0[i] = max(fact_score, 0.0) * frequency_reward(c_v, params.alpha, params.beta) / max(1.0, n_v)
    total = pi0.sum()
    if not total > 0:
        raise NoAnchorError("top-K facts activate no entity")
    return pi0 / total if normalize else pi0


@dataclass
class DiffusionResult:
    pi: np.ndarray
    converged: bool
    iterations: int
    deltas: list[float] = field(default_factory=list)
    masses: list[float] = field(default_factory=list)


def diffuse(pi0: np.ndarray, dg: DiffusionGraph, params: DiffusionParams) -> DiffusionResult:
    """Iterate ``pi <- (1 - gamma) * W @ pi + gamma * pi0`` to a fixed point.

    Mass sitting on dangling nodes is sent back to ``pi0`` each step, so the
    iterate stays a probability vector. Stops once the L1 change drops below
    ``tol``; hitting ``max_iters`` first returns the last iterate with
    ``converged=False``. ``deltas`` and ``masses`` record every step.
    """
    pi0 = np.asarray(pi0, dtype=float)
    if pi0.shape != (dg.n_nodes,):
        raise ValueError(f"pi0 has shape {pi0.shape}, graph has {dg.n_nodes} nodes")
    if np.any(pi0 < 0) or not np.all(np.isfinite(pi0)):
        raise ValueError("pi0 must be finite and non-negative")
    total = pi0.sum()
    if not total > 0:
        raise NoAnchorError("pi0 carries no mass")
    pi0 = pi0 / total

    g = params.gamma
    W = dg.W
    dangling = dg.dangling
    has_dangling = bool(dangling.any())
    pi = pi0.copy()
    result = DiffusionResult(pi, False, 0, [], [float(pi.sum())])
    for t in range(1, params.max_iters + 1):
        nxt = W @ pi
        if has_dangling:
            nxt += pi[dangling].sum() * pi0
        nxt = (1.0 - g) * nxt + g * pi0
        delta = float(np.abs(nxt - pi).sum())
        pi = nxt
        result.deltas.append(delta)
        result.masses.append(float(pi.sum()))
        result.iterations = t
        if delta < params.tol:
            result.converged = True
            break
    result.pi = pi
    return result


def passage_diffusion_scores(pi_star: np.ndarray, dg: DiffusionGraph) -> dict[str, float]:
    """Stationary activation restricted to passage nodes."""
    return dict(zip(dg.passage_ids, pi_star[dg.n_entities:].tolist()))


def as_mapping(vec: np.ndarray, dg: DiffusionGraph, nonzero: bool = True) -> dict[str, float]:
    return {n: float(x) for n, x in zip(dg.nodes, vec) if not nonzero or x != 0}


def dense_oracle(pi0: np.ndarray, dg: DiffusionGraph, gamma: float) -> np.ndarray:
    """Direct linear solve of the fixed point, dangling restart included.

    Solves ``(I - (1 - gamma) * (W + pi0 d^T)) pi = gamma * pi0`` with ``d`` the
    dangling-node indicator; with no dangling nodes this is
    ``gamma * inv(I - (1 - gamma) W) pi0``. Dense, so for small graphs only.
    """
    pi0 = np.asarray(pi0, dtype=float)
    pi0 = pi0 / pi0.sum()
    M = dg.W.toarray() + np.outer(pi0, dg.dangling.astype(float))
    A = np.eye(dg.n_nodes) - (1.0 - gamma) * M
    return np.linalg.solve(A, gamma * pi0)
