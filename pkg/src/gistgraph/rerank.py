"""Passage reranking: normalized score fusion, split-query merge, evidence pairs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence, Union

import numpy as np

from .corpus import Passage
from .embedding import VectorIndex, rank_ids
from .extraction import MemoryRecord
from .graph import KnowledgeGraph

DEFAULT_DELTA = 1e-8
# mostly diffusion, with a little dense similarity to break ties
DEFAULT_EPSILON = 0.95
DEFAULT_N_DENSE = 200


class EvidenceError(LookupError):
    """A retrieved passage has no memory (the passage/memory pairing is broken)."""


@dataclass(frozen=True)
class RankedPassage:
    passage_id: str
    s_diff: float
    s_sim: float
    s_fused: float


@dataclass(frozen=True)
class EvidencePair:
    passage: Passage
    memory: MemoryRecord

    def __post_init__(self):
        if self.memory.passage_id != self.passage.passage_id:
            raise EvidenceError(
                f"memory {self.memory.memory_id} belongs to {self.memory.passage_id}, "
                f"not {self.passage.passage_id}"
            )


def minmax_normalize(scores: Mapping[str, float], delta: float = DEFAULT_DELTA) -> dict[str, float]:
    """``(x - min) / (max - min + delta)``; a constant input maps to zeros."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if not scores:
        return {}
    values = np.fromiter(scores.values(), dtype=float, count=len(scores))
    lo = values.min()
    span = values.max() - lo + delta
    return dict(zip(scores, ((values - lo) / span).tolist()))


def sort_ranked(items: Sequence[RankedPassage]) -> list[RankedPassage]:
    return sorted(items, key=lambda r: (-r.s_fused, r.passage_id))


def fuse(
    norm_diff: Mapping[str, float],
    norm_sim: Mapping[str, float],
    epsilon: float = DEFAULT_EPSILON,
    raw_diff: Mapping[str, float] | None = None,
    raw_sim: Mapping[str, float] | None = None,
) -> list[RankedPassage]:
    """Convex combination ``epsilon * diff + (1 - epsilon) * sim``, best first.

    A key missing from one normalized side counts as that side's minimum (0).
    ``raw_*`` only feed the ``s_diff``/``s_sim`` fields of the output.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError(f"epsilon must lie in [0, 1], got {epsilon}")
    raw_diff = raw_diff if raw_diff is not None else norm_diff
    raw_sim = raw_sim if raw_sim is not None else norm_sim
    out = []
    for pid in set(norm_diff) | set(norm_sim):
        d = norm_diff.get(pid, 0.0)
        s = norm_sim.get(pid, 0.0)
        out.append(
            RankedPassage(
                pid,
                float(raw_diff.get(pid, 0.0)),
                float(raw_sim.get(pid, 0.0)),
                epsilon * d + (1.0 - epsilon) * s,
            )
        )
    return sort_ranked(out)


def candidate_set(
    q_emb: np.ndarray,
    passage_index: VectorIndex,
    diffusion_scores: Mapping[str, float],
    n_dense: int = DEFAULT_N_DENSE,
) -> set[str]:
    """Passages the diffusion reached plus the dense top ``n_dense``."""
    if len(passage_index) == 0:
        raise ValueError("cannot rank over an empty corpus")
    reached = {pid for pid, s in diffusion_scores.items() if s > 0}
    dense = {pid for pid, _ in passage_index.top_k(q_emb, n_dense)}
    return reached | dense


def rank_candidates(
    s_diff: Mapping[str, float],
    s_sim: Mapping[str, float],
    candidates: set[str],
    epsilon: float = DEFAULT_EPSILON,
    delta: float = DEFAULT_DELTA,
) -> list[RankedPassage]:
    """Normalize both signals over ``candidates`` and fuse them.

    A candidate absent from a raw score map takes that map's minimum over the
    candidates that do have a value.
    """

    def restrict(raw: Mapping[str, float]) -> dict[str, float]:
        present = [raw[p] for p in candidates if p in raw]
        floor = min(present) if present else 0.0
        return {p: float(raw.get(p, floor)) for p in candidates}

    diff = restrict(s_diff)
    sim = restrict(s_sim)
    return fuse(minmax_normalize(diff, delta), minmax_normalize(sim, delta), epsilon, diff, sim)


Ranked = Union[RankedPassage, tuple]


def _id_score(item: Ranked) -> tuple[str, float]:
    if isinstance(item, RankedPassage):
        return item.passage_id, item.s_fused
    return item[0], float(item[1])


def merge_2_2_1(ranked_per_subq: Sequence[Sequence[Ranked]], K: int = 5) -> list[str]:
    """Pick the final top-K across sub-query rankings.

    One list: its first K distinct ids. With m lists, each contributes its
    best ``(K - 1) // m`` ids not already chosen (for K=5, m=2: two each),
    then the rest is filled with the highest fused scores left in the union
    of all lists (a passage ranked by several sub-queries uses its best
    score). Items are RankedPassage or ``(id, score)`` pairs.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    lists = [[_id_score(x) for x in ranked] for ranked in ranked_per_subq]
    chosen: list[str] = []
    taken: set[str] = set()

    if len(lists) == 1:
        for pid, _ in lists[0]:
            if len(chosen) == K:
                break
            if pid not in taken:
                taken.add(pid)
                chosen.append(pid)
        return chosen

    quota = (K - 1) // len(lists) if lists else 0
    for ranked in lists:
        got = 0
        for pid, _ in ranked:
            if got == quota:
                break
            if pid not in taken:
                taken.add(pid)
                chosen.append(pid)
                got += 1

    best: dict[str, float] = {}
    for ranked in lists:
        for pid, score in ranked:
            if pid not in taken and score > best.get(pid, -np.inf):
                best[pid] = score
    if best and len(chosen) < K:
        ids = list(best)
        for pid, _ in rank_ids(np.array([best[i] for i in ids]), ids, K - len(chosen)):
            chosen.append(pid)
    return chosen


def assemble_evidence(passage_ids: Sequence[str], kg: KnowledgeGraph) -> list[EvidencePair]:
    """Pair each passage with its memory, keeping the given order."""
    pairs = []
    for pid in passage_ids:
        passage = kg.passages.get(pid)
        if passage is None:
            raise EvidenceError(f"unknown passage {pid!r}")
        mid = kg.passage_to_memory.get(pid)
        if mid is None or mid not in kg.memories:
            raise EvidenceError(f"passage {pid!r} has no memory")
        pairs.append(EvidencePair(passage, kg.memories[mid]))
    return pairs
