"""QA evaluation: exact match, token F1 and passage recall@K."""

from __future__ import annotations

import json
import math
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import CorpusError, _read_jsonl

_ARTICLES = re.compile(r"\b(a|an|the)\b", re.UNICODE)


@dataclass(frozen=True)
class QAExample:
    question: str
    gold_answers: tuple[str, ...]
    gold_passage_ids: tuple[str, ...] = ()
    qid: str = ""

    def __post_init__(self):
        if not self.gold_answers:
            raise ValueError(f"example {self.qid or self.question!r} has no gold answers")


def load_dataset(path: str | Path) -> list[QAExample]:
    """Read ``question`` / ``answers`` / optional ``gold_passage_ids`` records."""
    examples = []
    for lineno, rec in _read_jsonl(Path(path)):
        question, answers = rec.get("question"), rec.get("answers")
        if not isinstance(question, str) or not question.strip():
            raise CorpusError(f"{path}:{lineno}: missing 'question'")
        if isinstance(answers, str):
            answers = [answers]
        if not isinstance(answers, list) or not answers:
            raise CorpusError(f"{path}:{lineno}: 'answers' must be a non-empty list")
        gold = rec.get("gold_passage_ids") or []
        examples.append(
            QAExample(
                question,
                tuple(str(a) for a in answers),
                tuple(str(g) for g in gold),
                str(rec.get("id", f"q{lineno}")),
            )
        )
    return examples


def write_dataset(examples: Iterable[QAExample], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {"id": ex.qid, "question": ex.question, "answers": list(ex.gold_answers)}
            if ex.gold_passage_ids:
                rec["gold_passage_ids"] = list(ex.gold_passage_ids)
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def normalize_answer(s: str) -> str:
    """Lowercase, strip punctuation and English articles, collapse whitespace."""
    s = s.lower()
    s = "".join(ch for ch in s if not unicodedata.category(ch).startswith("P"))
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1_single(pred: str, gold: str) -> float:
    p = normalize_answer(pred).split()
    g = normalize_answer(gold).split()
    if not p or not g:
        return float(p == g)
    common = sum((Counter(p) & Counter(g)).values())
    if common == 0:
        return 0.0
    precision = common / len(p)
    recall = common / len(g)
    return 2 * precision * recall / (precision + recall)


def f1(pred: str, golds: Sequence[str]) -> float:
    """Best bag-of-tokens F1 against any gold answer."""
    return max(_f1_single(pred, g) for g in golds)


def recall_at_k(retrieved: Sequence[str], gold_ids: Iterable[str], K: int, hit_rate: bool = False) -> float:
    """Fraction of gold passages inside the top ``K`` (or 1/0 any-hit with ``hit_rate``)."""
    if K < 1:
        raise ValueError("K must be >= 1")
    gold = set(gold_ids)
    if not gold:
        return 0.0
    hits = len(gold & set(retrieved[:K]))
    if hit_rate:
        return float(hits > 0)
    return hits / len(gold)


def answer_bearing_passages(passages: Mapping[str, str], answers: Sequence[str]) -> set[str]:
    """Ids of passages whose normalized text contains a normalized answer."""
    needles = [n for n in (normalize_answer(a) for a in answers) if n]
    found = set()
    for pid, text in passages.items():
        hay = normalize_answer(text)
        if any(re.search(rf"(?<!\w){re.escape(n)}(?!\w)", hay) for n in needles):
            found.add(pid)
    return found


@dataclass
class EvalReport:
    em: float
    f1: float
    recall_at: dict[int, float]
    n: int
    recall_mode: str = "gold_ids"
    per_example: list[dict] = field(default_factory=list, repr=False)

    def to_record(self) -> dict:
        return {
            "n": self.n,
            "em": round(self.em, 6),
            "f1": round(self.f1, 6),
            "recall_at": {str(k): round(v, 6) for k, v in sorted(self.recall_at.items())},
            "recall_mode": self.recall_mode,
        }

    def table(self) -> str:
        ks = sorted(self.recall_at)
        head = ["n", "EM", "F1"] + [f"R@{k}" for k in ks]
        row = [str(self.n), f"{self.em:.2f}", f"{self.f1:.2f}"] + [f"{self.recall_at[k]:.2f}" for k in ks]
        widths = [max(len(a), len(b)) for a, b in zip(head, row)]
        fmt = "  ".join(f"{{:>{w}}}" for w in widths)
        return fmt.format(*head) + "\n" + fmt.format(*row)


def evaluate(
    dataset: Sequence[QAExample],
    predictions: Sequence[str | None],
    retrieved: Sequence[Sequence[str]] | None = None,
    ks: Sequence[int] = (5,),
    passages: Mapping[str, str] | None = None,
    hit_rate: bool = False,
) -> EvalReport:
    """Aggregate per-example metrics as percentages.

    ``predictions[i]`` may be ``None`` when answers were not generated; EM/F1
    then count as 0. Recall uses ``gold_passage_ids`` when an example has
    them, otherwise answer-bearing passages from ``passages``.
    """
    if not dataset:
        raise ValueError("cannot evaluate an empty dataset")
    if len(predictions) != len(dataset):
        raise ValueError("one prediction per example is required")
    if retrieved is not None and len(retrieved) != len(dataset):
        raise ValueError("one retrieval list per example is required")

    modes = set()
    rows = []
    for i, ex in enumerate(dataset):
        pred = predictions[i]
        row = {"id": ex.qid, "question": ex.question, "prediction": pred}
        row["em"] = exact_match(pred, ex.gold_answers) if pred is not None else 0
        row["f1"] = f1(pred, ex.gold_answers) if pred is not None else 0.0
        if retrieved is not None:
            if ex.gold_passage_ids:
                gold = set(ex.gold_passage_ids)
                modes.add("gold_ids")
            else:
                gold = answer_bearing_passages(passages or {}, ex.gold_answers)
                modes.add("answer_containment")
            row["retrieved"] = list(retrieved[i])
            row["recall_at"] = {str(k): recall_at_k(retrieved[i], gold, k, hit_rate) for k in ks}
        rows.append(row)

    n = len(rows)
    recall = {}
    if retrieved is not None:
        recall = {k: 100.0 * math.fsum(r["recall_at"][str(k)] for r in rows) / n for k in ks}
    mode = "+".join(sorted(modes)) if modes else "none"
    if hit_rate and modes:
        mode += ":hit_rate"
    return EvalReport(
        em=100.0 * math.fsum(r["em"] for r in rows) / n,
        f1=100.0 * math.fsum(r["f1"] for r in rows) / n,
        recall_at=recall,
        n=n,
        recall_mode=mode,
        per_example=rows,
    )
