"""Synthetic corpora with planted answers, for offline end-to-end checks.

Passages carry their facts twice: as prose for the dense side and as
``head | relation | tail`` lines that the mock provider turns into triples.
Answer spans are wrapped in ``[ANS]...[/ANS]`` so the mock generator can
read them back out of the evidence.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Document, passage_id_for, write_corpus
from .metrics import QAExample, write_dataset

_ONSETS = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "dr", "gr", "kl", "tr", "st"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ei", "ou"]
_CODAS = ["", "", "n", "r", "s", "l", "th", "x"]
_JOBS = ["painter", "engineer", "merchant", "sailor", "teacher", "chemist", "architect", "farmer"]


class NameGen:
    """Capitalized pseudo-words, never repeated within one generator."""

    def __init__(self, rng: random.Random):
        self.rng = rng
        self.used: set[str] = set()

    def word(self) -> str:
        while True:
            n = self.rng.choice((2, 3))
            w = "".join(
                self.rng.choice(_ONSETS) + self.rng.choice(_VOWELS) + self.rng.choice(_CODAS)
                for _ in range(n)
            )
            w = w.capitalize()
            if w not in self.used and len(w) > 3:
                self.used.add(w)
                return w

    def name(self, parts: int = 2) -> str:
        return " ".join(self.word() for _ in range(parts))


@dataclass
class PlantedCorpus:
    documents: list[Document]
    examples: list[QAExample]
    truth: dict = field(default_factory=dict)


def _doc(i: int, text: str) -> Document:
    return Document(doc_id=f"d{i:04d}", text=text)


def make_planted_corpus(
    n_passages: int = 200,
    n_single: int = 10,
    n_comparative: int = 10,
    seed: int = 0,
) -> PlantedCorpus:
    """Build a corpus of one-passage documents plus questions with gold ids.

    Single-hop questions ask for a person's birthplace. Comparative
    questions ask which of two films has the later-born director; each needs
    four gold passages (two film pages, two director pages). The rest of
    the corpus is distractor biographies over a shared pool of cities,
    including a second passage for every single-hop person.
    """
    rng = random.Random(seed)
    names = NameGen(rng)
    gold_count = n_single * 2 + n_comparative * 4
    if n_passages < gold_count:
        raise ValueError(f"need at least {gold_count} passages for the requested questions")

    texts: list[str] = []
    examples: list[QAExample] = []
    truth = {"facts": 0}

    def add(text: str, n_facts: int) -> str:
        texts.append(text)
        truth["facts"] += n_facts
        return passage_id_for(f"d{len(texts) - 1:04d}", 0)

    cities = [names.word() for _ in range(12)]

    for q in range(n_single):
        person, city = names.name(), names.word()
        pid = add(
            f"{person} was born in [ANS]{city}[/ANS] and grew up near the river.\n"
            f"{person} | birthplace | {city}",
            1,
        )
        job, elsewhere = rng.choice(_JOBS), rng.choice(cities)
        add(
            f"{person} later worked as a {job} in {elsewhere}.\n"
            f"{person} | occupation | {job}\n{person} | work location | {elsewhere}",
            2,
        )
        examples.append(QAExample(f"Where was {person} born?", (city,), (pid,), f"single-{q}"))

    for q in range(n_comparative):
        films, directors, years = [], [], rng.sample(range(1890, 1960), 2)
        for _ in range(2):
            films.append(names.name())
            directors.append(names.name())
        later = 0 if years[0] > years[1] else 1
        gold = []
        for side in range(2):
            film, director, year = films[side], directors[side], years[side]
            title = f"[ANS]{film}[/ANS]" if side == later else film
            release = rng.randrange(1965, 2020)
            gold.append(add(
                f"{title} is a {release} drama film directed by {director}.\n"
                f"{film} | directed by | {director}\n{film} | released in | {release}",
                2,
            ))
            gold.append(add(
                f"{director} is a film director known for {film}. {director} was born in {year}.\n"
                f"{director} | born in | {year}\n{director} | known for | {film}",
                2,
            ))
        question = f"Which film has the director born later, {films[0]} or {films[1]}?"
        examples.append(QAExample(question, (films[later],), tuple(gold), f"comparative-{q}"))

    while len(texts) < n_passages:
        person, company, city = names.name(), names.name(), rng.choice(cities)
        kind = rng.randrange(3)
        if kind == 0:
            add(
                f"{person} founded {company} in {city}.\n"
                f"{person} | founded | {company}\n{company} | located in | {city}",
                2,
            )
        elif kind == 1:
            add(
                f"{person} studied music in {city} and played the cello.\n"
                f"{person} | educated in | {city}\n{person} | instrument | cello",
                2,
            )
        else:
            add(
                f"{company} is a shipping company based in {city}.\n{company} | based in | {city}",
                1,
            )

    documents = [_doc(i, t) for i, t in enumerate(texts)]
    truth["passages"] = len(documents)
    return PlantedCorpus(documents, examples, truth)


PLANTED_DIM = 4096


def write_planted(outdir, seed: int = 0, dim: int = PLANTED_DIM, **kwargs) -> Path:
    """Write corpus, dataset and a mock-mode config into ``outdir``; return the config path.

    The config uses a wider hashing embedder than the default, since 256
    buckets collide often enough on 200 passages to blur the planted signal.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    pc = make_planted_corpus(seed=seed, **kwargs)
    write_corpus(pc.documents, outdir / "corpus.jsonl")
    write_dataset(pc.examples, outdir / "dataset.jsonl")
    cfg = {
        "corpus": "corpus.jsonl",
        "dataset": "dataset.jsonl",
        "workdir": "index",
        "provider": {"mode": "mock"},
        "embedder": {"mode": "mock", "dim": dim},
    }
    path = outdir / "config.json"
    path.write_text(json.dumps(cfg, indent=2) + "\n", encoding="utf-8")
    return path
