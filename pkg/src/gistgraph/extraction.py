"""LLM-backed extraction: memories, entities, triples, query splits, answers.

Every call goes through a :class:`Provider` (system prompt + user message in,
assistant text out). :class:`HTTPProvider` talks to a chat-completion
endpoint; :class:`MockProvider` answers the same prompts with fixed text
rules so the whole pipeline runs offline and deterministically.
"""

from __future__ import annotations

import json
import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Iterable, Protocol, Sequence, TypeVar

import httpx

from .corpus import Passage

log = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def load_prompt(name: str) -> str:
    """Return the text of ``prompts/<name>.txt`` exactly as stored."""
    return resources.files("gistgraph").joinpath("prompts", f"{name}.txt").read_text(encoding="utf-8")


NER_PROMPT = load_prompt("ner")
TRIPLE_PROMPT = load_prompt("triple")
MEMORY_PROMPT = load_prompt("memory")
DECOMPOSE_PROMPT = load_prompt("decompose")
QA_PROMPT = load_prompt("qa")


class ExtractionError(RuntimeError):
    """A provider response could not be used, even after a retry."""

    def __init__(self, message: str, raw: str | None = None):
        super().__init__(message)
        self.raw = raw


class ProviderError(RuntimeError):
    """The provider itself failed (transport, HTTP status, bad body)."""


# -- domain types -------------------------------------------------------------


def canonicalize(text: str) -> str:
    """Case-fold, trim and collapse internal whitespace."""
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class MemoryRecord:
    memory_id: str
    passage_id: str
    think_text: str
    memory_text: str


@dataclass(frozen=True)
class EntityMention:
    surface: str
    canonical: str

    @classmethod
    def from_surface(cls, surface: str) -> "EntityMention":
        return cls(surface=surface.strip(), canonical=canonicalize(surface))


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str
    memory_id: str = ""


@dataclass(frozen=True)
class DecompositionResult:
    split: bool
    sub_questions: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.split and self.sub_questions:
            raise ValueError("unsplit result cannot carry sub-questions")
        if self.split and len(self.sub_questions) < 2:
            raise ValueError("a split needs at least two sub-questions")


def memory_id_for(passage_id: str) -> str:
    return f"m:{passage_id}"


# -- providers ----------------------------------------------------------------


class Provider(Protocol):
    def complete(self, system: str, user: str) -> str: ...


class HTTPProvider:
    """Chat-completion client (OpenAI-compatible request/response shape).

    The API key is read from the environment variable named by ``key_env``.
    ``transport`` is passed through to :class:`httpx.Client`, which is how the
    tests drive this class without a network.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        key_env: str = "GISTGRAPH_API_KEY",
        timeout: float = 60.0,
        retries: int = 2,
        temperature: float = 0.0,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model = model
        self.retries = retries
        self.temperature = temperature
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, system: str, user: str) -> str:
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        }
        last: Exception | None = None
        for _ in range(self.retries + 1):
            try:
                resp = self._client.post(f"{self.endpoint}/chat/completions", json=payload)
                resp.raise_for_status()
                return resp.json()["choices"][0]["message"]["content"]
            except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
                last = exc
                log.warning("chat completion failed: %s", exc)
        raise ProviderError(f"chat completion failed after {self.retries + 1} attempts: {last}")

    def close(self) -> None:
        self._client.close()


# Mock rules. Kept deliberately simple so test fixtures can plant exact
# graph structure through the passage text.

_ANSWER_SPAN = re.compile(r"\[ANS\](.*?)\[/ANS\]", re.S)
_ANSWER_TAGS = re.compile(r"\[/?ANS\]")
_WORD = re.compile(r"[^\W_][\w'’\-]*\.?|[,;:!?()]", re.UNICODE)
_CONNECTORS = {"of", "de", "du", "la", "le", "von", "van", "der", "den", "del", "da", "di", "y"}
_LEADING_STOP = {
    "the", "a", "an", "in", "on", "at", "by", "for", "from", "to", "and", "but", "or",
    "he", "she", "it", "they", "his", "her", "its", "their", "this", "that", "these",
    "those", "there", "when", "where", "which", "who", "what", "after", "before",
    "during", "as", "with", "while", "however", "since", "also",
}
_COMPARATIVES = {
    "later", "earlier", "older", "younger", "first", "last", "longer", "shorter",
    "larger", "bigger", "smaller", "higher", "lower", "more", "fewer", "same",
    "different", "both",
}
_FAMILY = {
    "mother", "father", "parent", "son", "daughter", "wife", "husband", "spouse",
    "brother", "sister", "sibling", "uncle", "aunt", "grandfather", "grandmother",
    "child", "children", "friend",
}


def _is_entity_token(token: str) -> bool:
    head = token[0]
    return head.isupper() or head.isdigit()


def mock_entities(text: str) -> list[str]:
    """Maximal runs of capitalized or numeric tokens, in order of appearance.

    Lowercase connectors ("of", "de", ...) may sit inside a run but never at
    its ends; a sentence-initial function word ("The", "In") is dropped from
    the front of a run. Punctuation ends a run, and lines in
    ``head | relation | tail`` form are ignored.
    """
    text = _ANSWER_TAGS.sub("", text)
    found: list[str] = []

    def flush(run: list[str]):
        while run and run[-1] in _CONNECTORS:
            run.pop()
        while run and (run[0].casefold() in _LEADING_STOP or run[0] in _CONNECTORS):
            run.pop(0)
        if run:
            found.append(" ".join(run))

    for line in text.splitlines():
        if line.count("|") >= 2:
            continue
        run: list[str] = []
        for token in _WORD.findall(line):
            ends_run = False
            if token in ",;:!?()":
                flush(run)
                run = []
                continue
            if token.endswith("."):
                token = token.rstrip(".")
                ends_run = True
                if not token:
                    flush(run)
                    run = []
                    continue
            if _is_entity_token(token):
                run.append(token)
            elif run and token in _CONNECTORS:
                run.append(token)
            else:
                flush(run)
                run = []
            if ends_run:
                flush(run)
                run = []
        flush(run)

    seen: set[str] = set()
    unique = []
    for surface in found:
        key = canonicalize(surface)
        if key not in seen:
            seen.add(key)
            unique.append(surface)
    return unique


def mock_triple_lines(text: str) -> list[list[str]]:
    triples = []
    for line in text.splitlines():
        parts = [p.strip() for p in line.split("|")]
        if len(parts) == 3 and all(parts):
            triples.append(parts)
    return triples


def normalize_memory_text(text: str) -> str:
    """Light normalization: collapse spaces within lines, drop blank lines."""
    lines = (" ".join(line.split()) for line in text.splitlines())
    return "\n".join(line for line in lines if line)


def _sub_question(head: str, option: str) -> str:
    h = head.casefold()
    if "director" in h and ("born" in h or "birth" in h):
        return f"What is the birth year of the director of {option}?"
    if any(w in h for w in ("born", "birth", "older", "younger")):
        return f"What is the birth year of {option}?"
    if any(w in h for w in ("released", "release", "came out")):
        return f"What is the release date of {option}?"
    if "died" in h or "death" in h:
        return f"When did {option} die?"
    return f"What is known about {option}?"


def mock_decompose(question: str, max_splits: int) -> dict:
    q = question.strip().rstrip("?").strip()
    no_split = {"split": False, "sub_questions": []}
    if "," not in q:
        return no_split
    head, tail = q.rsplit(",", 1)
    words = set(re.findall(r"\w+", head.casefold()))
    if not words & _COMPARATIVES or words & _FAMILY:
        return no_split
    options = [o.strip() for o in tail.split(" or ")]
    if len(options) != 2 or not all(options):
        return no_split
    subs = [_sub_question(head, o) for o in options][:max_splits]
    return {"split": True, "sub_questions": subs}


_USER_BODY = re.compile(r"^(?:Passage|Paragraph):\n(.*?)(?:\n\nNamed entities: .*)?$", re.S)
_QUESTION_LINE = re.compile(r"^Question: (.*)$", re.M)
_MAX_SPLITS = re.compile(r"provide up to (\d+) short sub-questions")


def _user_body(user: str) -> str:
    m = _USER_BODY.match(user)
    return m.group(1) if m else user


class MockProvider:
    """Rule-based stand-in for a chat model.

    The task is recognised from the system prompt. ``overrides`` maps a
    substring of the user message to a canned response, which lets tests
    inject malformed output for specific inputs. Reentrant; ``calls`` is the
    only state and only grows.
    """

    def __init__(self, overrides: dict[str, str | Sequence[str]] | None = None):
        self.overrides = dict(overrides or {})
        self.calls: list[tuple[str, str]] = []
        self._override_hits: dict[str, int] = {}

    def complete(self, system: str, user: str) -> str:
        self.calls.append((system, user))
        for pattern, response in self.overrides.items():
            if pattern in user:
                if isinstance(response, str):
                    return response
                i = self._override_hits.get(pattern, 0)
                self._override_hits[pattern] = i + 1
                return response[min(i, len(response) - 1)]

        if system == MEMORY_PROMPT:
            memory = normalize_memory_text(_user_body(user))
            return f"<think>\n- direct factual text; light normalization only\n</think>\n<memory>\n{memory}\n</memory>"
        if system == NER_PROMPT:
            return json.dumps(mock_entities(_user_body(user)), ensure_ascii=False)
        if system == TRIPLE_PROMPT:
            return json.dumps(mock_triple_lines(_user_body(user)), ensure_ascii=False)
        if system.startswith("You are a query decomposition assistant"):
            m = _MAX_SPLITS.search(system)
            q = _QUESTION_LINE.search(user)
            question = q.group(1) if q else user
            return json.dumps(mock_decompose(question, int(m.group(1)) if m else 2), ensure_ascii=False)
        if system == QA_PROMPT:
            span = _ANSWER_SPAN.search(user.split("\nQuestion: ")[0])
            return span.group(1).strip() if span else ""
        raise ProviderError("mock provider does not recognise this system prompt")


# -- response parsing ---------------------------------------------------------

_THINK = re.compile(r"<think>(.*?)</think>", re.S)
_MEMORY = re.compile(r"<memory>(.*?)</memory>", re.S)
_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$")


def parse_memory_response(raw: str) -> tuple[str, str]:
    think = _THINK.search(raw)
    memory = _MEMORY.search(raw)
    if think is None or memory is None:
        raise ValueError("response lacks a <think> or <memory> region")
    memory_text = memory.group(1).strip()
    if not memory_text:
        raise ValueError("empty <memory> region")
    return think.group(1).strip(), memory_text


def _parse_json(raw: str):
    return json.loads(_FENCE.sub("", raw.strip()))


def parse_entity_list(raw: str) -> list[str]:
    data = _parse_json(raw)
    if isinstance(data, dict):
        data = data.get("named_entities", data.get("entities"))
    if not isinstance(data, list):
        raise ValueError("expected a JSON list of entities")
    return [str(x) for x in data if isinstance(x, (str, int, float)) and str(x).strip()]


def parse_triple_list(raw: str) -> list[tuple[str, str, str]]:
    data = _parse_json(raw)
    if isinstance(data, dict):
        data = data.get("triples")
    if not isinstance(data, list):
        raise ValueError("expected a JSON list of triples")
    out = []
    for item in data:
        if isinstance(item, (list, tuple)) and len(item) == 3:
            h, r, t = (str(x) for x in item)
            if canonicalize(h) and canonicalize(t) and r.strip():
                out.append((h, r, t))
                continue
        log.debug("dropping malformed triple %r", item)
    return out


def parse_decomposition(raw: str, max_splits: int) -> DecompositionResult:
    data = _parse_json(raw)
    if not isinstance(data, dict) or not isinstance(data.get("split"), bool):
        raise ValueError("expected an object with a boolean 'split'")
    subs = data.get("sub_questions") or []
    if not isinstance(subs, list):
        raise ValueError("'sub_questions' must be a list")
    subs = [s.strip() for s in subs if isinstance(s, str) and s.strip()][:max_splits]
    if not data["split"] or len(subs) < 2:
        return DecompositionResult(False)
    return DecompositionResult(True, tuple(subs))


# -- user message formats -------------------------------------------------------


def memory_message(passage: Passage) -> str:
    return f"Passage:\n{passage.text}"


def ner_message(memory: MemoryRecord) -> str:
    return f"Paragraph:\n{memory.memory_text}"


def triple_message(memory: MemoryRecord, entities: Sequence[EntityMention]) -> str:
    names = json.dumps([e.surface for e in entities], ensure_ascii=False)
    return f"Paragraph:\n{memory.memory_text}\n\nNamed entities: {names}"


def qa_message(question: str, evidence: Sequence) -> str:
    blocks = []
    for i, pair in enumerate(evidence, start=1):
        blocks.append(f"[{i}] Passage:\n{pair.passage.text}\n[{i}] Memory:\n{pair.memory.memory_text}")
    return "\n\n".join(blocks) + f"\nQuestion: {question}\nAnswer:"


# -- extractor ----------------------------------------------------------------


@dataclass
class Extractor:
    """Runs the extraction prompts against a provider.

    Malformed output is retried once; after that each operation falls back
    as documented on the method.
    """

    provider: Provider
    max_workers: int = 4
    retries: int = 1
    _stats: dict[str, int] = field(default_factory=dict, repr=False)

    def _ask(self, system: str, user: str, parse: Callable[[str], R]) -> tuple[R | None, str]:
        raw = ""
        for attempt in range(self.retries + 1):
            raw = self.provider.complete(system, user)
            try:
                return parse(raw), raw
            except (ValueError, TypeError) as exc:
                log.debug("unparseable response (attempt %d): %s", attempt + 1, exc)
        return None, raw

    def extract_memory(self, passage: Passage) -> MemoryRecord:
        if not passage.text.strip():
            raise ExtractionError(f"passage {passage.passage_id} is empty")
        parsed, raw = self._ask(MEMORY_PROMPT, memory_message(passage), parse_memory_response)
        if parsed is None:
            raise ExtractionError(
                f"no usable <think>/<memory> output for passage {passage.passage_id}", raw=raw
            )
        think, memory = parsed
        return MemoryRecord(memory_id_for(passage.passage_id), passage.passage_id, think, memory)

    def extract_entities(self, memory: MemoryRecord) -> list[EntityMention]:
        """Named entities in the memory text; ``[]`` if the output never parses."""
        parsed, _ = self._ask(NER_PROMPT, ner_message(memory), parse_entity_list)
        if parsed is None:
            log.warning("NER output unparseable for %s; using no entities", memory.memory_id)
            return []
        mentions: list[EntityMention] = []
        seen: set[str] = set()
        for surface in parsed:
            mention = EntityMention.from_surface(surface)
            if mention.canonical and mention.canonical not in seen:
                seen.add(mention.canonical)
                mentions.append(mention)
        return mentions

    def extract_triples(self, memory: MemoryRecord, entities: Sequence[EntityMention]) -> list[Triple]:
        """Canonicalized, de-duplicated triples; ``[]`` if the output never parses."""
        parsed, _ = self._ask(TRIPLE_PROMPT, triple_message(memory, entities), parse_triple_list)
        if parsed is None:
            log.warning("triple output unparseable for %s; using no triples", memory.memory_id)
            return []
        triples: list[Triple] = []
        seen: set[Triple] = set()
        for h, r, t in parsed:
            triple = Triple(canonicalize(h), " ".join(r.split()), canonicalize(t), memory.memory_id)
            if triple not in seen:
                seen.add(triple)
                triples.append(triple)
        return triples

    def decompose_query(self, question: str, max_splits: int = 2) -> DecompositionResult:
        """Decide whether to split; any unusable output means no split."""
        if max_splits < 2:
            raise ValueError("max_splits must be >= 2")
        system = DECOMPOSE_PROMPT.format(max_splits=max_splits)
        parsed, _ = self._ask(
            system, f"Question: {question}", lambda raw: parse_decomposition(raw, max_splits)
        )
        return parsed if parsed is not None else DecompositionResult(False)

    def generate_answer(self, question: str, evidence: Sequence) -> str:
        return self.provider.complete(QA_PROMPT, qa_message(question, evidence)).strip()

    def map(self, fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
        """Apply ``fn`` with at most ``max_workers`` calls in flight; order is kept."""
        items = list(items)
        if self.max_workers <= 1 or len(items) <= 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.max_workers) as pool:
            return list(pool.map(fn, items))
