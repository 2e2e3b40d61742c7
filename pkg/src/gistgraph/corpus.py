"""Documents, passages, segmentation and corpus file loading."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

DEFAULT_MAX_TOKENS = 256
MIN_MAX_TOKENS = 32

_PARAGRAPH_BREAK = re.compile(r"\n\s*\n")
_SENTENCE_BREAK = re.compile(r"(?<=[.!?])\s+")


class CorpusError(ValueError):
    """Raised for malformed documents or corpus files."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str = ""

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise CorpusError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class Passage:
    passage_id: str
    doc_id: str
    ordinal: int
    text: str


def passage_id_for(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal}"


def n_tokens(text: str) -> int:
    return len(text.split())


def _pack(units: list[str], max_tokens: int, joiner: str) -> list[str]:
    """Greedily merge consecutive units while the merged length fits."""
    chunks: list[str] = []
    current: list[str] = []
    size = 0
    for unit in units:
        k = n_tokens(unit)
        if current and size + k > max_tokens:
            chunks.append(joiner.join(current))
            current, size = [], 0
        current.append(unit)
        size += k
    if current:
        chunks.append(joiner.join(current))
    return chunks


def _split_long_paragraph(paragraph: str, max_tokens: int) -> list[str]:
    units: list[str] = []
    for sentence in _SENTENCE_BREAK.split(paragraph):
        sentence = sentence.strip()
        if not sentence:
            continue
        tokens = sentence.split()
        if len(tokens) <= max_tokens:
            units.append(sentence)
        else:
            # no sentence boundary inside the budget: hard cut on tokens
            units.extend(
                " ".join(tokens[i:i + max_tokens])
                for i in range(0, len(tokens), max_tokens)
            )
    return _pack(units, max_tokens, " ")


def segment(document: Document, max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Passage]:
    """Split a document into passages of at most ``max_tokens`` whitespace tokens.

    Paragraphs (blank-line separated) are the primary unit and are merged
    greedily with their neighbours. A paragraph that alone exceeds the budget
    is cut at sentence boundaries, and a single overlong sentence is cut on
    tokens. A document that already fits comes back as one passage holding
    the stripped text.
    """
    if max_tokens < MIN_MAX_TOKENS:
        raise CorpusError(f"max_tokens must be >= {MIN_MAX_TOKENS}, got {max_tokens}")
    body = document.text.strip()
    if not body:
        raise CorpusError(f"document {document.doc_id!r} has empty text")

    units: list[str] = []
    for paragraph in _PARAGRAPH_BREAK.split(body):
        paragraph = paragraph.strip()
        if not paragraph:
            continue
        if n_tokens(paragraph) <= max_tokens:
            units.append(paragraph)
        else:
            units.extend(_split_long_paragraph(paragraph, max_tokens))

    chunks = _pack(units, max_tokens, "\n\n")
    return [
        Passage(passage_id_for(document.doc_id, i), document.doc_id, i, chunk)
        for i, chunk in enumerate(chunks)
    ]


def segment_corpus(documents: list[Document], max_tokens: int = DEFAULT_MAX_TOKENS) -> list[Passage]:
    passages: list[Passage] = []
    for doc in documents:
        passages.extend(segment(doc, max_tokens))
    return passages


def _read_jsonl(path: Path):
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc.strerror}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(record, dict):
                raise CorpusError(f"{path}:{lineno}: expected an object")
            yield lineno, record


def load_corpus(path: str | Path, format: str = "jsonl") -> list[Document]:
    """Read documents from a line-delimited JSON file.

    Each record needs ``text``; ``id`` and ``title`` are optional. Records
    without an id get ``doc-<line number>``.
    """
    if format != "jsonl":
        raise CorpusError(f"unsupported corpus format {format!r}")
    path = Path(path)
    documents: list[Document] = []
    seen: set[str] = set()
    for lineno, record in _read_jsonl(path):
        text = record.get("text")
        if not isinstance(text, str) or not text.strip():
            raise CorpusError(f"{path}:{lineno}: record has no usable 'text' field")
        doc_id = record.get("id")
        doc_id = f"doc-{lineno}" if doc_id is None else str(doc_id)
        if doc_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate document id {doc_id!r}")
        seen.add(doc_id)
        documents.append(Document(doc_id=doc_id, text=text, title=str(record.get("title") or "")))
    return documents


def write_corpus(documents: list[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in documents:
            record = {"id": doc.doc_id, "title": doc.title, "text": doc.text}
            fh.write(json.dumps(record, ensure_ascii=False) + "\n")
