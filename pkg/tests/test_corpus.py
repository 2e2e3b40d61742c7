import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gistgraph.corpus import (
    CorpusError,
    Document,
    load_corpus,
    n_tokens,
    segment,
    write_corpus,
)


def words(n, prefix="w"):
    return " ".join(f"{prefix}{i}" for i in range(n))


def test_three_short_paragraphs_stay_separate_when_merging_overflows():
    paras = [words(20, "a"), words(20, "b"), words(20, "c")]
    out = segment(Document("d", "\n\n".join(paras)), max_tokens=32)
    assert [p.text for p in out] == paras
    assert [p.ordinal for p in out] == [0, 1, 2]
    assert [p.passage_id for p in out] == ["d#0", "d#1", "d#2"]


def test_single_word_document_is_identity():
    out = segment(Document("d", "Hello"), max_tokens=32)
    assert len(out) == 1 and out[0].text == "Hello"


def test_thousand_tokens_split_at_paragraph_boundaries():
    paras = [words(250, f"p{k}_") for k in range(4)]
    out = segment(Document("d", "\n\n".join(paras)), max_tokens=300)
    # brute force: each paragraph is 250 tokens, any two overflow 300
    assert len(out) == 4
    assert [p.text for p in out] == paras
    assert all(n_tokens(p.text) <= 300 for p in out)


def test_small_paragraphs_are_packed_greedily():
    paras = [words(10, c) for c in "abcde"]
    out = segment(Document("d", "\n\n".join(paras)), max_tokens=32)
    assert [n_tokens(p.text) for p in out] == [30, 20]


def test_overlong_paragraph_falls_back_to_sentences():
    sentences = [words(20, f"s{k}_") + "." for k in range(5)]
    out = segment(Document("d", " ".join(sentences)), max_tokens=45)
    assert [n_tokens(p.text) for p in out] == [40, 40, 20]
    assert " ".join(p.text for p in out) == " ".join(sentences)


def test_overlong_sentence_is_cut_on_tokens():
    out = segment(Document("d", words(100)), max_tokens=32)
    assert [n_tokens(p.text) for p in out] == [32, 32, 32, 4]


def test_empty_text_and_small_budget_rejected():
    with pytest.raises(CorpusError):
        Document("d", "   ")
    with pytest.raises(CorpusError, match="max_tokens"):
        segment(Document("d", "x"), max_tokens=31)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.lists(st.sampled_from(["alpha", "beta.", "Gamma", "d", "e!"]), min_size=1, max_size=120),
             min_size=1, max_size=6),
    st.integers(32, 80),
)
def test_segment_invariants(paragraphs, max_tokens):
    text = "\n\n".join(" ".join(p) for p in paragraphs)
    doc = Document("x", text)
    out = segment(doc, max_tokens)
    assert out == segment(doc, max_tokens)
    assert all(p.text.strip() for p in out)
    assert all(n_tokens(p.text) <= max_tokens for p in out)
    assert [p.ordinal for p in out] == list(range(len(out)))
    # no token is lost or reordered
    assert " ".join(p.text for p in out).split() == text.split()


def test_load_corpus_ids_blank_lines_and_errors(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text('{"id": "a", "text": "one"}\n{"text": "two", "title": "T"}\n\n', encoding="utf-8")
    docs = load_corpus(path)
    assert [d.doc_id for d in docs] == ["a", "doc-2"]
    assert docs[1].title == "T"

    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"id": "a", "text": "one"}\n{"id": "b"}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":2:"):
        load_corpus(bad)

    broken = tmp_path / "broken.jsonl"
    broken.write_text('{"id": "a", "text": "one"}\n{oops\n', encoding="utf-8")
    with pytest.raises(CorpusError, match=":2: invalid JSON"):
        load_corpus(broken)

    dup = tmp_path / "dup.jsonl"
    dup.write_text('{"id": "a", "text": "one"}\n{"id": "a", "text": "two"}\n', encoding="utf-8")
    with pytest.raises(CorpusError, match="duplicate"):
        load_corpus(dup)

    with pytest.raises(CorpusError, match="unsupported"):
        load_corpus(path, format="csv")


def test_write_then_load_round_trip(tmp_path):
    docs = [Document("x1", "Ünïcode text", "t"), Document("x2", "more")]
    write_corpus(docs, tmp_path / "c.jsonl")
    assert load_corpus(tmp_path / "c.jsonl") == docs
    first = json.loads((tmp_path / "c.jsonl").read_text(encoding="utf-8").splitlines()[0])
    assert first == {"id": "x1", "title": "t", "text": "Ünïcode text"}
