import json
import logging

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gistgraph.corpus import Passage
from gistgraph.extraction import (
    DECOMPOSE_PROMPT,
    MEMORY_PROMPT,
    NER_PROMPT,
    QA_PROMPT,
    TRIPLE_PROMPT,
    DecompositionResult,
    EntityMention,
    ExtractionError,
    Extractor,
    HTTPProvider,
    MemoryRecord,
    MockProvider,
    ProviderError,
    Triple,
    canonicalize,
    mock_entities,
    parse_decomposition,
)
from gistgraph.rerank import EvidencePair


def passage(text, pid="d#0"):
    return Passage(pid, pid.split("#")[0], 0, text)


def memory(text, pid="d#0"):
    return MemoryRecord("m:" + pid, pid, "", text)


@pytest.fixture
def ex():
    return Extractor(MockProvider(), max_workers=1)


def test_prompts_ship_with_the_package():
    assert NER_PROMPT.startswith("Your task is to extract named entities")
    assert "RDF" in TRIPLE_PROMPT
    assert "<memory>" in MEMORY_PROMPT and "<think>" in MEMORY_PROMPT
    assert "{max_splits}" in DECOMPOSE_PROMPT
    assert DECOMPOSE_PROMPT.format(max_splits=3).count("up to 3") == 1
    assert QA_PROMPT.strip()


# -- memory ---------------------------------------------------------------------


def test_mock_memory_passes_text_through(ex):
    rec = ex.extract_memory(passage("Ermengarde of Tours   died 20 March 851."))
    assert rec.memory_text == "Ermengarde of Tours died 20 March 851."
    assert rec.memory_id == "m:d#0" and rec.passage_id == "d#0"


def test_memory_response_is_parsed():
    prov = MockProvider({"Passage:": "<think>x</think><memory>Y died in 851.</memory>"})
    rec = Extractor(prov).extract_memory(passage("whatever"))
    assert (rec.think_text, rec.memory_text) == ("x", "Y died in 851.")


@pytest.mark.parametrize("bad", ["<think>x</think> no memory", "<think>x</think><memory>  </memory>"])
def test_malformed_memory_retries_once_then_raises(bad):
    prov = MockProvider({"Passage:": bad})
    with pytest.raises(ExtractionError) as info:
        Extractor(prov).extract_memory(passage("text"))
    assert info.value.raw == bad
    assert len(prov.calls) == 2


def test_memory_retry_recovers():
    prov = MockProvider({"Passage:": ["garbage", "<think>t</think><memory>ok</memory>"]})
    assert Extractor(prov).extract_memory(passage("text")).memory_text == "ok"
    assert len(prov.calls) == 2


# -- NER ----------------------------------------------------------------------------


def test_mock_ner_capitalized_runs(ex):
    got = ex.extract_entities(memory("Nicki Minaj was born in Port of Spain."))
    assert [e.canonical for e in got] == ["nicki minaj", "port of spain"]
    assert got[0] == EntityMention("Nicki Minaj", "nicki minaj")


def test_mock_ner_empty_and_dedup(ex):
    assert ex.extract_entities(memory("the the the")) == []
    got = ex.extract_entities(memory("Paris is big. They love Paris."))
    assert [e.canonical for e in got] == ["paris"]


def test_mock_ner_details():
    assert mock_entities("The Bank of England (1694) moved to Threadneedle Street.") == [
        "Bank of England", "1694", "Threadneedle Street"
    ]
    assert mock_entities("[ANS]Kyoto[/ANS] hosts it.\nKyoto | r | Japan") == ["Kyoto"]
    assert mock_entities("In 1990, Ada moved.") == ["1990", "Ada"]


def test_unparseable_ner_falls_back_to_empty(caplog):
    prov = MockProvider({"Paragraph:": "not json"})
    with caplog.at_level(logging.WARNING):
        assert Extractor(prov).extract_entities(memory("Paris")) == []
    assert len(prov.calls) == 2
    assert "unparseable" in caplog.text


def test_ner_accepts_wrapped_object():
    prov = MockProvider({"Paragraph:": '```json\n{"named_entities": ["A B", "a  b", "C"]}\n```'})
    got = Extractor(prov).extract_entities(memory("x"))
    assert [e.canonical for e in got] == ["a b", "c"]


# -- triples ------------------------------------------------------------------------


def test_mock_triples_from_fixture_lines(ex):
    m = memory("Nicki Minaj | place of birth | Port of Spain")
    assert ex.extract_triples(m, []) == [Triple("nicki minaj", "place of birth", "port of spain", "m:d#0")]


def test_triples_empty_and_dedup(ex):
    assert ex.extract_triples(memory("No fixture lines here."), []) == []
    m = memory("A | r | B\nA | r | B\na |  r | b")
    assert ex.extract_triples(m, []) == [Triple("a", "r", "b", "m:d#0")]


def test_triple_message_carries_entities():
    prov = MockProvider()
    m = memory("A | r | B")
    Extractor(prov).extract_triples(m, [EntityMention.from_surface("A")])
    assert prov.calls[-1][1].endswith('Named entities: ["A"]')


def test_malformed_triples_dropped():
    prov = MockProvider({"Paragraph:": '[["a", "r", "b"], ["x", "y"], ["", "r", "c"], 7]'})
    assert Extractor(prov).extract_triples(memory("q"), []) == [Triple("a", "r", "b", "m:d#0")]


# -- decomposition -----------------------------------------------------------------


def test_comparative_question_splits(ex):
    res = ex.decompose_query("Which film has the director born later, A or B?")
    assert res == DecompositionResult(True, (
        "What is the birth year of the director of A?",
        "What is the birth year of the director of B?",
    ))


def test_chain_question_does_not_split(ex):
    assert ex.decompose_query("When did Lothair II's mother die?") == DecompositionResult(False)
    # comparison words but a family relation: still a chain
    assert not ex.decompose_query("Whose mother is older, X or Y?").split


@pytest.mark.parametrize("raw", ["nonsense", '{"split": "yes"}', '{"split": true, "sub_questions": ["one"]}',
                                 '{"split": true, "sub_questions": "ab"}', "[]"])
def test_malformed_decomposition_is_no_split(raw):
    prov = MockProvider({"Question:": raw})
    assert Extractor(prov).decompose_query("Who was born first, A or B?") == DecompositionResult(False)


def test_decomposition_truncated_to_max_splits():
    res = parse_decomposition(json.dumps({"split": True, "sub_questions": ["a", "b", "c"]}), 2)
    assert res.sub_questions == ("a", "b")
    with pytest.raises(ValueError):
        Extractor(MockProvider()).decompose_query("q", max_splits=1)


def test_decomposition_invariants():
    with pytest.raises(ValueError):
        DecompositionResult(False, ("a",))
    with pytest.raises(ValueError):
        DecompositionResult(True, ("a",))


@given(st.text(max_size=200))
def test_decompose_always_valid_under_garbage(raw):
    prov = MockProvider({"Question:": raw})
    res = Extractor(prov).decompose_query("Which is older, A or B?")
    assert (not res.split and res.sub_questions == ()) or (res.split and 2 <= len(res.sub_questions) <= 2)


# -- answers ------------------------------------------------------------------------


def pair(pid, text):
    return EvidencePair(passage(text, pid), memory(text, pid))


def test_mock_answer_reads_planted_marker(ex):
    assert ex.generate_answer("q", [pair("a#0", "It is [ANS]Paris[/ANS].")]) == "Paris"
    assert ex.generate_answer("q", []) == ""
    ev = [pair("a#0", "nothing"), pair("b#0", "here: [ANS]Lyon[/ANS]")]
    assert ex.generate_answer("q", ev) == "Lyon"


def test_marker_in_question_is_ignored(ex):
    assert ex.generate_answer("is it [ANS]Rome[/ANS]?", [pair("a#0", "none")]) == ""


# -- canonicalization and determinism -------------------------------------------


@given(st.text())
def test_canonicalize_idempotent(s):
    assert canonicalize(canonicalize(s)) == canonicalize(s)


@given(st.text(max_size=300))
def test_mock_provider_is_deterministic(text):
    a, b = MockProvider(), MockProvider()
    for system in (MEMORY_PROMPT, NER_PROMPT, TRIPLE_PROMPT, QA_PROMPT):
        assert a.complete(system, "Paragraph:\n" + text) == b.complete(system, "Paragraph:\n" + text)


def test_mock_rejects_unknown_prompt():
    with pytest.raises(ProviderError):
        MockProvider().complete("You are a poet.", "hi")


def test_map_keeps_order():
    out = Extractor(MockProvider(), max_workers=4).map(lambda x: x * x, range(50))
    assert out == [x * x for x in range(50)]


# -- HTTP provider ----------------------------------------------------------------


def test_http_provider_request_shape(monkeypatch):
    monkeypatch.setenv("TEST_KEY", "sekret")
    seen = []

    def handler(request: httpx.Request):
        seen.append(request)
        return httpx.Response(200, json={"choices": [{"message": {"content": "hello"}}]})

    prov = HTTPProvider("http://llm.test/v1/", "m1", key_env="TEST_KEY",
                        transport=httpx.MockTransport(handler))
    assert prov.complete("sys", "usr") == "hello"
    req = seen[0]
    assert str(req.url) == "http://llm.test/v1/chat/completions"
    assert req.headers["Authorization"] == "Bearer sekret"
    body = json.loads(req.content)
    assert body["model"] == "m1" and body["temperature"] == 0.0
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "usr"}]


def test_http_provider_retries_then_fails():
    calls = []

    def handler(request):
        calls.append(1)
        return httpx.Response(503, text="busy")

    prov = HTTPProvider("http://llm.test", "m", retries=2, transport=httpx.MockTransport(handler))
    with pytest.raises(ProviderError, match="3 attempts"):
        prov.complete("s", "u")
    assert len(calls) == 3


def test_http_provider_recovers_after_bad_body():
    responses = iter([httpx.Response(200, json={"nope": 1}),
                      httpx.Response(200, json={"choices": [{"message": {"content": "ok"}}]})])
    prov = HTTPProvider("http://llm.test", "m", transport=httpx.MockTransport(lambda r: next(responses)))
    assert prov.complete("s", "u") == "ok"
