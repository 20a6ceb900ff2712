import dataclasses
import json

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from factrag import errors
from factrag.claims import ANSWER_TYPES, VERDICT_LABELS
from factrag.errors import ContextOverflow, GenerationFailed, ModeMismatch, ParseError, ProviderError, SchemaError, ThumbFetchError
from factrag.generation import (
    EvidenceFormatMode,
    LLMResponse,
    OpenAIChatProvider,
    BatchResultsProvider,
    QAPair,
    attach_thumbnails,
    batch_request_line,
    call_llm,
    chat_messages,
    parse_response,
    to_submission_evidence,
    verify,
)
from factrag.image_retrieval import ThumbnailCache
from factrag.prompt_builder import PromptBundle, SourceBlock

from conftest import FIXTURES

THUMBS = {"https://th/11": b"\x00\x01\x02", "https://th/12": b"\xff\xfe"}

TABLE = {
    1: SourceBlock(1, "text", "https://t/1", "b1"),
    2: SourceBlock(2, "text", "https://t/2", "b2"),
    3: SourceBlock(3, "text", "https://t/3", "b3"),
    11: SourceBlock(11, "image", "https://i/11", "m11", thumbnail_url="https://th/11", image_index=1),
    12: SourceBlock(12, "image", "https://i/12", "m12", thumbnail_url="https://th/12", image_index=1),
    13: SourceBlock(13, "image", "https://i/13", "m13", thumbnail_url="https://th/gone", image_index=1),
}


class DictFetcher:
    def __init__(self, table=THUMBS):
        self.table = table
        self.calls = 0

    def fetch(self, url):
        self.calls += 1
        if url not in self.table:
            raise ThumbFetchError(f"404 {url}")
        return self.table[url]


def cache():
    return ThumbnailCache(DictFetcher())


def bundle(table=TABLE):
    return PromptBundle("c1", "SYSTEM", [{"type": "text", "text": "claim"}], dict(table))


@pytest.fixture(scope="module")
def llm_dir():
    return FIXTURES / "llm"


def _expected(llm_dir):
    return json.loads((llm_dir / "expected.json").read_text())


def fixture_names():
    return sorted(json.loads((FIXTURES / "llm" / "expected.json").read_text()))


def test_at_least_twelve_parser_fixtures(llm_dir):
    assert len(list(llm_dir.glob("*.txt"))) >= 12
    assert {p.name for p in llm_dir.glob("*.txt")} == set(_expected(llm_dir))


@pytest.mark.parametrize("name", fixture_names())
def test_parser_fixture(llm_dir, name):
    exp = _expected(llm_dir)[name]
    raw = (llm_dir / name).read_text(encoding="utf-8")
    if "error" in exp:
        with pytest.raises(getattr(errors, exp["error"])):
            parse_response(raw, TABLE)
        return
    got = parse_response(raw, TABLE)
    if "same_as" in exp:
        assert got == parse_response((llm_dir / exp["same_as"]).read_text(encoding="utf-8"), TABLE)
        return
    assert got.verdict == exp["verdict"]
    assert [p.source for p in got.qa_pairs] == exp["sources"]
    assert len(got.warnings) == exp["warnings"]
    assert [p.source for p in got.qa_pairs if p.unknown_source] == exp.get("unknown", [])
    if "likert" in exp:
        assert list(dataclasses.astuple(got.likert)) == exp["likert"]


def test_valid_fixture_fully_populated(llm_dir):
    got = parse_response((llm_dir / "01_valid.txt").read_text(), TABLE)
    assert got.qa_pairs[0] == QAPair("When was the photo first published?", "It appeared online in 2019.", 11, "Extractive")
    assert dataclasses.astuple(got.likert) == (1, 5, 2, 1)
    assert got.justification == "The photo predates the floods."


def test_img_tags_stripped_from_every_field(llm_dir):
    got = parse_response((llm_dir / "14_img_tags_everywhere.txt").read_text(), TABLE)
    (p,) = got.qa_pairs
    assert (p.question, p.answer) == ("Who took the photo?", "Reuters photographer X.")
    assert got.justification == "Image predates the floods."


def test_declarative_fixture_keeps_evidence(llm_dir):
    got = parse_response((llm_dir / "11_declarative.txt").read_text(), TABLE)
    assert got.qa_pairs[0].evidence == "The photo was taken by Reuters photographer X in 2019."


QA = QAPair("Who took the photo?", "Reuters photographer X.", 12, "Extractive")
TEXT_QA = QAPair("Is it from 2024?", "No.", 3, "Boolean")


def test_attach_thumbnail_of_cited_image_source():
    (p,), warnings = attach_thumbnails([dataclasses.replace(QA, source=11)], TABLE, cache())
    assert p.thumbnail == "AAEC" and warnings == []


def test_text_sourced_pair_unchanged():
    (p,), _ = attach_thumbnails([TEXT_QA], TABLE, cache())
    assert p == TEXT_QA


def test_unreachable_thumbnail_keeps_pair_with_warning():
    pair = dataclasses.replace(QA, source=13)
    (p,), warnings = attach_thumbnails([pair], TABLE, cache())
    assert p == pair and len(warnings) == 1


def test_thumbnails_fetched_once_per_url():
    f = DictFetcher()
    c = ThumbnailCache(f)
    attach_thumbnails([QA, QA, dataclasses.replace(QA, source=11)], TABLE, c)
    assert f.calls == 2


def _with_thumb(p):
    (q,), _ = attach_thumbnails([p], TABLE, cache())
    return q


def test_question_plus_answer_example():
    (ev,) = to_submission_evidence([_with_thumb(QA)], EvidenceFormatMode.QUESTION_PLUS_ANSWER)
    assert ev.text == "Who took the photo? Reuters photographer X. [IMG_1]"
    assert ev.thumbnail == "//4="


def test_answer_only_example():
    (ev,) = to_submission_evidence([_with_thumb(QA)], "answer_only")
    assert ev.text == "Reuters photographer X. [IMG_1]"


@pytest.mark.parametrize("mode", ["answer_only", "question_plus_answer", "declarative"])
def test_text_sourced_pair_never_tagged(mode):
    pair = dataclasses.replace(TEXT_QA, evidence="It is not from 2024.")
    (ev,) = to_submission_evidence([_with_thumb(pair)], mode)
    assert "[IMG_" not in ev.text and ev.thumbnail is None


def test_declarative_needs_evidence_field():
    with pytest.raises(ModeMismatch):
        to_submission_evidence([QA], EvidenceFormatMode.DECLARATIVE)


def test_mode_aliases():
    assert EvidenceFormatMode.parse("qa") is EvidenceFormatMode.QUESTION_PLUS_ANSWER
    assert EvidenceFormatMode.parse("answer") is EvidenceFormatMode.ANSWER_ONLY
    with pytest.raises(ValueError):
        EvidenceFormatMode.parse("prose")


text_st = st.text(st.characters(blacklist_categories=("Cs",)), min_size=1, max_size=40).filter(lambda s: s.strip() == s and "[IMG_" not in s)
pair_st = st.builds(
    lambda q, a, s, t: {"question": q, "answer": a, "source": s, "answer_type": t},
    text_st,
    text_st,
    st.sampled_from(sorted(TABLE)),
    st.sampled_from(ANSWER_TYPES),
)
result_st = st.fixed_dictionaries(
    {
        "questions": st.lists(pair_st, max_size=10),
        "claim_veracity": st.fixed_dictionaries({k: st.integers(1, 5) for k in VERDICT_LABELS}),
        "veracity_verdict": st.sampled_from(VERDICT_LABELS),
        "verdict_justification": text_st,
    }
)


@given(result_st, st.booleans())
def test_parse_render_round_trip(obj, fenced):
    raw = json.dumps(obj, ensure_ascii=False)
    if fenced:
        raw = f"```json\n{raw}\n```"
    got = parse_response(raw, TABLE)
    assert [(p.question, p.answer, p.source, p.answer_type) for p in got.qa_pairs] == [
        (q["question"], q["answer"], q["source"], q["answer_type"]) for q in obj["questions"]
    ]
    assert list(dataclasses.astuple(got.likert)) == [obj["claim_veracity"][k] for k in VERDICT_LABELS]
    assert got.verdict == obj["veracity_verdict"]
    assert got.justification == obj["verdict_justification"]
    assert got.warnings == []


@given(result_st, st.sampled_from(list(EvidenceFormatMode)))
def test_tag_iff_thumbnail(obj, mode):
    for q in obj["questions"]:
        q["evidence"] = "Evidence " + q["answer"]
    parsed = parse_response(json.dumps(obj), TABLE)
    pairs, _ = attach_thumbnails(parsed.qa_pairs, TABLE, cache())
    for ev in to_submission_evidence(pairs, mode):
        assert ev.text.endswith(" [IMG_1]") == (ev.thumbnail is not None)
        assert ev.text.count("[IMG_") == (1 if ev.thumbnail else 0)
    assert len(parsed.qa_pairs) <= 10


# transport

def _openai(handler):
    return OpenAIChatProvider(client=httpx.Client(transport=httpx.MockTransport(handler)))


def test_openai_usage_and_text_pass_through():
    raw = '```json\n{"a": 1}\n```  '

    def handler(request):
        body = json.loads(request.content)
        assert body["model"] == "gpt-5.1"
        assert body["messages"][0] == {"role": "system", "content": "SYSTEM"}
        return httpx.Response(
            200, json={"choices": [{"message": {"content": raw}}], "usage": {"prompt_tokens": 11000, "completion_tokens": 1150}}
        )

    resp = call_llm(bundle(), _openai(handler))
    assert resp == LLMResponse(raw, 11000, 1150)


def test_openai_timeout_is_retryable():
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    with pytest.raises(ProviderError) as ei:
        _openai(handler).complete(bundle())
    assert ei.value.retryable


def test_openai_context_overflow_and_auth():
    with pytest.raises(ContextOverflow):
        _openai(lambda r: httpx.Response(400, json={"error": {"code": "context_length_exceeded"}})).complete(bundle())
    with pytest.raises(ProviderError) as ei:
        _openai(lambda r: httpx.Response(401)).complete(bundle())
    assert not ei.value.retryable and ei.value.status == 401


def test_chat_messages_images_as_data_urls():
    b = PromptBundle("c", "S", [{"type": "text", "text": "t"}, {"type": "image", "media_type": "image/png", "data": "AAEC"}])
    user = chat_messages(b)[1]["content"]
    assert user[1] == {"type": "image_url", "image_url": {"url": "data:image/png;base64,AAEC"}}


def test_batch_round_trip(tmp_path):
    line = batch_request_line(bundle())
    assert line["custom_id"] == "c1" and line["url"] == "/v1/chat/completions"
    out = tmp_path / "out.jsonl"
    out.write_text(
        "\n".join(
            json.dumps(r)
            for r in [
                {"custom_id": "c1", "response": {"body": {"choices": [{"message": {"content": "X"}}], "usage": {"prompt_tokens": 5, "completion_tokens": 2}}}},
                {"custom_id": "c2", "error": {"code": "server_error"}},
            ]
        )
    )
    p = BatchResultsProvider(out)
    assert p.complete(bundle()) == LLMResponse("X", 5, 2)
    with pytest.raises(ProviderError):
        p.complete(PromptBundle("c2", "S", []))


# verify

class Scripted:
    def __init__(self, *texts):
        self.texts = list(texts)
        self.calls = 0

    def complete(self, b):
        t = self.texts[min(self.calls, len(self.texts) - 1)]
        self.calls += 1
        if isinstance(t, Exception):
            raise t
        return LLMResponse(t, 11000, 1150)


def test_verify_happy_path(llm_dir):
    r = verify(bundle(), Scripted((llm_dir / "01_valid.txt").read_text()), cache())
    assert r.verdict == "Refuted" and r.llm_calls == 1
    assert (r.input_tokens, r.output_tokens) == (11000, 1150)
    assert [e.text for e in r.evidence] == [
        "When was the photo first published? It appeared online in 2019. [IMG_1]",
        "Does any report link the photo to the 2024 floods? No",
        "Who took the photo? Reuters photographer X. [IMG_1]",
    ]


def test_verify_retries_once_after_bad_json(llm_dir):
    llm = Scripted("not json", (llm_dir / "01_valid.txt").read_text())
    r = verify(bundle(), llm, cache())
    assert llm.calls == 2 and r.llm_calls == 2 and r.input_tokens == 22000


def test_verify_gives_up_after_one_retry():
    llm = Scripted("not json", "still not json", "{}")
    with pytest.raises(GenerationFailed) as ei:
        verify(bundle(), llm, cache())
    assert llm.calls == 2
    assert (ei.value.calls, ei.value.input_tokens, ei.value.output_tokens) == (2, 22000, 2300)
    assert isinstance(ei.value.cause, ParseError)


def test_verify_declarative_on_qa_response_fails(llm_dir):
    with pytest.raises(GenerationFailed) as ei:
        verify(bundle(), Scripted((llm_dir / "01_valid.txt").read_text()), cache(), mode="declarative")
    assert isinstance(ei.value.cause, ModeMismatch)


def test_verify_declarative(llm_dir):
    r = verify(bundle(), Scripted((llm_dir / "11_declarative.txt").read_text()), cache(), mode="declarative")
    assert [e.text for e in r.evidence] == [
        "The photo was taken by Reuters photographer X in 2019. [IMG_1]",
        "No 2024 report uses the photo.",
    ]


def test_verify_transient_provider_error_is_retried(llm_dir):
    llm = Scripted(ProviderError("503", retryable=True, status=503), (llm_dir / "01_valid.txt").read_text())
    r = verify(bundle(), llm, cache(), retry_base_delay=0)
    assert r.llm_calls == 1 and llm.calls == 2


def test_schema_error_is_retried_too(llm_dir):
    llm = Scripted((llm_dir / "04_bad_label_true.txt").read_text(), (llm_dir / "04_bad_label_true.txt").read_text())
    with pytest.raises(GenerationFailed) as ei:
        verify(bundle(), llm, cache())
    assert isinstance(ei.value.cause, SchemaError)
