"""One multimodal LLM call per claim, and everything done with its answer.

The model answers with a JSON object of QA pairs (each citing one numeric
source ID), Likert ratings for the four verdicts, a verdict and a
justification. QA pairs citing an image-related source get that source's
thumbnail, and are turned into submission evidence strings in one of three
formats.
"""

from __future__ import annotations

import enum
import json
import logging
import os
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from factrag._retry import with_retries
from factrag.claims import ANSWER_TYPES, VERDICT_LABELS
from factrag.errors import (
    ContextOverflow,
    GenerationFailed,
    ModeMismatch,
    ParseError,
    ProviderError,
    SchemaError,
    ThumbFetchError,
)
from factrag.image_retrieval import ThumbnailCache
from factrag.prompt_builder import PromptBundle, SourceBlock

log = logging.getLogger(__name__)

MAX_QUESTIONS = 10
IMG_TAG = "[IMG_1]"
_IMG_TAG_RE = re.compile(r"\s*\[IMG_\d+\]")
_FENCE_RE = re.compile(r"```(?:json|JSON)?\s*(.*?)```", re.DOTALL)
_LIKERT_KEYS = {
    "Supported": "supported",
    "Refuted": "refuted",
    "Not Enough Evidence": "not_enough_evidence",
    "Conflicting Evidence/Cherrypicking": "conflicting",
}


class EvidenceFormatMode(str, enum.Enum):
    ANSWER_ONLY = "answer_only"
    QUESTION_PLUS_ANSWER = "question_plus_answer"
    DECLARATIVE = "declarative"

    @classmethod
    def parse(cls, value: "str | EvidenceFormatMode") -> "EvidenceFormatMode":
        aliases = {"qa": cls.QUESTION_PLUS_ANSWER, "answer": cls.ANSWER_ONLY}
        if isinstance(value, cls):
            return value
        return aliases.get(value) or cls(value)

    @property
    def template(self) -> str:
        return "declarative" if self is EvidenceFormatMode.DECLARATIVE else "qa"


@dataclass(frozen=True)
class LLMResponse:
    text: str
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class QAPair:
    question: str
    answer: str
    source: int
    answer_type: str
    evidence: str | None = None  # declarative evidence sentence, when asked for
    unknown_source: bool = False
    thumbnail: str | None = None  # base64 payload of the cited image source


@dataclass(frozen=True)
class VeracityLikert:
    supported: int
    refuted: int
    not_enough_evidence: int
    conflicting: int


@dataclass(frozen=True)
class Evidence:
    text: str
    source: int
    thumbnail: str | None = None


@dataclass
class ParsedResponse:
    qa_pairs: list[QAPair]
    likert: VeracityLikert
    verdict: str
    justification: str
    warnings: list[str] = field(default_factory=list)


@dataclass
class VerificationResult:
    qa_pairs: list[QAPair]
    likert: VeracityLikert
    verdict: str
    justification: str
    evidence: list[Evidence]
    input_tokens: int = 0
    output_tokens: int = 0
    llm_calls: int = 1
    warnings: list[str] = field(default_factory=list)


class LLMProvider(Protocol):
    def complete(self, bundle: PromptBundle) -> LLMResponse: ...


def chat_messages(bundle: PromptBundle) -> list[dict]:
    """Chat-completions messages: system prompt, then claim text and images."""
    content = []
    for part in bundle.user_parts:
        if part["type"] == "text":
            content.append({"type": "text", "text": part["text"]})
        else:
            url = f"data:{part['media_type']};base64,{part['data']}"
            content.append({"type": "image_url", "image_url": {"url": url}})
    return [{"role": "system", "content": bundle.system_prompt}, {"role": "user", "content": content}]


def _extract_usage(payload: dict) -> tuple[int, int]:
    usage = payload.get("usage") or {}
    return int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))


class OpenAIChatProvider:
    def __init__(
        self,
        model: str = "gpt-5.1",
        endpoint: str = "https://api.openai.com/v1/chat/completions",
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 600.0,
        client: httpx.Client | None = None,
    ):
        self.model = model
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)

    def request_body(self, bundle: PromptBundle) -> dict:
        return {"model": self.model, "messages": chat_messages(bundle)}

    def complete(self, bundle: PromptBundle) -> LLMResponse:
        headers = {"Authorization": f"Bearer {os.environ.get(self.api_key_env, '')}"}
        try:
            resp = self._client.post(self.endpoint, json=self.request_body(bundle), headers=headers)
        except httpx.TimeoutException as exc:
            raise ProviderError(f"LLM request timed out: {exc}", retryable=True) from exc
        except httpx.HTTPError as exc:
            raise ProviderError(f"LLM request failed: {exc}", retryable=True) from exc
        if resp.status_code == 400 and "context_length_exceeded" in resp.text:
            raise ContextOverflow("prompt exceeds the model context window")
        if resp.status_code != 200:
            raise ProviderError(
                f"LLM endpoint returned HTTP {resp.status_code}",
                retryable=resp.status_code == 429 or resp.status_code >= 500,
                status=resp.status_code,
            )
        payload = resp.json()
        text = payload["choices"][0]["message"].get("content") or ""
        return LLMResponse(text, *_extract_usage(payload))


def batch_request_line(bundle: PromptBundle, model: str = "gpt-5.1") -> dict:
    """One line of a Batch API input file; ``custom_id`` is the claim id."""
    return {
        "custom_id": bundle.claim_id,
        "method": "POST",
        "url": "/v1/chat/completions",
        "body": {"model": model, "messages": chat_messages(bundle)},
    }


class BatchResultsProvider:
    """Serves responses demultiplexed from a finished Batch API output file."""

    def __init__(self, path: str | Path):
        self.responses: dict[str, LLMResponse] = {}
        self.errors: dict[str, str] = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            cid = str(rec["custom_id"])
            body = (rec.get("response") or {}).get("body")
            if rec.get("error") or not body:
                self.errors[cid] = json.dumps(rec.get("error"))
                continue
            text = body["choices"][0]["message"].get("content") or ""
            self.responses[cid] = LLMResponse(text, *_extract_usage(body))

    def complete(self, bundle: PromptBundle) -> LLMResponse:
        if bundle.claim_id in self.responses:
            return self.responses[bundle.claim_id]
        raise ProviderError(
            f"no batch result for claim {bundle.claim_id}: {self.errors.get(bundle.claim_id, 'missing')}"
        )


def call_llm(bundle: PromptBundle, provider: LLMProvider) -> LLMResponse:
    return provider.complete(bundle)


def extract_json_object(raw: str) -> dict:
    text = raw.strip()
    m = _FENCE_RE.search(text)
    if m:
        text = m.group(1).strip()
    elif text.startswith("```"):
        text = text.lstrip("`").removeprefix("json").removeprefix("JSON")
    start, end = text.find("{"), text.rfind("}")
    if start == -1 or end <= start:
        raise ParseError("no JSON object in response")
    try:
        obj = json.loads(text[start : end + 1])
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise ParseError("response JSON is not an object")
    return obj


def normalise_verdict(value) -> str:
    if not isinstance(value, str):
        raise SchemaError(f"verdict must be a string, got {value!r}")
    v = value.strip().rstrip(".")
    if v.lower().endswith(" claim"):
        v = v[: -len(" claim")]
    for label in VERDICT_LABELS:
        if v.lower() == label.lower():
            return label
    raise SchemaError(f"{value!r} is not one of the verdict labels")


def _likert(value, key: str) -> int:
    if isinstance(value, bool):
        raise SchemaError(f"Likert rating for {key!r} is not a number")
    if isinstance(value, int):
        n = value
    elif isinstance(value, float) and value.is_integer():
        n = int(value)
    elif isinstance(value, str) and (m := re.match(r"\s*(\d+)(?!\d|\.\d)", value)):
        n = int(m.group(1))
    else:
        raise SchemaError(f"Likert rating for {key!r} is not a number: {value!r}")
    if not 1 <= n <= 5:
        raise SchemaError(f"Likert rating for {key!r} out of range: {n}")
    return n


def _source_id(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        m = re.search(r"\d+", value)
        return int(m.group()) if m else None
    return None


def _answer_type(value) -> str:
    if isinstance(value, str):
        for t in ANSWER_TYPES:
            if value.strip().lower() == t.lower():
                return t
    raise SchemaError(f"unknown answer type {value!r}")


def strip_img_tags(text: str) -> str:
    return _IMG_TAG_RE.sub("", text).strip()


def parse_response(raw: str, source_table: dict[int, SourceBlock]) -> ParsedResponse:
    obj = extract_json_object(raw)
    warnings: list[str] = []
    for key in ("questions", "claim_veracity", "veracity_verdict", "verdict_justification"):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}")
    questions = obj["questions"]
    if not isinstance(questions, list):
        raise SchemaError("'questions' must be a list")
    if len(questions) > MAX_QUESTIONS:
        warnings.append(f"{len(questions)} questions returned, keeping the first {MAX_QUESTIONS}")
        questions = questions[:MAX_QUESTIONS]

    pairs = []
    for i, q in enumerate(questions):
        if not isinstance(q, dict):
            raise SchemaError(f"question {i} is not an object")
        for key in ("question", "answer"):
            if not isinstance(q.get(key), (str, int, float)) or isinstance(q.get(key), bool):
                raise SchemaError(f"question {i} lacks {key!r}")
        sid = _source_id(q.get("source"))
        if sid is None:
            warnings.append(f"question {i} dropped: no usable source ID ({q.get('source')!r})")
            continue
        unknown = sid not in source_table
        if unknown:
            warnings.append(f"UnknownSource: question {i} cites source {sid}")
        evidence = q.get("evidence")
        pairs.append(
            QAPair(
                question=strip_img_tags(str(q["question"])),
                answer=strip_img_tags(str(q["answer"])),
                source=sid,
                answer_type=_answer_type(q.get("answer_type")),
                evidence=strip_img_tags(str(evidence)) if evidence is not None else None,
                unknown_source=unknown,
            )
        )

    cv = obj["claim_veracity"]
    if not isinstance(cv, dict):
        raise SchemaError("'claim_veracity' must be an object")
    lowered = {str(k).strip().lower(): v for k, v in cv.items()}
    ratings = {}
    for label, attr in _LIKERT_KEYS.items():
        if label.lower() not in lowered:
            raise SchemaError(f"missing Likert rating for {label!r}")
        ratings[attr] = _likert(lowered[label.lower()], label)

    justification = obj["verdict_justification"]
    if not isinstance(justification, str):
        raise SchemaError("'verdict_justification' must be a string")
    return ParsedResponse(
        qa_pairs=pairs,
        likert=VeracityLikert(**ratings),
        verdict=normalise_verdict(obj["veracity_verdict"]),
        justification=strip_img_tags(justification),
        warnings=warnings,
    )


def attach_thumbnails(
    qa_pairs: Sequence[QAPair], source_table: dict[int, SourceBlock], thumbs: ThumbnailCache
) -> tuple[list[QAPair], list[str]]:
    """Give every pair that cites an image-related source that source's thumbnail.

    A thumbnail that cannot be fetched leaves the pair without an image and
    adds a warning; the evidence itself is kept.
    """
    out, warnings = [], []
    for p in qa_pairs:
        block = source_table.get(p.source)
        if block is None or block.kind != "image":
            out.append(p)
            continue
        try:
            out.append(replace(p, thumbnail=thumbs.get(block.thumbnail_url)))
        except ThumbFetchError as exc:
            warnings.append(f"thumbnail for source {p.source} unavailable: {exc}")
            out.append(p)
    return out, warnings


def to_submission_evidence(qa_pairs: Sequence[QAPair], mode: EvidenceFormatMode | str) -> list[Evidence]:
    mode = EvidenceFormatMode.parse(mode)
    out = []
    for p in qa_pairs:
        if mode is EvidenceFormatMode.ANSWER_ONLY:
            text = p.answer
        elif mode is EvidenceFormatMode.QUESTION_PLUS_ANSWER:
            text = f"{p.question} {p.answer}"
        else:
            if p.evidence is None:
                raise ModeMismatch("declarative evidence requested but the response has none")
            text = p.evidence
        text = strip_img_tags(text)
        if p.thumbnail:
            text = f"{text} {IMG_TAG}"
        out.append(Evidence(text, p.source, p.thumbnail))
    return out


def verify(
    bundle: PromptBundle,
    provider: LLMProvider,
    thumbs: ThumbnailCache,
    mode: EvidenceFormatMode | str = EvidenceFormatMode.QUESTION_PLUS_ANSWER,
    parse_retries: int = 1,
    retry_attempts: int = 3,
    retry_base_delay: float = 0.5,
) -> VerificationResult:
    """Call the model, parse, attach thumbnails and format evidence.

    A malformed answer is retried ``parse_retries`` times, then
    GenerationFailed is raised. Token usage covers every call made.
    """
    mode = EvidenceFormatMode.parse(mode)
    in_tok = out_tok = calls = 0
    last_exc: Exception | None = None
    retried: list[str] = []
    for _ in range(parse_retries + 1):
        resp = with_retries(lambda: call_llm(bundle, provider), retry_attempts, retry_base_delay)
        calls += 1
        in_tok += resp.input_tokens
        out_tok += resp.output_tokens
        try:
            parsed = parse_response(resp.text, bundle.source_table)
            if mode is EvidenceFormatMode.DECLARATIVE and any(p.evidence is None for p in parsed.qa_pairs):
                raise ModeMismatch("declarative mode needs an 'evidence' field on every question")
        except (ParseError, SchemaError, ModeMismatch) as exc:
            log.warning("claim %s: unusable LLM response: %s", bundle.claim_id, exc)
            last_exc = exc
            retried.append(f"LLM response {calls} unusable ({type(exc).__name__}: {exc}), asked again")
            continue
        pairs, thumb_warnings = attach_thumbnails(parsed.qa_pairs, bundle.source_table, thumbs)
        return VerificationResult(
            qa_pairs=pairs,
            likert=parsed.likert,
            verdict=parsed.verdict,
            justification=parsed.justification,
            evidence=to_submission_evidence(pairs, mode),
            input_tokens=in_tok,
            output_tokens=out_tok,
            llm_calls=calls,
            warnings=retried + parsed.warnings + thumb_warnings,
        )
    raise GenerationFailed(last_exc, in_tok, out_tok, calls)
