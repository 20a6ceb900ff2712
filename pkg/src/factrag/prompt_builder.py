"""Source numbering, system prompt rendering and the multimodal user message.

Text sources get IDs 1-9, sources found for claim image ``i`` get
``10*i + 1`` to ``10*i + 9``. The system prompt carries only source text;
thumbnails are attached to the output later, never shown to the model.
"""

from __future__ import annotations

import base64
from dataclasses import dataclass, field
from importlib import resources
from string import Template
from typing import Literal, Sequence

from factrag.claims import Claim
from factrag.errors import ImageEncodeError, TemplateError, TooManySources
from factrag.fewshot import TrainExample
from factrag.image_retrieval import ImageSourceSet
from factrag.text_retrieval import ScoredChunk

MAX_SOURCES_PER_GROUP = 9
BODY_CAP = 6000
TRUNCATION_MARKER = "\n[... truncated]"

TEMPLATES = {
    "qa": "system_prompt.qa.v1.txt",
    "declarative": "system_prompt.declarative.v1.txt",
}


@dataclass(frozen=True)
class SourceBlock:
    source_id: int
    kind: Literal["text", "image"]
    url: str
    body: str
    context_before: str = ""
    context_after: str = ""
    title: str = ""
    page_date: str = ""
    image_url: str = ""
    thumbnail_url: str = ""
    image_index: int | None = None


@dataclass
class PromptBundle:
    claim_id: str
    system_prompt: str
    user_parts: list[dict]
    source_table: dict[int, SourceBlock] = field(default_factory=dict)


def assign_source_ids(
    text_sources: Sequence[ScoredChunk], image_sets: Sequence[ImageSourceSet]
) -> list[SourceBlock]:
    if len(text_sources) > MAX_SOURCES_PER_GROUP:
        raise TooManySources(f"{len(text_sources)} text sources, at most {MAX_SOURCES_PER_GROUP} fit")
    blocks = []
    for j, sc in enumerate(text_sources, start=1):
        ch = sc.entry.chunk
        blocks.append(SourceBlock(j, "text", ch.doc_url, ch.text, ch.context_before, ch.context_after))
    seen = set()
    for s in image_sets:
        if len(s.sources) > MAX_SOURCES_PER_GROUP:
            raise TooManySources(f"image {s.image_index} has {len(s.sources)} sources")
        if s.image_index < 1 or s.image_index in seen:
            raise TooManySources(f"duplicate or invalid image index {s.image_index}")
        seen.add(s.image_index)
        for j, src in enumerate(s.sources, start=1):
            blocks.append(
                SourceBlock(
                    source_id=10 * s.image_index + j,
                    kind="image",
                    url=src.ris.url,
                    body=src.markdown,
                    title=src.ris.title,
                    page_date=src.page_date.isoformat() if src.page_date else "",
                    image_url=src.ris.image_url or src.ris.thumbnail_url,
                    thumbnail_url=src.ris.thumbnail_url,
                    image_index=s.image_index,
                )
            )
    return blocks


def load_template(name: str = "qa") -> str:
    fname = TEMPLATES.get(name, name)
    try:
        return resources.files("factrag.templates").joinpath(fname).read_text(encoding="utf-8")
    except (FileNotFoundError, OSError) as exc:
        raise TemplateError(f"unknown prompt template {name!r}") from exc


def _cap(body: str, cap: int) -> str:
    return body if len(body) <= cap else body[:cap] + TRUNCATION_MARKER


def _render_text_block(b: SourceBlock, cap: int) -> str:
    lines = [f"## Source ID: {b.source_id} [{b.url}]"]
    lines += [part for part in (b.context_before, _cap(b.body, cap), b.context_after) if part]
    return "\n".join(lines) + "\n"


def _render_image_block(b: SourceBlock, cap: int) -> str:
    head = (
        f"## Image Source ID: {b.source_id} (related to user image {b.image_index}, "
        f"Title : {b.title}, date:{b.page_date or 'unknown'}, url: {b.url}, image url: {b.image_url})"
    )
    return head + "\n" + _cap(b.body, cap) + "\n"


def _render_fewshot(examples: Sequence[TrainExample]) -> str:
    out = []
    for ex in examples:
        out.append(f'### Question examples for claim "{ex.claim_text}" (verdict {ex.gold_label})\n')
        for q, a, t in ex.qa_pairs:
            out.append(f'"question": "{q}", "answer": "{a}", "answer_type": "{t}"\n')
    return "".join(out)


def render_system_prompt(
    claim: Claim,
    blocks: Sequence[SourceBlock],
    fewshot: Sequence[TrainExample],
    template: str | None = None,
    body_cap: int = BODY_CAP,
) -> str:
    ids = [b.source_id for b in blocks]
    if len(set(ids)) != len(ids):
        raise TemplateError("source IDs must be unique")
    text_blocks = sorted((b for b in blocks if b.kind == "text"), key=lambda b: b.source_id)
    image_blocks = sorted((b for b in blocks if b.kind == "image"), key=lambda b: b.source_id)
    if claim.date is None:
        raise TemplateError("claim date is required by the prompt")
    values = {
        "image_count": str(len(claim.images)),
        "author": claim.author or "unknown",
        "date": claim.date.isoformat(),
        "medium": claim.medium or "unknown",
        "k": str(len(text_blocks)),
        "text_sources": "".join(_render_text_block(b, body_cap) for b in text_blocks),
        "image_sources": "".join(_render_image_block(b, body_cap) for b in image_blocks),
        "fewshot": _render_fewshot(fewshot),
    }
    try:
        return Template(template if template is not None else load_template("qa")).substitute(values)
    except (KeyError, ValueError) as exc:
        raise TemplateError(f"template placeholder problem: {exc}") from exc


def build_user_message(claim: Claim) -> list[dict]:
    parts: list[dict] = [{"type": "text", "text": claim.text}]
    for i, img in enumerate(claim.images, start=1):
        if not isinstance(img.data, (bytes, bytearray)) or not img.data:
            raise ImageEncodeError(f"claim image {i} has no bytes")
        if not (img.media_type or "").startswith("image/"):
            raise ImageEncodeError(f"claim image {i} has unsupported media type {img.media_type!r}")
        parts.append(
            {"type": "image", "media_type": img.media_type, "data": base64.b64encode(img.data).decode("ascii")}
        )
    return parts


def build_prompt(
    claim: Claim,
    text_sources: Sequence[ScoredChunk],
    image_sets: Sequence[ImageSourceSet],
    fewshot: Sequence[TrainExample],
    template: str | None = None,
    body_cap: int = BODY_CAP,
) -> PromptBundle:
    blocks = assign_source_ids(text_sources, image_sets)
    return PromptBundle(
        claim_id=claim.claim_id,
        system_prompt=render_system_prompt(claim, blocks, fewshot, template, body_cap),
        user_parts=build_user_message(claim),
        source_table={b.source_id: b for b in blocks},
    )
