"""Claim records and the label vocabularies shared by the pipeline."""

from __future__ import annotations

import base64
import datetime as dt
import json
import mimetypes
from dataclasses import dataclass, field
from pathlib import Path

VERDICT_LABELS = (
    "Supported",
    "Refuted",
    "Not Enough Evidence",
    "Conflicting Evidence/Cherrypicking",
)
ANSWER_TYPES = ("Boolean", "Extractive", "Abstractive", "Unanswerable")

_MAGIC = (
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
    (b"RIFF", "image/webp"),
    (b"BM", "image/bmp"),
)


def sniff_media_type(data: bytes) -> str | None:
    for magic, mt in _MAGIC:
        if data.startswith(magic):
            return mt
    return None


@dataclass(frozen=True)
class ClaimImage:
    data: bytes
    media_type: str
    url: str | None = None  # public location, needed by URL-only search APIs

    def b64(self) -> str:
        return base64.b64encode(self.data).decode("ascii")


@dataclass(frozen=True)
class Claim:
    claim_id: str
    text: str
    date: dt.date
    author: str = ""
    medium: str = ""
    images: tuple[ClaimImage, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "claim_id", str(self.claim_id))
        object.__setattr__(self, "images", tuple(self.images))
        if isinstance(self.date, str):
            object.__setattr__(self, "date", parse_date(self.date))
        if not isinstance(self.date, dt.date):
            raise ValueError(f"claim {self.claim_id} has no usable date")


def parse_date(value: str) -> dt.date:
    """Parse ISO dates and the ``DD-MM-YYYY`` form used in shared-task files."""
    value = value.strip()
    for fmt in ("%Y-%m-%d", "%d-%m-%Y", "%Y/%m/%d", "%d/%m/%Y"):
        try:
            return dt.datetime.strptime(value[:10], fmt).date()
        except ValueError:
            continue
    return dt.datetime.fromisoformat(value).date()


def _first(rec: dict, *keys, default=None):
    for k in keys:
        if rec.get(k) not in (None, ""):
            return rec[k]
    return default


def _load_image(ref, base: Path) -> ClaimImage:
    if isinstance(ref, dict):
        path, url = ref.get("path"), ref.get("url")
        media_type = ref.get("media_type")
    else:
        path, url, media_type = ref, None, None
    if path is None or str(path).startswith(("http://", "https://")):
        raise ValueError(f"claim image {ref!r} needs a local path")
    p = Path(path)
    if not p.is_absolute():
        p = base / p
    data = p.read_bytes()
    media_type = media_type or sniff_media_type(data) or mimetypes.guess_type(p.name)[0] or ""
    return ClaimImage(data, media_type, url)


def load_claims(path: str | Path) -> list[Claim]:
    """Load a JSON array of claims; image paths resolve relative to the file."""
    path = Path(path)
    records = json.loads(path.read_text(encoding="utf-8"))
    claims = []
    for i, rec in enumerate(records):
        claims.append(
            Claim(
                claim_id=str(_first(rec, "claim_id", "id", default=i)),
                text=_first(rec, "claim_text", "text", "claim", default=""),
                date=_first(rec, "date", "claim_date"),
                author=_first(rec, "author", "speaker", default=""),
                medium=_first(rec, "medium", "publication_medium", "reporting_source", default=""),
                images=tuple(
                    _load_image(r, path.parent) for r in _first(rec, "claim_images", "images", default=[])
                ),
            )
        )
    return claims
