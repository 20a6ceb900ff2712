"""Record and replay every external provider from JSON fixture files.

A fixture directory holds one JSON object per provider kind:

``ris.json``      image key -> list of ``{link, thumbnail, image, title}``
``scrape.json``   url -> ``{markdown, raw_html}``
``thumbs.json``   thumbnail url -> base64 bytes
``llm.json``      claim id -> ``{text, input_tokens, output_tokens}`` or a
                  list of those, served in order on successive calls

Any value may instead be ``{"error": {"status": 429, "message": "..."}}`` to
replay a provider failure. Unknown keys raise a non-retryable ProviderError.
"""

from __future__ import annotations

import base64
import json
import threading
from collections import defaultdict
from pathlib import Path

from factrag.claims import ClaimImage
from factrag.errors import ProviderError, ThumbFetchError
from factrag.generation import LLMResponse
from factrag.image_retrieval import ScrapedPage, image_key
from factrag.prompt_builder import PromptBundle

KINDS = ("ris", "scrape", "thumbs", "llm")


def _raise_recorded(err: dict, what: str):
    status = err.get("status")
    raise ProviderError(
        f"{what}: {err.get('message', 'recorded failure')}",
        retryable=bool(err.get("retryable", status == 429 or (status or 0) >= 500)),
        status=status,
    )


def _is_error(value) -> bool:
    return isinstance(value, dict) and set(value) == {"error"}


class ReplayStore:
    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.data = {}
        for kind in KINDS:
            p = self.directory / f"{kind}.json"
            self.data[kind] = json.loads(p.read_text(encoding="utf-8")) if p.exists() else {}

    def lookup(self, kind: str, key: str):
        try:
            value = self.data[kind][key]
        except KeyError:
            raise ProviderError(f"no recorded {kind} response for {key!r}", retryable=False) from None
        if _is_error(value):
            _raise_recorded(value["error"], f"recorded {kind} failure for {key!r}")
        return value

    def ris(self) -> "ReplayRIS":
        return ReplayRIS(self)

    def scraper(self) -> "ReplayScraper":
        return ReplayScraper(self)

    def thumbs(self) -> "ReplayThumbs":
        return ReplayThumbs(self)

    def llm(self) -> "ReplayLLM":
        return ReplayLLM(self)


class ReplayRIS:
    def __init__(self, store: ReplayStore):
        self.store = store

    def search(self, image: ClaimImage, limit: int = 30) -> list[dict]:
        return list(self.store.lookup("ris", image_key(image)))[:limit]


class ReplayScraper:
    def __init__(self, store: ReplayStore):
        self.store = store

    def scrape(self, url: str) -> ScrapedPage:
        rec = self.store.lookup("scrape", url)
        return ScrapedPage(rec.get("markdown", ""), rec.get("raw_html", ""))


class ReplayThumbs:
    def __init__(self, store: ReplayStore):
        self.store = store

    def fetch(self, url: str) -> bytes:
        try:
            return base64.b64decode(self.store.lookup("thumbs", url))
        except ProviderError as exc:
            raise ThumbFetchError(str(exc)) from exc


class ReplayLLM:
    def __init__(self, store: ReplayStore):
        self.store = store
        self._lock = threading.Lock()
        self._calls: dict[str, int] = defaultdict(int)

    def complete(self, bundle: PromptBundle) -> LLMResponse:
        rec = self.store.lookup("llm", bundle.claim_id)
        if isinstance(rec, list):
            with self._lock:
                i = self._calls[bundle.claim_id]
                self._calls[bundle.claim_id] += 1
            rec = rec[min(i, len(rec) - 1)]
            if _is_error(rec):
                _raise_recorded(rec["error"], f"recorded llm failure for {bundle.claim_id!r}")
        return LLMResponse(rec["text"], int(rec.get("input_tokens", 0)), int(rec.get("output_tokens", 0)))


class Recorder:
    """Wraps live providers and captures their answers into a fixture directory."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.data: dict[str, dict] = {k: {} for k in KINDS}
        self._lock = threading.Lock()

    def _put(self, kind, key, value):
        with self._lock:
            self.data[kind][key] = value

    def _capture(self, kind, key, fn, encode=lambda v: v):
        try:
            value = fn()
        except ProviderError as exc:
            self._put(kind, key, {"error": {"status": exc.status, "message": str(exc), "retryable": exc.retryable}})
            raise
        self._put(kind, key, encode(value))
        return value

    def ris(self, live):
        rec = self

        class _RIS:
            def search(self, image, limit=30):
                return rec._capture("ris", image_key(image), lambda: live.search(image, limit))

        return _RIS()

    def scraper(self, live):
        rec = self

        class _Scraper:
            def scrape(self, url):
                return rec._capture(
                    "scrape", url, lambda: live.scrape(url),
                    lambda p: {"markdown": p.markdown, "raw_html": p.raw_html},
                )

        return _Scraper()

    def thumbs(self, live):
        rec = self

        class _Thumbs:
            def fetch(self, url):
                data = live.fetch(url)
                rec._put("thumbs", url, base64.b64encode(data).decode("ascii"))
                return data

        return _Thumbs()

    def llm(self, live):
        rec = self

        class _LLM:
            def complete(self, bundle):
                return rec._capture(
                    "llm", bundle.claim_id, lambda: live.complete(bundle),
                    lambda r: {"text": r.text, "input_tokens": r.input_tokens, "output_tokens": r.output_tokens},
                )

        return _LLM()

    def save(self) -> None:
        self.directory.mkdir(parents=True, exist_ok=True)
        for kind, values in self.data.items():
            if values:
                (self.directory / f"{kind}.json").write_text(
                    json.dumps(values, indent=1, sort_keys=True, ensure_ascii=False), encoding="utf-8"
                )
