"""Image-context evidence: reverse image search, scraping, date filtering.

Each claim image is searched separately. Result pages are scraped to
markdown (keeping only the thumbnail that matched, never the page's other
images), dated, and filtered: pages published after the claim and pages that
scraped to nothing are dropped, and the first ``cap`` survivors are kept in
search-rank order.
"""

from __future__ import annotations

import base64
import datetime as dt
import hashlib
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence
from urllib.parse import urlparse

import httpx

from factrag._retry import with_retries
from factrag.claims import Claim, ClaimImage
from factrag.errors import ProviderError, ThumbFetchError

log = logging.getLogger(__name__)

RIS_LIMIT = 30
SOURCE_CAP = 9
_PROTECTED_STATUS = {401, 403, 404, 410, 451, 999}


@dataclass(frozen=True)
class RISResult:
    url: str
    thumbnail_url: str
    title: str
    rank: int
    image_url: str = ""

    def __post_init__(self):
        if not self.url:
            raise ValueError("RISResult.url must be non-empty")


@dataclass(frozen=True)
class ScrapedPage:
    markdown: str
    raw_html: str = ""


@dataclass(frozen=True)
class ImageSource:
    ris: RISResult
    markdown: str
    page_date: dt.date | None
    image_index: int

    @property
    def undated(self) -> bool:
        return self.page_date is None


@dataclass(frozen=True)
class ImageSourceSet:
    image_index: int
    sources: tuple[ImageSource, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "sources", tuple(self.sources))
        if len(self.sources) > SOURCE_CAP:
            raise ValueError(f"an image source set holds at most {SOURCE_CAP} sources")
        if any(s.image_index != self.image_index for s in self.sources):
            raise ValueError("all sources in a set must share its image_index")


class RISProvider(Protocol):
    def search(self, image: ClaimImage, limit: int) -> list[dict]: ...


class ScrapeProvider(Protocol):
    def scrape(self, url: str) -> ScrapedPage: ...


class DateProvider(Protocol):
    def date(self, url: str, raw_page: str) -> dt.date | None: ...


class ThumbFetcher(Protocol):
    def fetch(self, url: str) -> bytes: ...


def _status_error(what: str, status: int) -> ProviderError:
    return ProviderError(
        f"{what} returned HTTP {status}", retryable=status == 429 or status >= 500, status=status
    )


class SerperLensProvider:
    """Google Lens results through the Serper API (needs a public image URL)."""

    def __init__(
        self,
        endpoint: str = "https://google.serper.dev/lens",
        api_key_env: str = "SERPER_API_KEY",
        client: httpx.Client | None = None,
        timeout: float = 60.0,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)

    def search(self, image: ClaimImage, limit: int = RIS_LIMIT) -> list[dict]:
        if not image.url:
            raise ProviderError("Lens search needs the image's public URL", retryable=False)
        key = os.environ.get(self.api_key_env, "")
        try:
            resp = self._client.post(self.endpoint, json={"url": image.url}, headers={"X-API-KEY": key})
        except httpx.HTTPError as exc:
            raise ProviderError(f"RIS request failed: {exc}", retryable=True) from exc
        if resp.status_code != 200:
            raise _status_error("RIS provider", resp.status_code)
        items = resp.json().get("organic") or []
        return [
            {
                "link": it.get("link", ""),
                "thumbnail": it.get("thumbnailUrl", ""),
                "image": it.get("imageUrl", ""),
                "title": it.get("title", ""),
            }
            for it in items[:limit]
        ]


class FirecrawlScraper:
    def __init__(
        self,
        endpoint: str = "https://api.firecrawl.dev/v1/scrape",
        api_key_env: str = "FIRECRAWL_API_KEY",
        client: httpx.Client | None = None,
        timeout: float = 120.0,
    ):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)

    def scrape(self, url: str) -> ScrapedPage:
        key = os.environ.get(self.api_key_env, "")
        body = {"url": url, "formats": ["markdown", "rawHtml"], "onlyMainContent": True}
        try:
            resp = self._client.post(self.endpoint, json=body, headers={"Authorization": f"Bearer {key}"})
        except httpx.HTTPError as exc:
            raise ProviderError(f"scrape request failed: {exc}", retryable=True) from exc
        if resp.status_code in (403, 451):
            # target refused or is on the provider's unsupported list
            return ScrapedPage("")
        if resp.status_code != 200:
            raise _status_error("scrape provider", resp.status_code)
        data = resp.json().get("data") or {}
        if (data.get("metadata") or {}).get("statusCode") in _PROTECTED_STATUS:
            return ScrapedPage("")
        return ScrapedPage(data.get("markdown") or "", data.get("rawHtml") or "")


def html_to_markdown(html: str) -> str:
    """Main-content markdown for a page, dropping boilerplate and all images."""
    import html2text
    import lxml.html
    from lxml.etree import ParserError

    try:
        tree = lxml.html.fromstring(html)
    except (ParserError, ValueError):
        return ""
    for el in tree.xpath(
        "//script|//style|//noscript|//nav|//footer|//header|//aside|//form|//iframe|//svg"
    ):
        el.drop_tree()
    main = (tree.xpath("//article") or tree.xpath("//main") or tree.xpath("//*[@role='main']") or [tree])[0]
    conv = html2text.HTML2Text()
    conv.ignore_images = True
    conv.body_width = 0
    return conv.handle(lxml.html.tostring(main, encoding="unicode")).strip()


class FetchScraper:
    """Plain HTTP fetch plus a readability-style main-content extraction.

    Pages that refuse access come back empty, the same discard signal an
    API scraper gives for scraping-protected posts.
    """

    def __init__(self, client: httpx.Client | None = None, timeout: float = 30.0, user_agent: str = "Mozilla/5.0"):
        self._client = client or httpx.Client(timeout=timeout, follow_redirects=True)
        self.user_agent = user_agent

    def scrape(self, url: str) -> ScrapedPage:
        try:
            resp = self._client.get(url, headers={"User-Agent": self.user_agent})
        except httpx.HTTPError as exc:
            raise ProviderError(f"fetch of {url} failed: {exc}", retryable=True) from exc
        if resp.status_code in _PROTECTED_STATUS:
            return ScrapedPage("")
        if resp.status_code != 200:
            raise _status_error(f"fetch of {url}", resp.status_code)
        raw = resp.text
        return ScrapedPage(html_to_markdown(raw), raw)


class HtmldateDater:
    """Publication date heuristics from htmldate (meta tags, JSON-LD, URL, text)."""

    def __init__(self, original_date: bool = True, extensive_search: bool = True):
        self.original_date = original_date
        self.extensive_search = extensive_search

    def date(self, url: str, raw_page: str) -> dt.date | None:
        from htmldate import find_date

        if not raw_page:
            return None
        found = find_date(
            raw_page,
            url=url or None,
            original_date=self.original_date,
            extensive_search=self.extensive_search,
            outputformat="%Y-%m-%d",
        )
        return dt.date.fromisoformat(found) if found else None


class HttpThumbFetcher:
    def __init__(self, client: httpx.Client | None = None, timeout: float = 30.0):
        self._client = client or httpx.Client(timeout=timeout, follow_redirects=True)

    def fetch(self, url: str) -> bytes:
        if url.startswith("data:"):
            try:
                return base64.b64decode(url.split(",", 1)[1], validate=True)
            except (IndexError, ValueError) as exc:
                raise ThumbFetchError(f"bad data URI thumbnail: {exc}") from exc
        try:
            resp = self._client.get(url)
        except httpx.HTTPError as exc:
            raise ThumbFetchError(f"thumbnail fetch failed: {exc}") from exc
        if resp.status_code != 200 or not resp.content:
            raise ThumbFetchError(f"thumbnail fetch returned HTTP {resp.status_code}")
        return resp.content


class ThumbnailCache:
    """Base64 thumbnails fetched on first use and memoised by URL."""

    def __init__(self, fetcher: ThumbFetcher):
        self.fetcher = fetcher
        self._lock = threading.Lock()
        self._cache: dict[str, str] = {}
        self.fetches = 0

    def get(self, url: str) -> str:
        with self._lock:
            if url in self._cache:
                return self._cache[url]
        if not url:
            raise ThumbFetchError("source has no thumbnail URL")
        data = self.fetcher.fetch(url)
        if not data:
            raise ThumbFetchError(f"empty thumbnail at {url}")
        payload = base64.b64encode(data).decode("ascii")
        with self._lock:
            self.fetches += 1
            self._cache.setdefault(url, payload)
            return self._cache[url]


def reverse_image_search(image: ClaimImage, provider: RISProvider, limit: int = RIS_LIMIT) -> list[RISResult]:
    """Search ``image``; an empty list is a legitimate answer, not an error."""
    if not image.data and not image.url:
        raise ValueError("cannot search an empty image")
    raw = provider.search(image, limit)
    out = []
    for item in raw[:limit]:
        link = item.get("link") or item.get("url") or ""
        if not link:
            continue
        out.append(
            RISResult(
                url=link,
                thumbnail_url=item.get("thumbnail") or item.get("thumbnail_url") or "",
                title=item.get("title") or "",
                rank=len(out) + 1,
                image_url=item.get("image") or item.get("image_url") or "",
            )
        )
    return out


def _check_url(url: str) -> None:
    parts = urlparse(url)
    if parts.scheme not in ("http", "https") or not parts.netloc:
        raise ProviderError(f"malformed URL {url!r}", retryable=False)


def scrape_page(url: str, scraper: ScrapeProvider) -> str:
    """Markdown of ``url``; an empty string means protected or empty, discard it."""
    _check_url(url)
    return scraper.scrape(url).markdown


def estimate_publication_date(url: str, raw_page: str, dater: DateProvider) -> dt.date | None:
    try:
        return dater.date(url, raw_page)
    except Exception as exc:  # dating is best-effort by contract
        log.debug("date estimation failed for %s: %s", url, exc)
        return None


def filter_and_cap(
    results: Sequence[tuple[RISResult, str, dt.date | None]],
    claim_date: dt.date,
    cap: int = SOURCE_CAP,
    image_index: int = 1,
) -> ImageSourceSet:
    if not 1 <= cap <= SOURCE_CAP:
        raise ValueError(f"cap must be between 1 and {SOURCE_CAP}")
    kept = []
    for ris, markdown, page_date in sorted(results, key=lambda r: r[0].rank):
        if not markdown.strip():
            continue
        if page_date is not None and page_date > claim_date:
            continue
        kept.append(ImageSource(ris, markdown, page_date, image_index))
        if len(kept) == cap:
            break
    return ImageSourceSet(image_index, tuple(kept))


@dataclass
class ImageProviders:
    ris: RISProvider
    scraper: ScrapeProvider
    dater: DateProvider
    permits: int = 4
    retry_attempts: int = 3
    retry_base_delay: float = 0.5
    _sem: threading.Semaphore | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.permits < 1:
            raise ValueError("permits must be at least 1")
        self._sem = threading.Semaphore(self.permits)


@dataclass
class ImageRetrieval:
    """Outcome of the image module for one claim, including what it cost."""

    sets: list[ImageSourceSet] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    ris_searches: int = 0
    scraped_pages: int = 0


def _scrape_and_date(ris: RISResult, providers: ImageProviders, warnings: list[str]):
    with providers._sem:
        try:
            _check_url(ris.url)
            page = with_retries(
                lambda: providers.scraper.scrape(ris.url),
                providers.retry_attempts,
                providers.retry_base_delay,
            )
        except ProviderError as exc:
            warnings.append(f"scrape failed for {ris.url}: {exc}")
            return ris, "", None
    if not page.markdown.strip():
        return ris, "", None
    return ris, page.markdown, estimate_publication_date(ris.url, page.raw_html or page.markdown, providers.dater)


def _sources_for_image(
    image_index: int,
    image: ClaimImage,
    claim_date: dt.date,
    providers: ImageProviders,
    cap: int,
    out: ImageRetrieval,
    lock: threading.Lock,
) -> ImageSourceSet:
    results = with_retries(
        lambda: reverse_image_search(image, providers.ris),
        providers.retry_attempts,
        providers.retry_base_delay,
    )
    with lock:
        out.ris_searches += 1
    if not results:
        with lock:
            out.warnings.append(f"image {image_index}: reverse image search returned no results")
    warnings: list[str] = []
    kept: list[ImageSource] = []
    pos = 0
    # scrape only as many pages as could still make the cut, in rank order
    while len(kept) < cap and pos < len(results):
        need = cap - len(kept)
        window = results[pos : pos + need]
        pos += len(window)
        with ThreadPoolExecutor(max_workers=min(providers.permits, len(window))) as pool:
            triples = list(pool.map(lambda r: _scrape_and_date(r, providers, warnings), window))
        with lock:
            out.scraped_pages += len(window)
        kept.extend(filter_and_cap(triples, claim_date, need, image_index).sources)
    with lock:
        out.warnings.extend(f"image {image_index}: {w}" for w in warnings)
        out.warnings.extend(
            f"image {image_index}: source {s.ris.url} has no publication date, kept"
            for s in kept
            if s.undated
        )
    return ImageSourceSet(image_index, tuple(kept))


def retrieve_image_sources(claim: Claim, providers: ImageProviders, cap: int = SOURCE_CAP) -> ImageRetrieval:
    """Run the search/scrape/filter chain once per claim image, concurrently.

    A failure on one image is recorded and does not abort the others.
    """
    out = ImageRetrieval()
    if not claim.images:
        return out
    lock = threading.Lock()

    def run(i_img):
        i, img = i_img
        try:
            return _sources_for_image(i, img, claim.date, providers, cap, out, lock)
        except (ProviderError, ValueError) as exc:
            if isinstance(exc, ProviderError) and exc.status in (401, 403):
                raise  # bad credentials affect every claim; let the run abort
            with lock:
                out.errors.append(f"image {i}: {exc}")
            return None

    with ThreadPoolExecutor(max_workers=len(claim.images)) as pool:
        sets = list(pool.map(run, enumerate(claim.images, start=1)))
    out.sets = [s for s in sets if s is not None]
    out.errors.sort()
    out.warnings.sort()
    return out


def image_key(image: ClaimImage) -> str:
    """Stable identity of a claim image, used to key recorded fixtures."""
    return image.url or "sha256:" + hashlib.sha256(image.data).hexdigest()
