"""Per-claim vector stores built from the text-only knowledge store.

Documents are cut into fixed-width, non-overlapping character segments. Each
segment remembers a window of the neighbouring text so the prompt can show it
in context. Stores are persisted as a small binary container: a JSON header
followed by packed little-endian float32 vectors.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import struct
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import httpx
import numpy as np

from factrag.errors import EmbeddingError, FormatError, ProviderError

MAX_CHUNK_LEN = 2048
CONTEXT_WINDOW = 256
DEFAULT_EMBED_MODEL = "mxbai-embed-large-v1"

STORE_MAGIC = b"FRVS"
STORE_VERSION = 1
STORE_SUFFIX = ".fvs"


@dataclass(frozen=True)
class SourceDocument:
    url: str
    text: str

    def __post_init__(self):
        if not self.url:
            raise ValueError("SourceDocument.url must be non-empty")


@dataclass(frozen=True)
class Chunk:
    doc_url: str
    index: int
    text: str
    context_before: str = ""
    context_after: str = ""


@dataclass(frozen=True, eq=False)
class EmbeddedChunk:
    chunk: Chunk
    vector: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, EmbeddedChunk):
            return NotImplemented
        # bit-exact, so NaN payloads and -0.0 compare as stored
        return (
            self.chunk == other.chunk
            and self.vector.dtype == other.vector.dtype
            and self.vector.shape == other.vector.shape
            and self.vector.tobytes() == other.vector.tobytes()
        )

    __hash__ = None


@dataclass(frozen=True)
class VectorStore:
    claim_id: str
    dim: int
    entries: tuple[EmbeddedChunk, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"store dimension must be positive, got {self.dim}")
        object.__setattr__(self, "entries", tuple(self.entries))
        for e in self.entries:
            if e.vector.shape != (self.dim,):
                raise ValueError(
                    f"entry vector shape {e.vector.shape} does not match store dim {self.dim}"
                )

    def __len__(self) -> int:
        return len(self.entries)

    @cached_property
    def matrix(self) -> np.ndarray:
        """All vectors stacked into a read-only ``(len, dim)`` float32 array."""
        if not self.entries:
            m = np.zeros((0, self.dim), dtype=np.float32)
        else:
            m = np.stack([e.vector for e in self.entries]).astype(np.float32, copy=False)
        m.setflags(write=False)
        return m


def chunk_document(
    doc: SourceDocument, max_len: int = MAX_CHUNK_LEN, context_window: int = CONTEXT_WINDOW
) -> list[Chunk]:
    """Split ``doc.text`` into consecutive segments of at most ``max_len`` characters.

    Python strings index code points, so a segment boundary can never fall
    inside a character.
    """
    if max_len <= 0:
        raise ValueError("max_len must be positive")
    if context_window < 0:
        raise ValueError("context_window must be non-negative")
    text = doc.text
    pieces = [text[i : i + max_len] for i in range(0, len(text), max_len)]
    chunks = []
    for i, piece in enumerate(pieces):
        before = pieces[i - 1][max(0, len(pieces[i - 1]) - context_window) :] if i > 0 else ""
        after = pieces[i + 1][:context_window] if i + 1 < len(pieces) else ""
        chunks.append(Chunk(doc.url, i, piece, before, after))
    return chunks


class EmbeddingProvider(Protocol):
    def embed(self, texts: list[str]) -> list[Sequence[float]]: ...


class HashingEmbedder:
    """Deterministic bag-of-words feature hashing embedder.

    Needs no model or network, which makes it the embedder of choice for
    offline fixtures and smoke runs. Vectors are L2-normalised.
    """

    _token = re.compile(r"[^\W_]+", re.UNICODE)

    def __init__(self, dim: int = 256):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            v = np.zeros(self.dim, dtype=np.float64)
            for tok in self._token.findall(text.lower()):
                h = hashlib.blake2b(tok.encode("utf-8"), digest_size=8).digest()
                n = int.from_bytes(h, "little")
                v[n % self.dim] += 1.0 if (n >> 63) & 1 else -1.0
            norm = np.linalg.norm(v)
            if norm > 0:
                v /= norm
            out.append(v.astype(np.float32))
        return out


class HttpEmbedder:
    """Client for an OpenAI-compatible ``/embeddings`` endpoint."""

    def __init__(
        self,
        endpoint: str,
        model: str = DEFAULT_EMBED_MODEL,
        api_key_env: str | None = "EMBEDDING_API_KEY",
        timeout: float = 60.0,
        client: httpx.Client | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._client = client or httpx.Client(timeout=timeout)

    def embed(self, texts: list[str]) -> list[list[float]]:
        headers = {}
        key = os.environ.get(self.api_key_env) if self.api_key_env else None
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._client.post(
                self.endpoint, json={"model": self.model, "input": texts}, headers=headers
            )
        except httpx.HTTPError as exc:
            raise ProviderError(f"embedding request failed: {exc}", retryable=True) from exc
        if resp.status_code != 200:
            raise ProviderError(
                f"embedding endpoint returned {resp.status_code}",
                retryable=resp.status_code == 429 or resp.status_code >= 500,
                status=resp.status_code,
            )
        data = resp.json()["data"]
        data = sorted(data, key=lambda d: d.get("index", 0))
        return [d["embedding"] for d in data]


def _embed_all(embedder: EmbeddingProvider, texts: list[str], batch_size: int, workers: int):
    batches = [texts[i : i + batch_size] for i in range(0, len(texts), batch_size)]

    def run(batch):
        try:
            vecs = embedder.embed(batch)
        except EmbeddingError:
            raise
        except Exception as exc:
            raise EmbeddingError(f"embedding provider failed: {exc}") from exc
        if len(vecs) != len(batch):
            raise EmbeddingError(f"provider returned {len(vecs)} vectors for {len(batch)} texts")
        return vecs

    if workers <= 1 or len(batches) <= 1:
        results = [run(b) for b in batches]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, batches))
    return [v for batch in results for v in batch]


def _as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float32)
    if arr.ndim != 1:
        raise EmbeddingError(f"embedding must be one-dimensional, got shape {arr.shape}")
    return arr


def embed_query(embedder: EmbeddingProvider, text: str) -> np.ndarray:
    try:
        (vec,) = embedder.embed([text])
    except EmbeddingError:
        raise
    except Exception as exc:
        raise EmbeddingError(f"embedding provider failed: {exc}") from exc
    return _as_vector(vec)


def build_store(
    claim_id: str,
    docs: Iterable[SourceDocument],
    embedder: EmbeddingProvider,
    *,
    max_len: int = MAX_CHUNK_LEN,
    context_window: int = CONTEXT_WINDOW,
    batch_size: int = 32,
    workers: int = 1,
    dim: int | None = None,
) -> VectorStore:
    """Chunk and embed every document into a fresh store.

    ``dim`` only matters for an empty store, where no vector reveals the
    dimension; it defaults to the embedder's ``dim`` attribute if it has one.
    """
    chunks = [c for d in docs for c in chunk_document(d, max_len, context_window)]
    vecs = [_as_vector(v) for v in _embed_all(embedder, [c.text for c in chunks], batch_size, workers)]
    dims = {v.shape[0] for v in vecs}
    if len(dims) > 1:
        raise EmbeddingError(f"embedder returned inconsistent dimensions {sorted(dims)}")
    if dims:
        store_dim = dims.pop()
        if store_dim == 0:
            raise EmbeddingError("embedder returned zero-length vectors")
    else:
        store_dim = dim or getattr(embedder, "dim", None) or 1
    entries = tuple(EmbeddedChunk(c, v) for c, v in zip(chunks, vecs))
    return VectorStore(claim_id, store_dim, entries)


def save_store(store: VectorStore, path: str | os.PathLike) -> None:
    payload = store.matrix.astype("<f4").tobytes()
    header = {
        "version": STORE_VERSION,
        "claim_id": store.claim_id,
        "dim": store.dim,
        "count": len(store),
        "payload_crc32": zlib.crc32(payload),
        "chunks": [
            [e.chunk.doc_url, e.chunk.index, e.chunk.text, e.chunk.context_before, e.chunk.context_after]
            for e in store.entries
        ],
    }
    hbytes = json.dumps(header, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(STORE_MAGIC)
        f.write(struct.pack("<HI", STORE_VERSION, len(hbytes)))
        f.write(hbytes)
        f.write(payload)
    os.replace(tmp, path)


def load_store(path: str | os.PathLike) -> VectorStore:
    with open(path, "rb") as f:
        raw = f.read()
    prefix = len(STORE_MAGIC) + 6
    if len(raw) < prefix or raw[: len(STORE_MAGIC)] != STORE_MAGIC:
        raise FormatError(f"{path}: not a vector store file")
    version, hlen = struct.unpack("<HI", raw[len(STORE_MAGIC) : prefix])
    if version != STORE_VERSION:
        raise FormatError(f"{path}: unsupported store version {version}")
    if len(raw) < prefix + hlen:
        raise FormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[prefix : prefix + hlen].decode("utf-8"))
        dim, count = int(header["dim"]), int(header["count"])
        chunks = [Chunk(*c) for c in header["chunks"]]
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header: {exc}") from exc
    if header.get("version") != version or len(chunks) != count or dim <= 0:
        raise FormatError(f"{path}: inconsistent header")
    payload = raw[prefix + hlen :]
    if len(payload) != count * dim * 4:
        raise FormatError(f"{path}: expected {count * dim * 4} payload bytes, found {len(payload)}")
    if zlib.crc32(payload) != header.get("payload_crc32"):
        raise FormatError(f"{path}: payload checksum mismatch")
    mat = np.frombuffer(payload, dtype="<f4").astype(np.float32).reshape(count, dim)
    entries = []
    for c, row in zip(chunks, mat):
        v = row.copy()
        v.setflags(write=False)
        entries.append(EmbeddedChunk(c, v))
    return VectorStore(header["claim_id"], dim, tuple(entries))


def store_path(store_dir: str | os.PathLike, claim_id: str) -> Path:
    safe = re.sub(r"[^A-Za-z0-9_.-]", "_", str(claim_id))
    return Path(store_dir) / f"{safe}{STORE_SUFFIX}"


def load_knowledge_store(path: str | os.PathLike) -> list[SourceDocument]:
    """Read one claim's knowledge store.

    Accepts JSON-lines or a JSON array. Each record needs a ``url`` and either
    ``text`` or the shared-task ``url2text`` list of sentences. Records
    without a URL cannot be cited and are skipped.
    """
    raw = Path(path).read_text(encoding="utf-8")
    stripped = raw.lstrip()
    if stripped.startswith("["):
        records = json.loads(stripped)
    else:
        records = [json.loads(line) for line in raw.splitlines() if line.strip()]
    docs = []
    for rec in records:
        url = rec.get("url") or rec.get("source_url")
        if not url:
            continue
        text = rec.get("text")
        if text is None:
            parts = rec.get("url2text") or []
            text = "\n".join(parts) if isinstance(parts, list) else str(parts)
        docs.append(SourceDocument(url, text))
    return docs
