"""Per-claim orchestration, resumable batch runs, cost accounting and scoring."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor, wait, FIRST_COMPLETED
from dataclasses import dataclass, field
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from factrag.claims import Claim
from factrag.config import PipelineConfig, PriceTable
from factrag.errors import (
    AlignmentError,
    ConfigError,
    FactragError,
    GenerationFailed,
    ImageEncodeError,
    ProviderError,
    TemplateError,
)
from factrag.fewshot import FewShotSelector, load_train_set
from factrag.generation import LLMProvider, VerificationResult, verify
from factrag.image_retrieval import ImageProviders, ImageRetrieval, ThumbnailCache, retrieve_image_sources
from factrag.knowledge_store import (
    EmbeddingProvider,
    VectorStore,
    build_store,
    load_knowledge_store,
    load_store,
    save_store,
    store_path,
)
from factrag.prompt_builder import build_prompt, load_template
from factrag.text_retrieval import ScoredChunk, retrieve_text_sources

log = logging.getLogger(__name__)

COMBINED_EVIDENCE_THRESHOLD = Fraction(3, 10)


def _usd(d: Decimal) -> str:
    return format(d.normalize(), "f") if d else "0"


@dataclass(frozen=True)
class LedgerEntry:
    claim_id: str
    ris_searches: int = 0
    scraped_pages: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    llm_calls: int = 0

    def ris_usd(self, p: PriceTable) -> Decimal:
        return self.ris_searches * p.ris_per_search_usd

    def scrape_usd(self, p: PriceTable) -> Decimal:
        return self.scraped_pages * p.scrape_per_page_usd

    def llm_usd_raw(self, p: PriceTable) -> Decimal:
        p.require_token_prices()
        return self.input_tokens * p.llm_input_per_token_usd + self.output_tokens * p.llm_output_per_token_usd

    def llm_usd(self, p: PriceTable) -> Decimal:
        return self.llm_usd_raw(p) * (1 - p.llm_discount)

    def usd_total(self, p: PriceTable) -> Decimal:
        return self.ris_usd(p) + self.scrape_usd(p) + self.llm_usd_raw(p)

    def usd_total_discounted(self, p: PriceTable) -> Decimal:
        return self.ris_usd(p) + self.scrape_usd(p) + self.llm_usd(p)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


class CostLedger:
    """Thread-safe collection of per-claim spend with exact decimal totals."""

    def __init__(self, prices: PriceTable):
        self.prices = prices
        self._lock = threading.Lock()
        self.entries: dict[str, LedgerEntry] = {}

    def add(self, entry: LedgerEntry) -> None:
        with self._lock:
            self.entries[entry.claim_id] = entry

    def _aggregate(self) -> LedgerEntry:
        with self._lock:
            es = list(self.entries.values())
        return LedgerEntry(
            "*",
            sum(e.ris_searches for e in es),
            sum(e.scraped_pages for e in es),
            sum(e.input_tokens for e in es),
            sum(e.output_tokens for e in es),
            sum(e.llm_calls for e in es),
        )

    def _costs(self, e: LedgerEntry) -> dict:
        p = self.prices
        return {
            "ris_usd": _usd(e.ris_usd(p)),
            "scrape_usd": _usd(e.scrape_usd(p)),
            "llm_usd_raw": _usd(e.llm_usd_raw(p)),
            "llm_usd": _usd(e.llm_usd(p)),
            "usd_total": _usd(e.usd_total(p)),
            "usd_total_discounted": _usd(e.usd_total_discounted(p)),
        }

    def report(self) -> dict:
        agg = self._aggregate()
        n = len(self.entries)
        per_claim = {
            cid: {**e.to_dict(), **self._costs(e)}
            for cid, e in sorted(self.entries.items(), key=lambda kv: claim_sort_key(kv[0]))
        }
        total = {**agg.to_dict(), **self._costs(agg)}
        total.pop("claim_id")
        mean = {}
        if n:
            mean = {
                k: _usd(Decimal(v) / n) for k, v in self._costs(agg).items()
            }
        return {"claims": n, "total": total, "mean_per_claim": mean, "per_claim": per_claim}


def claim_sort_key(claim_id: str):
    return (0, int(claim_id), "") if claim_id.isdigit() else (1, 0, claim_id)


@dataclass
class ClaimOutput:
    claim_id: str
    verdict: str | None = None
    justification: str = ""
    questions: list[str] = field(default_factory=list)
    evidence: list[dict] = field(default_factory=list)
    failure: dict | None = None
    diagnostics: dict = field(default_factory=dict)

    def submission_record(self) -> dict:
        if self.failure is not None:
            return {"claim_id": self.claim_id, "failure": self.failure}
        return {
            "claim_id": self.claim_id,
            "questions": self.questions,
            "evidence": self.evidence,
            "verdict": self.verdict,
            "justification": self.justification,
        }


@dataclass
class Runtime:
    """Everything a claim run needs besides the claim itself."""

    config: PipelineConfig
    embedder: EmbeddingProvider
    images: ImageProviders
    llm: LLMProvider
    thumbs: ThumbnailCache
    fewshot: FewShotSelector | None = None
    template: str | None = None
    _store_locks: dict = field(default_factory=dict, repr=False)
    _guard: threading.Lock = field(default_factory=threading.Lock, repr=False)

    def __post_init__(self):
        if self.template is None:
            self.template = load_template(self.config.mode.template)
        if self.fewshot is None and self.config.train_set and self.config.n_fewshot:
            self.fewshot = FewShotSelector(load_train_set(self.config.train_set), self.config.bm25)

    def store_for(self, claim_id: str) -> VectorStore:
        """Load the claim's store, building it from the knowledge store if missing."""
        with self._guard:
            lock = self._store_locks.setdefault(claim_id, threading.Lock())
        with lock:
            path = store_path(self.config.store_dir, claim_id)
            if path.exists():
                return load_store(path)
            ks = self.config.knowledge_store_dir
            src = None
            if ks is not None:
                for suffix in (".jsonl", ".json"):
                    if (Path(ks) / f"{claim_id}{suffix}").exists():
                        src = Path(ks) / f"{claim_id}{suffix}"
                        break
            if src is None:
                raise FileNotFoundError(f"no vector store or knowledge store for claim {claim_id}")
            store = build_store_for(claim_id, src, self.embedder, self.config)
            save_store(store, path)
            return store


def build_store_for(claim_id: str, source: Path, embedder: EmbeddingProvider, cfg: PipelineConfig) -> VectorStore:
    return build_store(
        claim_id,
        load_knowledge_store(source),
        embedder,
        max_len=cfg.chunk_len,
        context_window=cfg.context_window,
        workers=cfg.parallel,
    )


def _text_sources(claim: Claim, rt: Runtime) -> list[ScoredChunk]:
    store = rt.store_for(claim.claim_id)
    return retrieve_text_sources(store, rt.config.query_prefix + claim.text, rt.embedder, rt.config.retrieval)


def _is_auth(exc: BaseException) -> bool:
    return isinstance(exc, ProviderError) and exc.status in (401, 403)


def run_claim(claim: Claim, rt: Runtime) -> tuple[ClaimOutput, LedgerEntry]:
    """Both retrievers (concurrently), prompt, one LLM call, parse and format."""
    cfg = rt.config
    t0 = time.perf_counter()
    diag: dict = {"warnings": [], "errors": []}
    out = ClaimOutput(claim.claim_id, diagnostics=diag)

    with ThreadPoolExecutor(max_workers=2) as pool:
        text_f = pool.submit(_text_sources, claim, rt)
        img_f = pool.submit(retrieve_image_sources, claim, rt.images, cfg.cap)
        try:
            text_sources = text_f.result()
        except (FactragError, OSError) as exc:
            if _is_auth(exc):
                raise ConfigError(f"text retrieval authentication failed: {exc}") from exc
            diag["errors"].append(f"text retrieval: {type(exc).__name__}: {exc}")
            text_sources = []
        try:
            images: ImageRetrieval = img_f.result()
        except ProviderError as exc:
            raise ConfigError(f"image retrieval authentication failed: {exc}") from exc
    t_retrieval = time.perf_counter()

    diag["errors"].extend(images.errors)
    diag["warnings"].extend(images.warnings)
    if claim.images and not any(s.sources for s in images.sets):
        diag["warnings"].append("no usable image evidence; prompt relies on text sources")
    diag["text_sources"] = len(text_sources)
    diag["image_sources"] = {s.image_index: len(s.sources) for s in images.sets}
    diag["undated_image_sources"] = sorted(
        src.ris.url for s in images.sets for src in s.sources if src.undated
    )

    fewshot = rt.fewshot.select(claim.text, cfg.n_fewshot) if rt.fewshot and cfg.n_fewshot else []
    entry = dict(claim_id=claim.claim_id, ris_searches=images.ris_searches, scraped_pages=images.scraped_pages)
    try:
        bundle = build_prompt(claim, text_sources, images.sets, fewshot, rt.template, cfg.body_cap)
    except (ImageEncodeError, TemplateError) as exc:
        out.failure = {"stage": "prompt", "error": f"{type(exc).__name__}: {exc}"}
        return out, LedgerEntry(**entry)

    try:
        result: VerificationResult = verify(
            bundle, rt.llm, rt.thumbs, cfg.mode, cfg.parse_retries, cfg.retry_attempts, cfg.retry_base_delay
        )
    except GenerationFailed as exc:
        out.failure = {"stage": "generation", "error": str(exc)}
        return out, LedgerEntry(**entry, input_tokens=exc.input_tokens, output_tokens=exc.output_tokens, llm_calls=exc.calls)
    except ProviderError as exc:
        if _is_auth(exc):
            raise ConfigError(f"LLM authentication failed: {exc}") from exc
        out.failure = {"stage": "llm", "error": f"{type(exc).__name__}: {exc}"}
        return out, LedgerEntry(**entry, llm_calls=1)

    diag["warnings"].extend(result.warnings)
    diag["timings_s"] = {
        "retrieval": round(t_retrieval - t0, 4),
        "total": round(time.perf_counter() - t0, 4),
    }
    out.verdict = result.verdict
    out.justification = result.justification
    out.questions = [p.question for p in result.qa_pairs]
    sources = bundle.source_table
    out.evidence = [
        {
            "text": ev.text,
            "source_id": ev.source,
            "source_url": sources[ev.source].url if ev.source in sources else None,
            "images": [ev.thumbnail] if ev.thumbnail else [],
        }
        for ev in result.evidence
    ]
    diag["likert"] = dataclasses.asdict(result.likert)
    return out, LedgerEntry(
        **entry,
        input_tokens=result.input_tokens,
        output_tokens=result.output_tokens,
        llm_calls=result.llm_calls,
    )


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class Journal:
    """Append-only JSON-lines record of finished claims.

    Each line holds the claim id, the submission record, its SHA-256 and the
    ledger entry. A torn final line (the process died mid-write) is ignored.
    """

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._lock = threading.Lock()
        self.records: dict[str, dict] = {}
        if self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError:
                    log.warning("ignoring torn journal line in %s", self.path)
                    continue
                if hashlib.sha256(_canonical(rec["output"]).encode()).hexdigest() != rec.get("sha256"):
                    log.warning("ignoring journal line with bad hash for claim %s", rec.get("claim_id"))
                    continue
                self.records[rec["claim_id"]] = rec

    def __contains__(self, claim_id: str) -> bool:
        return claim_id in self.records

    def append(self, output: ClaimOutput, entry: LedgerEntry) -> None:
        record = output.submission_record()
        rec = {
            "claim_id": output.claim_id,
            "sha256": hashlib.sha256(_canonical(record).encode()).hexdigest(),
            "output": record,
            "ledger": entry.to_dict(),
            "diagnostics": output.diagnostics,
        }
        line = json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n"
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            # repair a torn tail so the new record starts on its own line
            if self.path.exists() and self.path.stat().st_size:
                with open(self.path, "rb") as f:
                    f.seek(-1, os.SEEK_END)
                    if f.read(1) != b"\n":
                        line = "\n" + line
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(line)
                f.flush()
                os.fsync(f.fileno())
            self.records[output.claim_id] = rec


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class BatchReport:
    submission_path: Path
    journal_path: Path
    costs_path: Path
    completed: int
    failed: int
    skipped: int
    ledger: CostLedger


def run_batch(
    claims: Sequence[Claim],
    rt: Runtime,
    out_path: str | Path,
    journal_path: str | Path | None = None,
) -> BatchReport:
    """Run every claim not yet journaled, then write the submission and cost report.

    Claims run with bounded parallelism; each finished claim is journaled at
    once, so an interrupted run resumes where it stopped. Output order is by
    claim id, independent of completion order.
    """
    out_path = Path(out_path)
    journal = Journal(journal_path or out_path.with_name(out_path.name + ".journal.jsonl"))
    ids = [c.claim_id for c in claims]
    if len(set(ids)) != len(ids):
        raise ConfigError("claim ids must be unique")
    pending = [c for c in claims if c.claim_id not in journal]
    skipped = len(claims) - len(pending)
    if skipped:
        log.info("resuming: %d claims already journaled", skipped)

    pool = ThreadPoolExecutor(max_workers=rt.config.parallel)
    futures = {}
    it = iter(pending)
    try:
        # keep at most `parallel` claims in flight so an abort wastes little work
        for c in it:
            futures[pool.submit(run_claim, c, rt)] = c
            if len(futures) >= rt.config.parallel:
                break
        while futures:
            done, _ = wait(futures, return_when=FIRST_COMPLETED)
            for f in done:
                futures.pop(f)
                output, entry = f.result()
                journal.append(output, entry)
                nxt = next(it, None)
                if nxt is not None:
                    futures[pool.submit(run_claim, nxt, rt)] = nxt
    except BaseException:
        for f in futures:
            f.cancel()
        pool.shutdown(wait=True, cancel_futures=True)
        raise
    pool.shutdown(wait=True)

    ledger = CostLedger(rt.config.prices)
    records = []
    for cid in sorted(ids, key=claim_sort_key):
        rec = journal.records[cid]
        records.append(rec["output"])
        ledger.add(LedgerEntry(**rec["ledger"]))
    _atomic_write(out_path, json.dumps(records, indent=1, ensure_ascii=False, sort_keys=True) + "\n")
    costs_path = out_path.with_name(out_path.name + ".costs.json")
    _atomic_write(costs_path, json.dumps(ledger.report(), indent=1, sort_keys=True) + "\n")
    failed = sum(1 for r in records if "failure" in r)
    return BatchReport(out_path, journal.path, costs_path, len(records), failed, skipped, ledger)


def score_report(
    outputs: Iterable[dict],
    gold: dict[str, str],
    evidence_scores: dict[str, float] | None = None,
) -> dict:
    """Verdict accuracy, label distributions and, given per-claim evidence
    scores, the combined score: the share of claims whose verdict is right
    and whose evidence score is at least 0.3.
    """
    outputs = {str(o["claim_id"]): o for o in outputs}
    gold = {str(k): v for k, v in gold.items()}
    if set(outputs) != set(gold):
        missing, extra = sorted(set(gold) - set(outputs)), sorted(set(outputs) - set(gold))
        raise AlignmentError(f"claim ids differ: missing outputs {missing[:5]}, unknown outputs {extra[:5]}")
    if evidence_scores is not None:
        evidence_scores = {str(k): v for k, v in evidence_scores.items()}
        if set(evidence_scores) != set(gold):
            raise AlignmentError("evidence scores are not aligned with the gold claim ids")
    n = len(gold)
    correct = {cid for cid, o in outputs.items() if o.get("verdict") == gold[cid]}

    def dist(labels):
        counts: dict[str, int] = {}
        for lab in labels:
            counts[lab] = counts.get(lab, 0) + 1
        return dict(sorted(counts.items()))

    report = {
        "claims": n,
        "verdict_accuracy": float(Fraction(len(correct), n)) if n else 0.0,
        "failed": sum(1 for o in outputs.values() if "failure" in o),
        "gold_label_distribution": dist(gold.values()),
        "predicted_label_distribution": dist(o.get("verdict") or "<failed>" for o in outputs.values()),
    }
    if evidence_scores is not None:
        hits = sum(
            1
            for cid in correct
            if Fraction(str(evidence_scores[cid])) >= COMBINED_EVIDENCE_THRESHOLD
        )
        report["combined_score"] = float(Fraction(hits, n)) if n else 0.0
        report["mean_evidence_score"] = (
            float(sum(Fraction(str(v)) for v in evidence_scores.values()) / n) if n else 0.0
        )
    return report
