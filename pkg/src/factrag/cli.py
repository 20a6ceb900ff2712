"""Command line entry point: ``factrag build-store | run | score | cost-report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from factrag.claims import load_claims
from factrag.config import PipelineConfig, PriceTable, load_config
from factrag.errors import ConfigError, FactragError
from factrag.generation import EvidenceFormatMode, OpenAIChatProvider, BatchResultsProvider
from factrag.image_retrieval import (
    FetchScraper,
    FirecrawlScraper,
    HtmldateDater,
    HttpThumbFetcher,
    ImageProviders,
    SerperLensProvider,
    ThumbnailCache,
)
from factrag.knowledge_store import HashingEmbedder, HttpEmbedder, save_store, store_path
from factrag.pipeline import CostLedger, Journal, LedgerEntry, Runtime, build_store_for, run_batch, score_report
from factrag.replay import ReplayStore

log = logging.getLogger("factrag")

MODE_CHOICES = {"answer_only": "answer_only", "qa": "question_plus_answer", "declarative": "declarative"}


def make_embedder(cfg: PipelineConfig):
    e = cfg.embedder
    if e.kind == "hashing":
        return HashingEmbedder(int(e.options.get("dim", 256)))
    if e.kind == "http":
        if not e.endpoint:
            raise ConfigError("embedder.endpoint is required for the http embedder")
        return HttpEmbedder(e.endpoint, e.model or "mxbai-embed-large-v1", e.api_key_env)
    raise ConfigError(f"unknown embedder kind {e.kind!r}")


def make_runtime(cfg: PipelineConfig) -> Runtime:
    embedder = make_embedder(cfg)
    if cfg.replay is not None:
        store = ReplayStore(cfg.replay)
        ris, scraper, thumbs, llm = store.ris(), store.scraper(), store.thumbs(), store.llm()
    else:
        kw = lambda pc: {k: v for k, v in (("endpoint", pc.endpoint), ("api_key_env", pc.api_key_env)) if v}  # noqa: E731
        if cfg.ris.kind != "serper":
            raise ConfigError(f"unknown RIS provider {cfg.ris.kind!r}")
        ris = SerperLensProvider(**kw(cfg.ris))
        if cfg.scraper.kind == "firecrawl":
            scraper = FirecrawlScraper(**kw(cfg.scraper))
        elif cfg.scraper.kind == "fetch":
            scraper = FetchScraper()
        else:
            raise ConfigError(f"unknown scraper {cfg.scraper.kind!r}")
        thumbs = HttpThumbFetcher()
        if cfg.llm.kind == "openai":
            llm = OpenAIChatProvider(model=cfg.llm.model or "gpt-5.1", **kw(cfg.llm))
        elif cfg.llm.kind == "batch":
            if "results" not in cfg.llm.options:
                raise ConfigError("llm.results (batch output file) is required for the batch provider")
            llm = BatchResultsProvider(cfg.llm.options["results"])
        else:
            raise ConfigError(f"unknown LLM provider {cfg.llm.kind!r}")
    images = ImageProviders(
        ris, scraper, HtmldateDater(), cfg.scrape_permits, cfg.retry_attempts, cfg.retry_base_delay
    )
    return Runtime(cfg, embedder, images, llm, ThumbnailCache(thumbs))


def _cmd_build_store(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        knowledge_store_dir=Path(args.knowledge_store) if args.knowledge_store else None,
        store_dir=Path(args.store_dir) if args.store_dir else None,
    )
    if cfg.knowledge_store_dir is None:
        raise ConfigError("knowledge_store_dir is not configured")
    embedder = make_embedder(cfg)
    sources = sorted(
        p for p in Path(cfg.knowledge_store_dir).iterdir() if p.suffix in (".json", ".jsonl")
    )
    if args.claims:
        wanted = {c.claim_id for c in load_claims(args.claims)}
        sources = [p for p in sources if p.stem in wanted]
    for src in sources:
        dest = store_path(cfg.store_dir, src.stem)
        if dest.exists() and not args.force:
            continue
        store = build_store_for(src.stem, src, embedder, cfg)
        save_store(store, dest)
        print(f"{src.stem}: {len(store)} chunks, dim {store.dim} -> {dest}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config)
    cfg = cfg.with_overrides(
        mode=EvidenceFormatMode.parse(MODE_CHOICES[args.mode]) if args.mode else None,
        replay=Path(args.replay) if args.replay else None,
        parallel=args.parallel,
        claims=Path(args.claims) if args.claims else None,
    )
    if cfg.claims is None:
        raise ConfigError("no claims file given (--claims or config 'claims')")
    cfg.prices.require_token_prices()
    claims = load_claims(cfg.claims)
    rt = make_runtime(cfg)
    report = run_batch(claims, rt, args.out, args.journal)
    total = report.ledger.report()["total"]
    print(
        f"{report.completed} claims written to {report.submission_path} "
        f"({report.failed} failed, {report.skipped} resumed from journal); "
        f"cost {total['usd_total_discounted']} USD"
    )
    return 0


def _load_gold(path: Path) -> dict[str, str]:
    data = json.loads(path.read_text(encoding="utf-8"))
    if isinstance(data, dict):
        return {str(k): v for k, v in data.items()}
    gold = {}
    for i, rec in enumerate(data):
        cid = str(rec.get("claim_id", rec.get("id", i)))
        gold[cid] = rec.get("label") or rec.get("gold_label")
    return gold


def _cmd_score(args) -> int:
    outputs = json.loads(Path(args.submission).read_text(encoding="utf-8"))
    gold = _load_gold(Path(args.gold))
    scores = None
    if args.evidence_scores:
        scores = json.loads(Path(args.evidence_scores).read_text(encoding="utf-8"))
    report = score_report(outputs, gold, scores)
    text = json.dumps(report, indent=1, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _cmd_cost_report(args) -> int:
    prices = load_config(args.config).prices if args.config else PriceTable()
    path = Path(args.ledger)
    ledger = CostLedger(prices)
    if path.suffix == ".jsonl":
        for rec in Journal(path).records.values():
            ledger.add(LedgerEntry(**rec["ledger"]))
    else:
        for cid, e in json.loads(path.read_text(encoding="utf-8"))["per_claim"].items():
            fields = ("ris_searches", "scraped_pages", "input_tokens", "output_tokens", "llm_calls")
            ledger.add(LedgerEntry(cid, **{f: e[f] for f in fields}))
    print(json.dumps(ledger.report() if args.per_claim else {k: v for k, v in ledger.report().items() if k != "per_claim"}, indent=1, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factrag", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-store", help="chunk and embed knowledge stores into vector stores")
    b.add_argument("--config", required=True)
    b.add_argument("--claims", help="only build stores for these claims")
    b.add_argument("--knowledge-store")
    b.add_argument("--store-dir")
    b.add_argument("--force", action="store_true", help="rebuild existing stores")
    b.set_defaults(func=_cmd_build_store)

    r = sub.add_parser("run", help="fact-check claims and write a submission file")
    r.add_argument("--config", required=True)
    r.add_argument("--claims")
    r.add_argument("--out", required=True)
    r.add_argument("--mode", choices=sorted(MODE_CHOICES))
    r.add_argument("--replay", help="serve all providers from a fixture directory")
    r.add_argument("--parallel", type=int)
    r.add_argument("--journal", help="journal path (default: <out>.journal.jsonl)")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("score", help="verdict accuracy and combined score of a submission")
    s.add_argument("--submission", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--evidence-scores", help="JSON object claim_id -> externally computed evidence score")
    s.add_argument("--out")
    s.set_defaults(func=_cmd_score)

    c = sub.add_parser("cost-report", help="aggregate a run's cost ledger")
    c.add_argument("--ledger", required=True, help="<out>.costs.json or a run journal (.jsonl)")
    c.add_argument("--config", help="config carrying the price table")
    c.add_argument("--per-claim", action="store_true")
    c.set_defaults(func=_cmd_cost_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except FactragError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        print("interrupted; finished claims are journaled, rerun to resume", file=sys.stderr)
        return 130


if __name__ == "__main__":
    sys.exit(main())
