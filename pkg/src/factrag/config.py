"""Run configuration, loaded from YAML or JSON."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

import yaml

from factrag.errors import ConfigError
from factrag.fewshot import Bm25Params
from factrag.generation import EvidenceFormatMode
from factrag.image_retrieval import SOURCE_CAP
from factrag.text_retrieval import RetrievalParams


@dataclass(frozen=True)
class PriceTable:
    """USD unit prices. Token prices have no default: they depend on the model deal."""

    ris_per_search_usd: Decimal = Decimal("0.003")
    scrape_per_page_usd: Decimal = Decimal("0.006")
    llm_input_per_token_usd: Decimal | None = None
    llm_output_per_token_usd: Decimal | None = None
    llm_discount: Decimal = Decimal("0")  # e.g. 0.5 for batch pricing

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            v = Decimal(str(v))
            if v < 0:
                raise ConfigError(f"price {f.name} must be non-negative")
            object.__setattr__(self, f.name, v)
        if not Decimal(0) <= self.llm_discount <= Decimal(1):
            raise ConfigError("llm_discount must lie in [0, 1]")

    def require_token_prices(self) -> None:
        if self.llm_input_per_token_usd is None or self.llm_output_per_token_usd is None:
            raise ConfigError("llm_input_per_token_usd and llm_output_per_token_usd must be configured")


@dataclass(frozen=True)
class ProviderConfig:
    kind: str
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    options: dict = field(default_factory=dict)


@dataclass(frozen=True)
class PipelineConfig:
    claims: Path | None = None
    train_set: Path | None = None
    knowledge_store_dir: Path | None = None
    store_dir: Path = Path("stores")
    retrieval: RetrievalParams = RetrievalParams()
    bm25: Bm25Params = Bm25Params()
    n_fewshot: int = 3
    cap: int = 9
    mode: EvidenceFormatMode = EvidenceFormatMode.QUESTION_PLUS_ANSWER
    chunk_len: int = 2048
    context_window: int = 256
    body_cap: int = 6000
    query_prefix: str = ""
    prices: PriceTable = PriceTable()
    parallel: int = 1
    scrape_permits: int = 4
    retry_attempts: int = 3
    retry_base_delay: float = 0.5
    parse_retries: int = 1
    embedder: ProviderConfig = ProviderConfig("http", model="mxbai-embed-large-v1", api_key_env="EMBEDDING_API_KEY")
    ris: ProviderConfig = ProviderConfig("serper", api_key_env="SERPER_API_KEY")
    scraper: ProviderConfig = ProviderConfig("firecrawl", api_key_env="FIRECRAWL_API_KEY")
    llm: ProviderConfig = ProviderConfig("openai", model="gpt-5.1", api_key_env="OPENAI_API_KEY")
    replay: Path | None = None

    def __post_init__(self):
        if self.parallel < 1 or self.scrape_permits < 1:
            raise ConfigError("parallelism limits must be at least 1")
        if not 1 <= self.cap <= SOURCE_CAP or self.n_fewshot < 0:
            raise ConfigError(f"cap must be between 1 and {SOURCE_CAP} and n_fewshot non-negative")

    def with_overrides(self, **kw) -> "PipelineConfig":
        return dataclasses.replace(self, **{k: v for k, v in kw.items() if v is not None})


def _path(v, base: Path) -> Path | None:
    if v in (None, ""):
        return None
    p = Path(v)
    return p if p.is_absolute() else base / p


def config_from_dict(d: dict, base: Path = Path(".")) -> PipelineConfig:
    d = dict(d)
    kw = {}
    try:
        for key in ("claims", "train_set", "knowledge_store_dir", "store_dir", "replay"):
            if key in d:
                kw[key] = _path(d.pop(key), base)
        if "retrieval" in d:
            r = dict(d.pop("retrieval"))
            if "lambda" in r:
                r["lam"] = r.pop("lambda")
            kw["retrieval"] = RetrievalParams(**r)
        if "bm25" in d:
            kw["bm25"] = Bm25Params(**d.pop("bm25"))
        if "mode" in d:
            kw["mode"] = EvidenceFormatMode.parse(d.pop("mode"))
        if "prices" in d:
            kw["prices"] = PriceTable(**{k: Decimal(str(v)) for k, v in d.pop("prices").items()})
        for key in ("embedder", "ris", "scraper", "llm"):
            if key in d:
                pc = dict(d.pop(key))
                known = {f.name for f in dataclasses.fields(ProviderConfig)} - {"options"}
                opts = {k: pc.pop(k) for k in list(pc) if k not in known}
                # keep the default key variable unless the block names another one
                pc.setdefault("api_key_env", getattr(PipelineConfig, key).api_key_env)
                kw[key] = ProviderConfig(options=opts, **pc)
        kw.update(d)
        cfg = PipelineConfig(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    d = json.loads(text) if path.suffix == ".json" else yaml.safe_load(text)
    return config_from_dict(d or {}, path.parent)
