"""BM25 selection of train-set claims whose QA evidence serves as few-shot examples."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from factrag.claims import ANSWER_TYPES, VERDICT_LABELS
from factrag.errors import EmptyCorpus

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class TrainExample:
    claim_text: str
    gold_label: str
    qa_pairs: tuple[tuple[str, str, str], ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "qa_pairs", tuple(tuple(p) for p in self.qa_pairs))
        for _, _, answer_type in self.qa_pairs:
            if answer_type not in ANSWER_TYPES:
                raise ValueError(f"unknown answer type {answer_type!r}")


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.5
    b: float = 0.75

    def __post_init__(self):
        if self.k1 < 0 or not 0 <= self.b <= 1:
            raise ValueError(f"invalid BM25 parameters k1={self.k1}, b={self.b}")


def tokenize(text: str) -> list[str]:
    return [t for t in _SPLIT.split(text.lower()) if t]


class Bm25Index:
    """Okapi BM25 over a fixed list of documents.

    IDF is ``ln(1 + (N - df + 0.5) / (df + 0.5))``, which stays positive even
    for terms occurring in most documents.
    """

    def __init__(self, docs: Sequence[str], params: Bm25Params | None = None):
        self.params = params or Bm25Params()
        self.tfs = [Counter(tokenize(d)) for d in docs]
        self.lengths = [sum(tf.values()) for tf in self.tfs]
        self.n = len(self.tfs)
        self.avgdl = sum(self.lengths) / self.n if self.n else 0.0
        df = Counter()
        for tf in self.tfs:
            df.update(tf.keys())
        self.idf = {t: math.log(1.0 + (self.n - c + 0.5) / (c + 0.5)) for t, c in df.items()}

    def scores(self, query: str) -> list[float]:
        k1, b = self.params.k1, self.params.b
        terms = [t for t in tokenize(query) if t in self.idf]
        out = []
        for tf, dl in zip(self.tfs, self.lengths):
            norm = k1 * (1.0 - b + b * (dl / self.avgdl if self.avgdl else 1.0))
            s = 0.0
            for t in terms:
                f = tf.get(t, 0)
                if f:
                    s += self.idf[t] * f * (k1 + 1.0) / (f + norm)
            out.append(s)
        return out

    def rank(self, query: str, top_n: int) -> list[int]:
        scores = self.scores(query)
        order = sorted(range(self.n), key=lambda i: (-scores[i], i))
        return order[:top_n]


def bm25_rank(
    query: str,
    corpus: Sequence[TrainExample],
    params: Bm25Params | None = None,
    top_n: int = 3,
) -> list[TrainExample]:
    if not corpus:
        raise EmptyCorpus("BM25 corpus is empty")
    if top_n < 1:
        raise ValueError("top_n must be positive")
    index = Bm25Index([ex.claim_text for ex in corpus], params)
    return [corpus[i] for i in index.rank(query, top_n)]


class FewShotSelector:
    """Keeps the BM25 index over a train set so every claim reuses it."""

    def __init__(self, corpus: Sequence[TrainExample], params: Bm25Params | None = None):
        if not corpus:
            raise EmptyCorpus("few-shot corpus is empty")
        self.corpus = list(corpus)
        self.index = Bm25Index([ex.claim_text for ex in self.corpus], params)

    def select(self, claim_text: str, n_claims: int = 3) -> list[TrainExample]:
        return [self.corpus[i] for i in self.index.rank(claim_text, n_claims)]


def select_fewshot(
    claim_text: str,
    corpus: Sequence[TrainExample],
    n_claims: int = 3,
    params: Bm25Params | None = None,
) -> list[TrainExample]:
    return FewShotSelector(corpus, params).select(claim_text, n_claims)


def _normalise_label(label: str) -> str:
    for known in VERDICT_LABELS:
        if label.strip().lower() == known.lower():
            return known
    raise ValueError(f"unknown verdict label {label!r}")


def load_train_set(path: str | Path) -> list[TrainExample]:
    """Read the train JSON array.

    Both a flat ``qa_pairs`` list and the nested shared-task layout
    (``questions[].answers[]``) are understood; only the first answer of each
    question is kept.
    """
    records = json.loads(Path(path).read_text(encoding="utf-8"))
    out = []
    for rec in records:
        text = rec.get("claim_text") or rec.get("claim") or rec.get("text") or ""
        label = _normalise_label(rec.get("gold_label") or rec.get("label") or "")
        pairs = []
        if "qa_pairs" in rec:
            for p in rec["qa_pairs"]:
                if isinstance(p, dict):
                    pairs.append((p["question"], p["answer"], p.get("answer_type", "Extractive")))
                else:
                    pairs.append(tuple(p))
        else:
            for q in rec.get("questions", []):
                answers = q.get("answers") or []
                if not answers:
                    continue
                a = answers[0]
                pairs.append((q["question"], str(a.get("answer", "")), a.get("answer_type", "Extractive")))
        out.append(TrainExample(text, label, tuple(pairs)))
    return out
