"""Relevance versus redundancy of the text sources as lambda varies.

For each claim, retrieves the top-k chunks and reranks them with MMR at a
grid of lambda values, reporting the mean query similarity of the selected
chunks and their mean pairwise similarity.

    python scripts/mmr_sweep.py --config tests/fixtures/replay3/config.yaml
"""

from __future__ import annotations

import argparse
import itertools

import numpy as np

from factrag.claims import load_claims
from factrag.cli import make_runtime
from factrag.config import load_config
from factrag.knowledge_store import embed_query
from factrag.text_retrieval import cosine_matrix, cosine_scores, knn_search, mmr_rerank


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config", required=True)
    ap.add_argument("--lambdas", default="0,0.25,0.5,0.8,1")
    args = ap.parse_args()

    cfg = load_config(args.config)
    rt = make_runtime(cfg)
    lambdas = [float(x) for x in args.lambdas.split(",")]
    p = cfg.retrieval
    print(f"{'claim':>8} {'lambda':>6} {'relevance':>10} {'redundancy':>11}")
    for claim in load_claims(cfg.claims):
        store = rt.store_for(claim.claim_id)
        q = embed_query(rt.embedder, cfg.query_prefix + claim.text)
        cands = knn_search(store, q, p.k)
        for lam in lambdas:
            picked = mmr_rerank(cands, q, lam, p.l)
            vecs = np.stack([c.entry.vector for c in picked])
            rel = float(cosine_scores(vecs, q).mean())
            sims = cosine_matrix(vecs)
            pairs = list(itertools.combinations(range(len(picked)), 2))
            red = float(np.mean([sims[i, j] for i, j in pairs])) if pairs else 0.0
            print(f"{claim.claim_id:>8} {lam:>6.2f} {rel:>10.4f} {red:>11.4f}")


if __name__ == "__main__":
    main()
