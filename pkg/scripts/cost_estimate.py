"""Per-claim cost from usage counts and a price table.

Default arguments reproduce the worked example: one image, nine scraped
pages, 11000 input and 1150 output tokens at batch prices.

    python scripts/cost_estimate.py
    python scripts/cost_estimate.py --images 2 --pages 18
    python scripts/cost_estimate.py --costs out/submission.json.costs.json
"""

from __future__ import annotations

import argparse
import json
from decimal import Decimal
from pathlib import Path

from factrag.config import PriceTable
from factrag.pipeline import LedgerEntry


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--images", type=int, default=1, help="reverse image searches")
    ap.add_argument("--pages", type=int, default=9, help="scraped pages")
    ap.add_argument("--input-tokens", type=int, default=11000)
    ap.add_argument("--output-tokens", type=int, default=1150)
    ap.add_argument("--input-price", default="0.00000125", help="USD per input token (list price)")
    ap.add_argument("--output-price", default="0.00001", help="USD per output token (list price)")
    ap.add_argument("--discount", default="0.5", help="fractional LLM discount, 0.5 for batch")
    ap.add_argument("--costs", type=Path, help="summarise a run's costs.json instead")
    args = ap.parse_args()

    if args.costs:
        rep = json.loads(args.costs.read_text(encoding="utf-8"))
        print(f"{rep['claims']} claims")
        for key, value in rep["mean_per_claim"].items():
            print(f"  mean {key:22s} {Decimal(value):.6f}")
        return

    prices = PriceTable(
        llm_input_per_token_usd=Decimal(args.input_price),
        llm_output_per_token_usd=Decimal(args.output_price),
        llm_discount=Decimal(args.discount),
    )
    e = LedgerEntry("estimate", args.images, args.pages, args.input_tokens, args.output_tokens, 1)
    rows = [
        ("reverse image search", e.ris_usd(prices)),
        ("scraping", e.scrape_usd(prices)),
        ("LLM (list price)", e.llm_usd_raw(prices)),
        ("LLM (after discount)", e.llm_usd(prices)),
        ("total", e.usd_total_discounted(prices)),
    ]
    for name, usd in rows:
        print(f"{name:22s} {usd.normalize():>12f} USD")


if __name__ == "__main__":
    main()
