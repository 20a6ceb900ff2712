"""Write the offline three-claim replay fixture used by the end-to-end tests.

    python scripts/make_replay_fixture.py tests/fixtures/replay3

Everything is synthetic and deterministic: claims and images, a small train
set, per-claim knowledge stores, and recorded answers for the reverse image
search, scraper, thumbnail and LLM providers.

Claim 1 has one image with 15 search hits (only 9 get scraped) and an LLM
answer reporting 11000 input / 1150 output tokens. Claim 2 has no image and
its first LLM answer is not JSON, so it exercises the retry. Claim 3 has two
images: the first finds nothing, the second finds 12 pages including a
protected one, one published after the claim and one without a date.
"""

from __future__ import annotations

import argparse
import base64
import json
import random
from pathlib import Path

PNG_1x1 = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010806000000"
    "1f15c4890000000d49444154789c6360f8cfc0f01f0005000201e221bc33"
    "0000000049454e44ae426082"
)

WORDS = (
    "flood storm river street cars city council rescue water rain damage bridge "
    "residents officials report photo image video archive season valley coast "
    "emergency services warning region town road mud debris volunteers week"
).split()


def prose(rng: random.Random, n_chars: int, topic: str) -> str:
    out, size = [], 0
    while size < n_chars:
        words = [rng.choice(WORDS) for _ in range(rng.randint(8, 16))]
        words.insert(rng.randint(0, len(words)), topic)
        sentence = " ".join(words).capitalize() + ". "
        out.append(sentence)
        size += len(sentence)
    return "".join(out)[:n_chars]


def page_html(title: str, body: str, date: str | None) -> str:
    meta = f'<meta property="article:published_time" content="{date}T08:00:00+00:00">' if date else ""
    return (
        f"<html><head><title>{title}</title>{meta}</head>"
        f"<body><article><h1>{title}</h1><p>{body}</p></article></body></html>"
    )


def hits(prefix: str, n: int) -> list[dict]:
    return [
        {
            "link": f"https://{prefix}.example/story/{i}",
            "thumbnail": f"https://thumbs.example/{prefix}/{i}.jpg",
            "image": f"https://{prefix}.example/media/{i}.jpg",
            "title": f"{prefix.capitalize()} story {i}",
        }
        for i in range(1, n + 1)
    ]


def llm_answer(questions, verdict, justification, likert=(1, 4, 2, 1)) -> str:
    labels = ("Supported", "Refuted", "Not Enough Evidence", "Conflicting Evidence/Cherrypicking")
    obj = {
        "questions": [
            {"question": q, "answer": a, "source": str(s), "answer_type": t} for q, a, s, t in questions
        ],
        "claim_veracity": {lab: str(v) for lab, v in zip(labels, likert)},
        "veracity_verdict": verdict,
        "verdict_justification": justification,
    }
    return "```json\n" + json.dumps(obj, indent=2) + "\n```"


def build(out: Path) -> None:
    rng = random.Random(20241101)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "knowledge_store").mkdir(exist_ok=True)
    (out / "replay").mkdir(exist_ok=True)
    for name in ("c1.png", "c3a.png", "c3b.png"):
        (out / "images" / name).write_bytes(PNG_1x1)

    claims = [
        {
            "claim_id": "1",
            "claim_text": "Photo shows cars piled up in a Valencia street after the October 2024 floods.",
            "date": "2024-11-01",
            "author": "Jane Doe",
            "medium": "Facebook",
            "images": [{"path": "images/c1.png", "url": "https://img.example/claims/1.png"}],
        },
        {
            "claim_id": "2",
            "claim_text": "The city council banned street parking for the whole flood season.",
            "date": "2024-10-20",
            "author": "",
            "medium": "X",
            "images": [],
        },
        {
            "claim_id": "3",
            "claim_text": "These two pictures show the same bridge before and after the river burst its banks.",
            "date": "2024-06-15",
            "author": "River Watch",
            "medium": "Instagram",
            "images": [
                {"path": "images/c3a.png", "url": "https://img.example/claims/3a.png"},
                {"path": "images/c3b.png", "url": "https://img.example/claims/3b.png"},
            ],
        },
    ]
    (out / "claims.json").write_text(json.dumps(claims, indent=1) + "\n")
    gold = {"1": "Refuted", "2": "Not Enough Evidence", "3": "Supported"}
    (out / "gold.json").write_text(json.dumps(gold, indent=1) + "\n")

    train = [
        {
            "claim_text": "Image shows a shark swimming on a flooded highway.",
            "label": "Refuted",
            "qa_pairs": [
                {"question": "Was the shark image altered?", "answer": "Yes, it is a composite from 2011.", "answer_type": "Extractive"},
                {"question": "Does the photo show the named storm?", "answer": "No", "answer_type": "Boolean"},
            ],
        },
        {
            "claim_text": "Video shows cars swept away by a flood in a Spanish city.",
            "label": "Supported",
            "qa_pairs": [
                {"question": "Where was the video filmed?", "answer": "In Valencia, Spain.", "answer_type": "Extractive"},
            ],
        },
        {
            "claim_text": "Council announces parking ban during the rain season.",
            "label": "Not Enough Evidence",
            "qa_pairs": [
                {"question": "Did the council publish such a ban?", "answer": "No record of it was found.", "answer_type": "Abstractive"},
            ],
        },
        {
            "claim_text": "Picture shows a collapsed bridge after the river flooded.",
            "label": "Conflicting Evidence/Cherrypicking",
            "qa_pairs": [
                {"question": "Which bridge is shown?", "answer": "Unclear from the sources.", "answer_type": "Unanswerable"},
            ],
        },
    ]
    (out / "train.json").write_text(json.dumps(train, indent=1) + "\n")

    stores = {
        "1": [("https://news.example/valencia/{}".format(i), prose(rng, 5000, "valencia")) for i in range(3)],
        "2": [("https://council.example/notice/{}".format(i), prose(rng, 3000, "parking")) for i in range(2)],
        "3": [("https://river.example/report/{}".format(i), prose(rng, 2500, "bridge")) for i in range(2)],
    }
    for cid, docs in stores.items():
        lines = [json.dumps({"url": u, "url2text": [t]}) for u, t in docs]
        (out / "knowledge_store" / f"{cid}.jsonl").write_text("\n".join(lines) + "\n")

    ris = {
        "https://img.example/claims/1.png": hits("valencia", 15),
        "https://img.example/claims/3a.png": [],
        "https://img.example/claims/3b.png": hits("bridge", 12),
    }
    scrape, thumbs = {}, {}
    for i, h in enumerate(ris["https://img.example/claims/1.png"], start=1):
        body = f"Report {i}: cars piled up in a Valencia street, picture taken in 2019 during another storm."
        scrape[h["link"]] = {"markdown": f"# {h['title']}\n\n{body}", "raw_html": page_html(h["title"], body, f"2019-09-{i:02d}")}
        thumbs[h["thumbnail"]] = base64.b64encode(bytes([0xFF, 0xD8, 0xFF, i])).decode()
    for i, h in enumerate(ris["https://img.example/claims/3b.png"], start=1):
        body = f"Bridge report {i}: the river rose over the old stone bridge."
        if i == 2:
            scrape[h["link"]] = {"markdown": "", "raw_html": ""}  # scraping-protected post
            continue
        date = {5: "2024-07-01", 7: None}.get(i, f"2024-05-{i:02d}")
        scrape[h["link"]] = {"markdown": f"# {h['title']}\n\n{body}", "raw_html": page_html(h["title"], body, date)}
        thumbs[h["thumbnail"]] = base64.b64encode(bytes([0x89, 0x50, i])).decode()

    llm = {
        "1": {
            "text": llm_answer(
                [
                    ("When was this photo first published?", "A news gallery ran it in September 2019. [IMG_1]", 11, "Extractive"),
                    ("Does any report tie the photo to the October 2024 floods?", "No", 2, "Boolean"),
                    ("What event does the photo show?", "A 2019 storm in Valencia.", 14, "Abstractive"),
                    ("Were cars piled up in Valencia in 2024?", "Yes, but in other photographs.", 1, "Extractive"),
                ],
                "Refuted",
                "The image predates the 2024 floods and shows a 2019 storm.",
                likert=(1, 5, 2, 2),
            ),
            "input_tokens": 11000,
            "output_tokens": 1150,
        },
        "2": [
            {"text": "I am unable to produce JSON for this request.", "input_tokens": 9000, "output_tokens": 12},
            {
                "text": llm_answer(
                    [("Did the council publish a parking ban?", "No notice mentions a season-long ban.", 1, "Abstractive")],
                    "Not Enough Evidence",
                    "No source confirms or denies the ban.",
                    likert=(2, 2, 4, 1),
                ),
                "input_tokens": 9000,
                "output_tokens": 700,
            },
        ],
        "3": {
            "text": llm_answer(
                [
                    ("Is the bridge in both pictures the same?", "Yes, the old stone bridge.", 21, "Extractive"),
                    ("Did the river burst its banks in May 2024?", "Yes", 1, "Boolean"),
                    ("Who published the first picture?", "A local river report.", 23, "Extractive"),
                ],
                "supported claim",
                "Reports from May 2024 show the same bridge flooded.",
                likert=(4, 1, 2, 2),
            ),
            "input_tokens": 10500,
            "output_tokens": 980,
        },
    }

    for name, data in (("ris", ris), ("scrape", scrape), ("thumbs", thumbs), ("llm", llm)):
        (out / "replay" / f"{name}.json").write_text(json.dumps(data, indent=1, sort_keys=True) + "\n")

    (out / "config.yaml").write_text(
        "# offline configuration: every provider is served from replay/\n"
        "claims: claims.json\n"
        "train_set: train.json\n"
        "knowledge_store_dir: knowledge_store\n"
        "store_dir: stores\n"
        "replay: replay\n"
        "parallel: 2\n"
        "retry_base_delay: 0\n"
        "embedder:\n"
        "  kind: hashing\n"
        "  dim: 256\n"
        "prices:\n"
        "  ris_per_search_usd: 0.003\n"
        "  scrape_per_page_usd: 0.006\n"
        "  llm_input_per_token_usd: 0.00000125\n"
        "  llm_output_per_token_usd: 0.00001\n"
        "  llm_discount: 0.5\n"
    )


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("out", type=Path, nargs="?", default=Path("tests/fixtures/replay3"))
    args = ap.parse_args()
    build(args.out)
    print(f"fixture written to {args.out}")


if __name__ == "__main__":
    main()
