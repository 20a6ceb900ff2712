"""The fixed inputs behind tests/fixtures/golden/system_prompt.txt."""

import datetime as dt

import numpy as np

from factrag.claims import Claim, ClaimImage
from factrag.fewshot import TrainExample
from factrag.image_retrieval import ImageSource, ImageSourceSet, RISResult
from factrag.knowledge_store import Chunk, EmbeddedChunk
from factrag.text_retrieval import ScoredChunk

PNG = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010806000000"
    "1f15c4890000000d49444154789c6360f8cfc0f01f0005000201e221bc33"
    "0000000049454e44ae426082"
)

CLAIM = Claim(
    claim_id="golden-1",
    text="This photo shows cars piled up in a street in Valencia after the October 2024 floods.",
    date=dt.date(2024, 11, 2),
    author="John Smith",
    medium="X (formerly Twitter)",
    images=(ClaimImage(PNG, "image/png", "https://img.example/golden.png"),),
)


def _sc(url, idx, text, before="", after=""):
    return ScoredChunk(EmbeddedChunk(Chunk(url, idx, text, before, after), np.zeros(2, np.float32)), 0.0, idx)


TEXT_SOURCES = [
    _sc(
        "https://news.example/valencia-floods",
        1,
        "Dozens of cars were swept into piles on Avenida del Sur after the flash flood.",
        "...the storm reached the city on 29 October.",
        "Residents began clearing the street on Thursday...",
    ),
    _sc("https://factcheck.example/archive/123", 0, "The same image circulated in 2019 with a caption about Murcia."),
]

IMAGE_SETS = [
    ImageSourceSet(
        1,
        (
            ImageSource(
                RISResult(
                    "https://photos.example/gallery/77",
                    "https://thumb.example/77.jpg",
                    "Cars piled after flood",
                    1,
                    "https://photos.example/img/77.jpg",
                ),
                "# Cars piled after flood\n\nPhoto taken in Valencia, 30 October 2024.",
                dt.date(2024, 10, 30),
                1,
            ),
        ),
    )
]

FEWSHOT = [
    TrainExample(
        "Image shows a shark swimming on a flooded highway.",
        "Refuted",
        (
            ("Was the shark image digitally altered?", "Yes, it is a composite made in 2011.", "Extractive"),
            ("Is the image from the flood named in the claim?", "No", "Boolean"),
        ),
    )
]
