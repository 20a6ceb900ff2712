import datetime as dt
import os
from pathlib import Path

import hypothesis
import numpy as np
import pytest

from factrag.claims import Claim, ClaimImage

hypothesis.settings.register_profile("ci", max_examples=100, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=10, deadline=None)
hypothesis.settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))

FIXTURES = Path(__file__).parent / "fixtures"

PNG_1x1 = bytes.fromhex(
    "89504e470d0a1a0a0000000d4948445200000001000000010806000000"
    "1f15c4890000000d49444154789c6360f8cfc0f01f0005000201e221bc33"
    "0000000049454e44ae426082"
)


class StubEmbedder:
    """Returns canned vectors by text, else a fixed fallback."""

    def __init__(self, table=None, fallback=(1.0, 0.0)):
        self.table = table or {}
        self.fallback = fallback
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        return [np.asarray(self.table.get(t, self.fallback), dtype=np.float32) for t in texts]


@pytest.fixture
def fixtures_dir():
    return FIXTURES


@pytest.fixture
def claim():
    return Claim(
        claim_id="c1",
        text="Photo shows flooded streets in Valencia after the storm.",
        date=dt.date(2024, 11, 1),
        author="Jane Doe",
        medium="Facebook",
        images=(ClaimImage(PNG_1x1, "image/png", "https://img.example/c1.png"),),
    )


@pytest.fixture
def replay3(tmp_path):
    """A writable copy of the three-claim replay fixture."""
    import shutil

    dest = tmp_path / "replay3"
    shutil.copytree(FIXTURES / "replay3", dest)
    return dest


# criterion number -> (title, passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {title}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
