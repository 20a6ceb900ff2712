from __future__ import annotations

import time
from typing import Callable, TypeVar

from factrag.errors import ProviderError

T = TypeVar("T")


def with_retries(fn: Callable[[], T], attempts: int = 3, base_delay: float = 0.5) -> T:
    """Call ``fn``, backing off exponentially on retryable ProviderErrors."""
    for i in range(attempts):
        try:
            return fn()
        except ProviderError as exc:
            if not exc.retryable or i == attempts - 1:
                raise
            if base_delay > 0:
                time.sleep(base_delay * 2**i)
    raise AssertionError("unreachable")
