"""Soft-failure counters.

Some conditions are recoverable but should never pass silently: an attention
row with no surviving mass, an all-zero FGM gradient, an idf table with no
weight. Code raises a flag by name; callers that care wrap the work in
``collect()`` and inspect the counts afterwards.
"""

from __future__ import annotations

import logging
import threading
from collections import Counter
from contextlib import contextmanager
from typing import Iterator

log = logging.getLogger(__name__)
_local = threading.local()


def flag(name: str, count: int = 1) -> None:
    log.debug("diagnostics flag %s (+%d)", name, count)
    for counter in getattr(_local, "stack", ()):
        counter[name] += count


@contextmanager
def collect() -> Iterator[Counter]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    counter: Counter = Counter()
    stack.append(counter)
    try:
        yield counter
    finally:
        stack.remove(counter)
