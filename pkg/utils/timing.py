"""
Wall-clock accounting per phase (sampling, scoring per level, CE update, final IS).
"""

import time
from contextlib import contextmanager
from typing import Dict, Iterator


class PhaseTimer:
    """Accumulates elapsed seconds under phase names."""

    def __init__(self):
        self.totals: Dict[str, float] = {}

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.totals[name] = self.totals.get(name, 0.0) + time.perf_counter() - start

    def total(self) -> float:
        return sum(self.totals.values())

    def as_dict(self) -> Dict[str, float]:
        return dict(sorted(self.totals.items()))
