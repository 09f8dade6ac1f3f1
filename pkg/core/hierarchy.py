"""
Score hierarchy contract.

Levels are numbered 1..K+1; level K+1 is the high-fidelity score phi with a
zero bound, levels 1..K are surrogates phi^(k) with certified bounds eps_k
such that |phi(x) - phi^(k)(x)| <= c * eps_k(x).
"""

from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from core.errors import InvalidParameterError

HIFI_LABEL = "hifi"


class ScoreHierarchy(ABC):
    """
    Ordered score models of increasing cost and accuracy.

    Implementations must be pure functions of (x, k) so batches can be
    evaluated concurrently.
    """

    #: constant propagating the model error bound to the score error
    c: float = 1.0

    @property
    @abstractmethod
    def level_count(self) -> int:
        """Number of levels K+1."""

    @property
    @abstractmethod
    def cost_ranks(self) -> Tuple[int, ...]:
        """Strictly increasing cost rank d_k per level."""

    @abstractmethod
    def evaluate_batch(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """
        Scores and raw bounds of an (m, p) batch at level k.

        Returns:
            (scores, bounds) arrays of length m; bounds are zero at level K+1
        """

    @property
    def top_level(self) -> int:
        return self.level_count

    def evaluate(self, x, k: int) -> float:
        scores, _ = self.evaluate_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)), k)
        return float(scores[0])

    def bound(self, x, k: int) -> float:
        _, bounds = self.evaluate_batch(np.atleast_2d(np.asarray(x, dtype=np.float64)), k)
        return float(bounds[0])

    def label(self, k: int) -> str:
        """Level label used in counters and CSV columns (d_k, or 'hifi' for the top level)."""
        self.check_level(k)
        if k == self.top_level:
            return HIFI_LABEL
        return str(self.cost_ranks[k - 1])

    def labels(self) -> Tuple[str, ...]:
        return tuple(self.label(k) for k in range(1, self.level_count + 1))

    def check_level(self, k: int) -> None:
        if not 1 <= k <= self.level_count:
            raise InvalidParameterError(f"level {k} outside 1..{self.level_count}")


class LevelView(ScoreHierarchy):
    """
    One level of a hierarchy seen as a single-level (exact) hierarchy.

    Used to run the standard engine on phi^(k); labels keep pointing at the
    underlying level so evaluation counters stay comparable.
    """

    def __init__(self, base: ScoreHierarchy, level: int):
        base.check_level(level)
        self.base = base
        self.level = level
        self.c = base.c

    @property
    def level_count(self) -> int:
        return 1

    @property
    def cost_ranks(self) -> Tuple[int, ...]:
        return (self.base.cost_ranks[self.level - 1],)

    def evaluate_batch(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        self.check_level(k)
        scores, _ = self.base.evaluate_batch(points, self.level)
        return scores, np.zeros_like(scores)

    def label(self, k: int) -> str:
        self.check_level(k)
        return self.base.label(self.level)


def certified_bound_violations(hierarchy: ScoreHierarchy, points: np.ndarray, tol: float = 1e-12) -> int:
    """
    Count (point, level) pairs breaking |phi - phi^(k)| <= c * eps_k.

    Args:
        hierarchy: hierarchy under test
        points: (m, p) evaluation points
        tol: absolute slack for round-off

    Returns:
        Number of violations over all surrogate levels
    """
    top_scores, _ = hierarchy.evaluate_batch(points, hierarchy.top_level)
    violations = 0
    for k in range(1, hierarchy.top_level):
        scores, bounds = hierarchy.evaluate_batch(points, k)
        violations += int(np.sum(np.abs(top_scores - scores) > hierarchy.c * bounds + tol))
    return violations
