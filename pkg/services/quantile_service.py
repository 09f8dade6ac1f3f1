"""
Empirical quantiles and the joint adaptation of the quantile parameter rho
and the sample size m.
"""

import logging
import math
from typing import Callable, Optional, Tuple

import numpy as np

from core.errors import BudgetExhaustedError, InvalidParameterError, LevelExhaustedError
from core.types import SampleBatch

logger = logging.getLogger(__name__)

# slack on (1 - rho) * m so that grid values i/m are not lost to round-off
_GRID_EPS = 1e-9


def _check_scores(scores) -> np.ndarray:
    arr = np.asarray(scores, dtype=np.float64).reshape(-1)
    if arr.shape[0] < 1:
        raise InvalidParameterError("quantile of an empty score set")
    return arr


def quantile_of_sorted(sorted_scores: np.ndarray, rho: float) -> float:
    """
    Empirical (1-rho)-quantile of already sorted scores, for rho in [0, 1].

    max{s : #{i: s_i < s}/m <= 1 - rho}; the supremum is always attained at
    a sample value.
    """
    m = sorted_scores.shape[0]
    count_less = np.searchsorted(sorted_scores, sorted_scores, side="left")
    limit = (1.0 - rho) * m + _GRID_EPS
    idx = int(np.searchsorted(count_less, limit, side="right")) - 1
    return float(sorted_scores[max(idx, 0)])


def empirical_quantile(scores, rho: float) -> float:
    """
    Empirical (1-rho)-quantile, ties counted with strict less-than.

    Args:
        scores: m >= 1 real scores
        rho: quantile parameter in (0, 1)

    Returns:
        A member of the score multiset; nonincreasing in rho
    """
    if not 0.0 < rho < 1.0:
        raise InvalidParameterError(f"rho must lie in (0, 1), got {rho}")
    arr = _check_scores(scores)
    return quantile_of_sorted(np.sort(arr), rho)


def largest_feasible_rho(scores, gamma_bar: float) -> Optional[float]:
    """
    Largest rho on the grid {1/m, ..., (m-1)/m} whose quantile reaches gamma_bar.

    quantile(i/m) >= gamma_bar holds exactly when at least i scores are
    >= gamma_bar, so the answer is min(n_ge, m-1)/m.

    Returns:
        rho, or None when no grid point qualifies
    """
    arr = _check_scores(scores)
    m = arr.shape[0]
    n_ge = int(np.sum(arr >= gamma_bar))
    if n_ge == 0 or m < 2:
        return None
    return min(n_ge, m - 1) / m


def adapt_rho_m(
    batch: SampleBatch,
    rho: float,
    gamma_bar: float,
    beta: float,
    draw_more: Callable[[int], SampleBatch],
    m_max: int,
    allow_growth: bool = True,
) -> Tuple[float, SampleBatch]:
    """
    Adapt rho and grow the sample until quantile(scores, rho) >= gamma_bar.

    Args:
        batch: current samples scored with the model in use
        rho: starting quantile parameter (rho_{j-1})
        gamma_bar: target quantile
        beta: growth factor > 1
        draw_more: draw_more(n) returns n extra samples from the current
            proposal, scored at batch.level
        m_max: sample cap
        allow_growth: when False, a missing feasible rho raises LevelExhaustedError

    Returns:
        (rho, batch) with the quantile condition satisfied

    Raises:
        BudgetExhaustedError: the grown sample would exceed m_max
    """
    if beta <= 1.0:
        raise InvalidParameterError(f"growth factor beta must exceed 1, got {beta}")

    while True:
        if empirical_quantile(batch.scores, rho) >= gamma_bar:
            return rho, batch

        feasible = largest_feasible_rho(batch.scores, gamma_bar)
        if feasible is not None:
            return feasible, batch

        gap = gamma_bar - float(np.max(batch.scores))
        if not allow_growth:
            raise LevelExhaustedError(
                f"quantile target {gamma_bar:.6g} unreachable at level {batch.level} (gap {gap:.3g})",
                gap=gap,
                m=batch.m,
            )
        new_m = math.ceil(beta * batch.m)
        if new_m > m_max:
            raise BudgetExhaustedError(
                f"sample size {new_m} would exceed cap {m_max}; quantile gap {gap:.6g}",
                gap=gap,
                m=batch.m,
            )
        logger.debug("growing sample %d -> %d (gap %.4g)", batch.m, new_m, gap)
        batch = batch.extend(draw_more(new_m - batch.m))
