"""
Relaxed-set machinery and surrogate level selection for the
score-approximation-selecting CE engine.
"""

import logging
import math
from typing import Callable, Tuple

import numpy as np

from core.errors import InvalidParameterError
from core.hierarchy import ScoreHierarchy
from core.types import SampleBatch
from services.quantile_service import adapt_rho_m, empirical_quantile, quantile_of_sorted

logger = logging.getLogger(__name__)


def alpha_hat(batch: SampleBatch, c: float) -> float:
    """Worst-case score error c * max_i eps_k(z_i) over the batch (0 at the top level)."""
    if batch.level == batch.top_level:
        return 0.0
    return float(c * np.max(batch.bounds))


def relaxed_threshold(gamma_k: float, alpha: float, gamma_star: float) -> float:
    """
    Threshold of the relaxed event set: phi^(k)(x) >= min(gamma_k - 2 alpha, gamma* + alpha).

    With alpha = 0 this is the unrelaxed threshold min(gamma_k, gamma*).
    """
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be non-negative, got {alpha}")
    return min(gamma_k - 2.0 * alpha, gamma_star + alpha)


def varpi(surrogate_scores, alpha: float, gamma_bar: float) -> float:
    """
    Plug-in level-selection criterion rho_low - eta_bar.

    rho_low  = #{s_i >= gamma_bar + alpha} / m
    rho_high = #{s_i >= gamma_bar - alpha} / m
    eta_bar  = max over g in [gamma_b, gamma_u] of #{s_i in [g, g + alpha]} / m
    with gamma_b, gamma_u the quantiles at rho_high, rho_low. The maximum is
    searched over the breakpoints {s_i} and {s_i - alpha} inside the interval
    plus both endpoints.

    Returns:
        rho_low - eta_bar; a non-positive value (or -inf when rho_high = 0)
        means the level cannot certify the quantile increase
    """
    if alpha < 0:
        raise InvalidParameterError(f"alpha must be non-negative, got {alpha}")
    s = np.sort(np.asarray(surrogate_scores, dtype=np.float64).reshape(-1))
    m = s.shape[0]
    if m < 1:
        raise InvalidParameterError("varpi of an empty score set")

    n_low = m - int(np.searchsorted(s, gamma_bar + alpha, side="left"))
    n_high = m - int(np.searchsorted(s, gamma_bar - alpha, side="left"))
    if n_high == 0:
        return -math.inf
    if n_low == 0:
        return 0.0

    rho_low = n_low / m
    rho_high = n_high / m
    gamma_b = quantile_of_sorted(s, rho_high)
    gamma_u = quantile_of_sorted(s, rho_low)

    candidates = np.concatenate([s, s - alpha, [gamma_b, gamma_u]])
    candidates = candidates[(candidates >= gamma_b) & (candidates <= gamma_u)]
    upper = candidates + alpha
    upper = upper + 1e-12 * np.maximum(1.0, np.abs(upper))
    counts = np.searchsorted(s, upper, side="right") - np.searchsorted(s, candidates, side="left")
    eta_bar = int(np.max(counts)) / m
    return rho_low - eta_bar


def jmax_bound(gamma_star: float, gamma0: float, alpha0: float, delta: float) -> int:
    """
    Worst-case number of CE iterations J.

    ceil((gamma* - gamma0 - alpha0)/delta) + 1 for a surrogate start
    (alpha0 > 0), ceil((gamma* - gamma0)/delta) + 1 otherwise; at least 1.
    """
    if delta <= 0:
        raise InvalidParameterError(f"delta must be positive, got {delta}")
    span = gamma_star - gamma0 - (alpha0 if alpha0 > 0 else 0.0)
    steps = math.ceil(span / delta - 1e-9)
    return max(1, steps + 1)


def select_level(
    batch: SampleBatch,
    rho: float,
    prev_rho: float,
    prev_alpha: float,
    gamma_bar_for: Callable[[float], float],
    hierarchy: ScoreHierarchy,
    rescore: Callable[[SampleBatch, int], SampleBatch],
    draw_more: Callable[[int, int], SampleBatch],
    beta: float,
    m_max: int,
    allow_growth: bool = True,
) -> Tuple[int, float, SampleBatch]:
    """
    Adapt (rho, m) and select the score level until both
    quantile(scores, rho) >= gamma_bar(alpha) and alpha <= prev_alpha hold.

    Args:
        batch: samples of the current iteration scored at the previous level
        rho: starting quantile parameter
        prev_rho: rho_{j-1}, restored whenever the level is refined
        prev_alpha: alpha of the previous iteration
        gamma_bar_for: maps the current alpha to the target quantile
        hierarchy: score hierarchy
        rescore: rescore(batch, k) re-evaluates the batch points at level k
        draw_more: draw_more(n, k) draws n extra samples scored at level k
        beta: sample growth factor
        m_max: sample cap
        allow_growth: forwarded to adapt_rho_m at the top level

    Returns:
        (level, rho, batch); the level never decreases

    Raises:
        BudgetExhaustedError: propagated from adapt_rho_m
    """
    top = hierarchy.top_level
    while True:
        k = batch.level
        alpha = alpha_hat(batch, hierarchy.c)
        gamma_bar = gamma_bar_for(alpha)
        error_ok = alpha <= prev_alpha
        if error_ok and empirical_quantile(batch.scores, rho) >= gamma_bar:
            return k, rho, batch

        if k == top:
            rho, batch = adapt_rho_m(
                batch, rho, gamma_bar, beta, lambda n: draw_more(n, top), m_max, allow_growth=allow_growth
            )
            continue

        if error_ok:
            criterion = varpi(batch.scores, alpha, gamma_bar)
            if criterion > 0:
                level = k
                rho, batch = adapt_rho_m(batch, rho, gamma_bar, beta, lambda n: draw_more(n, level), m_max)
                continue
            logger.debug("level %d rejected: varpi=%.4g (alpha=%.4g, gamma_bar=%.6g)", k, criterion, alpha, gamma_bar)
        else:
            logger.debug("level %d rejected: alpha %.4g exceeds previous %.4g", k, alpha, prev_alpha)

        batch = rescore(batch, k + 1)
        rho = prev_rho
