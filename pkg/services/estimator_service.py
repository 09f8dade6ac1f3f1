"""
Probability estimators and their variance diagnostics.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

from core.errors import InvalidParameterError
from core.hierarchy import HIFI_LABEL
from core.rng import PURPOSE_FINAL, derive_substream
from core.types import SampleBatch
from services.ce_service import CEConfig, CEResult, screen_membership
from services.family_service import log_likelihood_ratios

logger = logging.getLogger(__name__)


def mc_estimate(points, indicator) -> float:
    """Naive Monte-Carlo estimate (1/m) sum 1_A(x_i)."""
    ind = np.asarray(indicator, dtype=bool).reshape(-1)
    m = np.asarray(points).shape[0]
    if m < 1 or ind.shape[0] != m:
        raise InvalidParameterError("indicator must have one entry per point, m >= 1")
    return int(np.sum(ind)) / m


def is_estimate(batch: SampleBatch, indicator, nu, mu) -> float:
    """
    Importance-sampling estimate (1/m) sum 1_A(z_i) mu(z_i)/nu(z_i).

    Weights are recomputed from (mu, nu) in log space; the sum is compensated.
    """
    ind = np.asarray(indicator, dtype=bool).reshape(-1)
    if ind.shape[0] != batch.m:
        raise InvalidParameterError("indicator must have one entry per point")
    if not np.any(ind):
        return 0.0
    log_w = log_likelihood_ratios(mu, nu, batch.points[ind])
    return math.fsum(np.exp(log_w).tolist()) / batch.m


def empirical_scv(estimates: Sequence[float], p_ref: float) -> float:
    """Mean of (p_r - p_ref)^2 / p_ref^2 over repetitions."""
    est = np.asarray(estimates, dtype=np.float64)
    if p_ref <= 0:
        raise InvalidParameterError(f"p_ref must be positive, got {p_ref}")
    if est.shape[0] < 2:
        raise InvalidParameterError("empirical SCV needs at least two estimates")
    rel = (est - p_ref) / p_ref
    return math.fsum((rel * rel).tolist()) / est.shape[0]


def standard_error(estimates: Sequence[float]) -> float:
    """Normal-approximation standard error of the mean."""
    est = np.asarray(estimates, dtype=np.float64)
    if est.shape[0] < 2:
        return math.nan
    return float(np.std(est, ddof=1) / math.sqrt(est.shape[0]))


def theoretical_scv(m: int, p_a: float, p_rel_extra: float, p_nest_extra: float) -> float:
    """
    SCV of the IS estimator with the optimal proposal of a superset of A.

    (p_nest_extra + p_rel_extra) / (m p_A), where p_nest_extra is the mass of
    the intermediate event outside A and p_rel_extra the extra mass added by
    the surrogate relaxation.
    """
    if p_a <= 0:
        raise InvalidParameterError(f"p_A must be positive, got {p_a}")
    if p_rel_extra < 0 or p_nest_extra < 0:
        raise InvalidParameterError("extra masses must be non-negative")
    if m < 1:
        raise InvalidParameterError(f"m must be >= 1, got {m}")
    return (p_nest_extra + p_rel_extra) / (m * p_a)


# ---------------------------------------------------------------------------
# Final IS step
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FinalEstimate:
    p_hat: float
    m: int
    level: int
    hifi_calls: int


def final_is_estimate(result: CEResult, config: CEConfig, family, mu) -> FinalEstimate:
    """
    Draw m_{J-1} samples from nu_J and return the IS estimate of p_A.

    With result.screen set, membership is decided at the last selected level
    by certified screening and phi is evaluated only inside the band.
    """
    state = result.state
    hierarchy = result.hierarchy
    top = hierarchy.top_level
    m = state.records[-1].m
    level = result.final_batch.level if result.screen else top
    stream = derive_substream(config.seed, tuple(config.stream_prefix) + (0, state.J, PURPOSE_FINAL, 0))

    def scored(points, k):
        with result.timer.phase(f"scoring_{hierarchy.label(k)}"):
            scores, bounds = hierarchy.evaluate_batch(points, k)
        state.add_evaluations(hierarchy.label(k), points.shape[0])
        return scores, bounds

    with result.timer.phase("final_is"):
        points = family.sample(result.nu, stream, m)
        log_w = log_likelihood_ratios(mu, result.nu, points)
    scores, bounds = scored(points, level)
    if level == top:
        bounds = np.zeros_like(scores)
        indicator, hifi_calls = scores >= config.gamma_star, m
    else:
        indicator, hifi_calls = screen_membership(
            scores, bounds, hierarchy.c, config.gamma_star, points, lambda pts: scored(pts, top)[0]
        )
    batch = SampleBatch(points=points, scores=scores, level=level, bounds=bounds, log_weights=log_w, top_level=top)
    with result.timer.phase("final_is"):
        p_hat = is_estimate(batch, indicator, result.nu, mu)
    logger.info("final IS: p_hat=%.6g from m=%d at level %s", p_hat, m, hierarchy.label(level))
    return FinalEstimate(p_hat=p_hat, m=m, level=level, hifi_calls=hifi_calls)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


class TraceEntry(BaseModel):
    stage: int
    j: int
    level: str
    rho: float
    m: int
    gamma: float
    alpha: float


class EstimateReport(BaseModel):
    """Outcome of one repetition."""

    repetition: int
    seed: int
    p_hat: Optional[float] = None
    m_final: int
    J: Optional[int] = None
    per_level_evals: Dict[str, int] = Field(default_factory=dict)
    per_level_iterations: Dict[str, int] = Field(default_factory=dict)
    wall_clock_s: Dict[str, float] = Field(default_factory=dict)
    trace_summary: List[TraceEntry] = Field(default_factory=list)
    skipped_levels: List[str] = Field(default_factory=list)
    error: Optional[str] = None

    @property
    def hf_evals(self) -> int:
        return self.per_level_evals.get(HIFI_LABEL, 0)

    @property
    def total_wall_clock(self) -> float:
        return math.fsum(self.wall_clock_s.values())


def build_report(
    state,
    repetition: int,
    seed: int,
    final: Optional[FinalEstimate] = None,
    timings: Optional[Dict[str, float]] = None,
    error: Optional[str] = None,
) -> EstimateReport:
    """Flatten an engine state (complete or partial) into an EstimateReport."""
    trace = [
        TraceEntry(stage=r.stage, j=r.j, level=r.label, rho=r.rho, m=r.m, gamma=r.gamma, alpha=r.alpha)
        for r in state.records
    ]
    return EstimateReport(
        repetition=repetition,
        seed=seed,
        p_hat=final.p_hat if final is not None else None,
        m_final=final.m if final is not None else state.m,
        J=state.J,
        per_level_evals=dict(state.evaluations),
        per_level_iterations=dict(state.iterations),
        wall_clock_s=dict(timings or {}),
        trace_summary=trace,
        skipped_levels=list(state.skipped_levels),
        error=error,
    )
