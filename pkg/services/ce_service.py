"""
Cross-entropy engines.

- run_standard_ce: CE with the high-fidelity score and (rho, m) adaptation
- run_preconditioned_ce: one standard CE run per level, each initialized with
  the previous level's output; surrogate levels never grow the sample
- run_multifidelity_ce: CE over relaxed event sets with per-iteration
  selection of the score approximation level

All three share one iteration driver, so a single-level hierarchy gives the
same trace whichever engine runs it.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from core.errors import (
    DegenerateUpdateError,
    InvalidParameterError,
    IterationLimitError,
    LevelExhaustedError,
    MfceError,
)
from core.hierarchy import LevelView, ScoreHierarchy
from core.rng import PURPOSE_GROW, PURPOSE_SAMPLE, RandomStream, derive_substream
from core.types import SampleBatch
from services.family_service import log_likelihood_ratios
from services.quantile_service import empirical_quantile
from services.selection_service import alpha_hat, relaxed_threshold, select_level
from utils.timing import PhaseTimer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CEConfig:
    """
    Engine parameters.

    seed and stream_prefix identify the random substreams of a run; the
    experiment runner puts the repetition index in stream_prefix.
    """

    gamma_star: float
    m: int = 2000
    rho: float = 0.2
    delta: float = 1e-2
    beta: float = 1.25
    floor: float = 5e-5
    m_max: int = 1_000_000
    alpha_substitution: bool = False
    inherit_m: bool = False
    max_iterations: int = 10_000
    keep_batches: bool = False
    seed: int = 0
    stream_prefix: Tuple[int, ...] = ()

    def __post_init__(self):
        if not 0.0 < self.rho < 1.0:
            raise InvalidParameterError(f"rho must lie in (0, 1), got {self.rho}")
        if self.delta <= 0:
            raise InvalidParameterError(f"delta must be positive, got {self.delta}")
        if self.beta <= 1.0:
            raise InvalidParameterError(f"beta must exceed 1, got {self.beta}")
        if self.m < 1:
            raise InvalidParameterError(f"m must be >= 1, got {self.m}")
        if self.m_max < self.m:
            raise InvalidParameterError(f"m_max ({self.m_max}) is below m ({self.m})")
        if self.floor <= 0:
            raise InvalidParameterError(f"floor must be positive, got {self.floor}")


@dataclass(frozen=True, eq=False)
class IterationRecord:
    """Quantile, bound and sample size accepted at iteration j of a stage."""

    stage: int
    j: int
    level: int
    label: str
    rho: float
    m: int
    gamma: float
    alpha: float
    batch: Optional[SampleBatch] = None

    def key(self) -> Tuple:
        return (self.stage, self.j, self.level, self.label, self.rho, self.m, self.gamma, self.alpha)


@dataclass(eq=False)
class CEState:
    """Running state and full trace of an engine run."""

    nu: Any
    rho: float
    m: int
    level: int
    j: int = 0
    J: Optional[int] = None
    records: List[IterationRecord] = field(default_factory=list)
    evaluations: Dict[str, int] = field(default_factory=dict)
    iterations: Dict[str, int] = field(default_factory=dict)
    skipped_levels: List[str] = field(default_factory=list)

    @property
    def gamma_history(self) -> List[float]:
        return [r.gamma for r in self.records]

    @property
    def alpha_history(self) -> List[float]:
        return [r.alpha for r in self.records]

    def add_evaluations(self, label: str, n: int) -> None:
        self.evaluations[label] = self.evaluations.get(label, 0) + int(n)

    def add_iteration(self, label: str) -> None:
        self.iterations[label] = self.iterations.get(label, 0) + 1

    def trace_key(self) -> List[Tuple]:
        """Hashable view of the trace, for reproducibility comparisons."""
        return [r.key() for r in self.records]

    def stage_records(self, stage: int) -> List[IterationRecord]:
        return [r for r in self.records if r.stage == stage]


@dataclass(eq=False)
class CEResult:
    """Final proposal nu_J with the trace and the batch that defined it."""

    nu: Any
    state: CEState
    final_batch: SampleBatch
    timer: PhaseTimer
    hierarchy: ScoreHierarchy
    screen: bool


def ce_weights(log_weights: np.ndarray, indicator: np.ndarray) -> np.ndarray:
    """
    CE weights 1_A(z_i) mu(z_i)/nu(z_i), rescaled by a common factor.

    The update is invariant to a common rescaling, so weights are shifted by
    the largest selected log-weight to stay finite.

    Raises:
        DegenerateUpdateError: no selected point carries a positive weight
    """
    sel = np.asarray(indicator, dtype=bool) & np.isfinite(log_weights)
    if not np.any(sel):
        raise DegenerateUpdateError("no sample falls in the current event set")
    weights = np.zeros(log_weights.shape[0])
    weights[sel] = np.exp(log_weights[sel] - np.max(log_weights[sel]))
    return weights


def screen_membership(
    scores: np.ndarray,
    bounds: np.ndarray,
    c: float,
    gamma_star: float,
    points: np.ndarray,
    hifi: Callable[[np.ndarray], np.ndarray],
) -> Tuple[np.ndarray, int]:
    """
    Certified membership in A = {phi >= gamma*} from surrogate scores.

    phi^(k) >= gamma* + c eps  -> member
    phi^(k) <  gamma* - c eps  -> non-member
    otherwise phi is evaluated through `hifi`.

    Returns:
        (indicator, number of high-fidelity evaluations)
    """
    margin = c * bounds
    member = scores >= gamma_star + margin
    outside = scores < gamma_star - margin
    band = ~member & ~outside
    n_band = int(np.sum(band))
    if n_band:
        member = member.copy()
        member[band] = hifi(points[band]) >= gamma_star
    return member, n_band


class _CERun:
    """One CE loop over a hierarchy, from an initial proposal to nu_J."""

    def __init__(
        self,
        config: CEConfig,
        family,
        hierarchy: ScoreHierarchy,
        mu,
        nu0,
        m0: int,
        stage: int,
        state: CEState,
        timer: PhaseTimer,
        allow_growth: bool = True,
    ):
        self.config = config
        self.family = family
        self.hierarchy = hierarchy
        self.mu = mu
        self.nu = nu0
        self.m0 = m0
        self.stage = stage
        self.state = state
        self.timer = timer
        self.allow_growth = allow_growth
        self.top = hierarchy.top_level

    def _stream(self, j: int, purpose: int, block: int = 0) -> RandomStream:
        path = tuple(self.config.stream_prefix) + (self.stage, j, purpose, block)
        return derive_substream(self.config.seed, path)

    def score(self, points: np.ndarray, level: int) -> Tuple[np.ndarray, np.ndarray]:
        label = self.hierarchy.label(level)
        with self.timer.phase(f"scoring_{label}"):
            scores, bounds = self.hierarchy.evaluate_batch(points, level)
        self.state.add_evaluations(label, points.shape[0])
        if level == self.top:
            bounds = np.zeros_like(scores)
        return np.asarray(scores, dtype=np.float64), np.asarray(bounds, dtype=np.float64)

    def draw(self, m: int, level: int, stream: RandomStream) -> SampleBatch:
        with self.timer.phase("sampling"):
            points = self.family.sample(self.nu, stream, m)
            log_w = log_likelihood_ratios(self.mu, self.nu, points)
        scores, bounds = self.score(points, level)
        return SampleBatch(
            points=points, scores=scores, level=level, bounds=bounds, log_weights=log_w, top_level=self.top
        )

    def rescore(self, batch: SampleBatch, level: int) -> SampleBatch:
        scores, bounds = self.score(batch.points, level)
        return batch.rescored(scores, bounds, level)

    def update(self, batch: SampleBatch, indicator: np.ndarray):
        with self.timer.phase("ce_update"):
            nu = self.family.update(batch.points, ce_weights(batch.log_weights, indicator))
        self.state.add_iteration(self.hierarchy.label(batch.level))
        return nu

    def membership(self, batch: SampleBatch) -> np.ndarray:
        gamma_star = self.config.gamma_star
        if batch.level == self.top:
            return batch.scores >= gamma_star
        indicator, n_band = screen_membership(
            batch.scores,
            batch.bounds,
            self.hierarchy.c,
            gamma_star,
            batch.points,
            lambda pts: self.score(pts, self.top)[0],
        )
        logger.debug("final screening: %d of %d points needed the high-fidelity score", n_band, batch.m)
        return indicator

    def _grower(self, j: int) -> Callable[[int, int], SampleBatch]:
        blocks = iter(range(1 << 30))

        def draw_more(n: int, level: int) -> SampleBatch:
            return self.draw(n, level, self._stream(j, PURPOSE_GROW, next(blocks)))

        return draw_more

    def _record(self, j: int, batch: SampleBatch, rho: float, gamma: float, alpha: float) -> None:
        label = self.hierarchy.label(batch.level)
        record = IterationRecord(
            stage=self.stage,
            j=j,
            level=batch.level,
            label=label,
            rho=rho,
            m=batch.m,
            gamma=gamma,
            alpha=alpha,
            batch=batch if self.config.keep_batches else None,
        )
        self.state.records.append(record)
        self.state.j = j
        self.state.nu = self.nu
        self.state.rho = rho
        self.state.m = batch.m
        self.state.level = batch.level
        logger.info(
            "[stage %d] j=%d level=%s rho=%.4f m=%d gamma=%.6g alpha=%.4g",
            self.stage, j, label, rho, batch.m, gamma, alpha,
        )

    def run(self) -> Tuple[Any, SampleBatch]:
        cfg = self.config
        c = self.hierarchy.c

        j = 0
        batch = self.draw(self.m0, 1, self._stream(j, PURPOSE_SAMPLE))
        rho = cfg.rho
        gamma = empirical_quantile(batch.scores, rho)
        alpha = alpha_hat(batch, c)
        self._record(j, batch, rho, gamma, alpha)

        while gamma < cfg.gamma_star + alpha:
            if j >= cfg.max_iterations:
                raise IterationLimitError(f"CE loop exceeded {cfg.max_iterations} iterations")
            threshold = relaxed_threshold(gamma, alpha, cfg.gamma_star)
            self.nu = self.update(batch, batch.scores >= threshold)
            j += 1

            prev_gamma, prev_alpha, prev_rho = gamma, alpha, rho
            batch = self.draw(batch.m, batch.level, self._stream(j, PURPOSE_SAMPLE))

            def gamma_bar_for(a: float, pg: float = prev_gamma, pa: float = prev_alpha) -> float:
                step = a if cfg.alpha_substitution else pa
                return min(cfg.gamma_star + a, pg + 2.0 * step + cfg.delta)

            _, rho, batch = select_level(
                batch,
                rho,
                prev_rho,
                prev_alpha,
                gamma_bar_for,
                self.hierarchy,
                self.rescore,
                self._grower(j),
                cfg.beta,
                cfg.m_max,
                allow_growth=self.allow_growth,
            )
            gamma = empirical_quantile(batch.scores, rho)
            alpha = alpha_hat(batch, c)
            self._record(j, batch, rho, gamma, alpha)

        self.nu = self.update(batch, self.membership(batch))
        self.state.nu = self.nu
        self.state.J = j + 1
        return self.nu, batch


def _run_single(config: CEConfig, family, hierarchy: ScoreHierarchy, mu, nu0, screen: bool) -> CEResult:
    nu0 = mu if nu0 is None else nu0
    state = CEState(nu=nu0, rho=config.rho, m=config.m, level=1)
    timer = PhaseTimer()
    run = _CERun(config, family, hierarchy, mu, nu0, config.m, stage=0, state=state, timer=timer)
    try:
        nu, batch = run.run()
    except MfceError as e:
        e.state = state
        raise
    return CEResult(nu=nu, state=state, final_batch=batch, timer=timer, hierarchy=hierarchy, screen=screen)


def run_standard_ce(config: CEConfig, family, score_model: ScoreHierarchy, mu, nu0=None) -> CEResult:
    """
    Standard CE with the high-fidelity score (top level of `score_model`).

    Args:
        config: engine parameters
        family: proposal family (GaussianFamily or CategoricalFamily)
        score_model: hierarchy whose top level is phi
        mu: input law parameters, in the family
        nu0: initial proposal, defaults to mu

    Returns:
        CEResult with nu_J and the trace
    """
    hifi = LevelView(score_model, score_model.top_level)
    return _run_single(config, family, hifi, mu, nu0, screen=False)


def run_multifidelity_ce(config: CEConfig, family, hierarchy: ScoreHierarchy, mu, nu0=None) -> CEResult:
    """
    CE with score approximation selection over relaxed event sets.

    Starts at level 1; every iteration keeps the current level or refines it
    so that the surrogate quantile rises by at least delta + 2 alpha and the
    worst-case bound alpha never increases. The final update decides
    membership in A by certified screening.
    """
    return _run_single(config, family, hierarchy, mu, nu0, screen=True)


def run_preconditioned_ce(config: CEConfig, family, hierarchy: ScoreHierarchy, mu, nu0=None) -> CEResult:
    """
    Pre-conditioned CE: a standard CE run per level, chained.

    Level k starts from the level k-1 output. At surrogate levels a quantile
    target that would need sample growth ends the level instead, and the
    next level starts from the latest proposal.
    """
    nu = mu if nu0 is None else nu0
    state = CEState(nu=nu, rho=config.rho, m=config.m, level=1)
    timer = PhaseTimer()
    top = hierarchy.top_level
    m0 = config.m
    batch = None

    for k in range(1, top + 1):
        view = LevelView(hierarchy, k)
        run = _CERun(config, family, view, mu, nu, m0, stage=top - k, state=state, timer=timer, allow_growth=k == top)
        try:
            nu, batch = run.run()
        except LevelExhaustedError as e:
            nu = run.nu
            state.skipped_levels.append(view.label(1))
            logger.info("level %s ends early: %s", view.label(1), e)
            continue
        except MfceError as e:
            e.state = state
            raise
        if config.inherit_m:
            m0 = batch.m

    return CEResult(
        nu=nu, state=state, final_batch=batch, timer=timer, hierarchy=LevelView(hierarchy, top), screen=False
    )


# ---------------------------------------------------------------------------
# Trace audits
# ---------------------------------------------------------------------------


def rescored_quantiles(state: CEState, hierarchy: ScoreHierarchy, stage: int = 0) -> List[float]:
    """
    High-fidelity quantile of every stored batch of a stage, at the accepted rho.

    Requires a run with keep_batches=True.
    """
    out = []
    for r in state.stage_records(stage):
        if r.batch is None:
            raise InvalidParameterError("trace has no stored batches; run with keep_batches=True")
        scores, _ = hierarchy.evaluate_batch(r.batch.points, hierarchy.top_level)
        out.append(empirical_quantile(scores, r.rho))
    return out


def nesting_violations(quantiles: List[float], gamma_star: float, delta: float, tol: float = 1e-9) -> int:
    """Count iterations with gamma_j < min(gamma*, gamma_{j-1} + delta)."""
    return sum(
        1
        for prev, cur in zip(quantiles, quantiles[1:])
        if cur < min(gamma_star, prev + delta) - tol
    )


def inclusion_violations(state: CEState, hierarchy: ScoreHierarchy, gamma_star: float, stage: int = 0) -> int:
    """
    Count points accepted by the unrelaxed high-fidelity test
    phi(z) >= min(gamma_j(phi), gamma*) but rejected by the relaxed surrogate
    test, over every iteration that was followed by a CE update.
    """
    violations = 0
    for r in state.stage_records(stage):
        if r.batch is None:
            raise InvalidParameterError("trace has no stored batches; run with keep_batches=True")
        if r.gamma >= gamma_star + r.alpha:
            continue
        hifi, _ = hierarchy.evaluate_batch(r.batch.points, hierarchy.top_level)
        exact = hifi >= min(empirical_quantile(hifi, r.rho), gamma_star)
        relaxed = r.batch.scores >= relaxed_threshold(r.gamma, r.alpha, gamma_star)
        violations += int(np.sum(exact & ~relaxed))
    return violations
