"""
Linear Gaussian benchmark with an exact tail probability.

phi(x) = w.x; surrogate level k adds the deterministic perturbation
alpha_k cos(u.x), so its certified bound is alpha_k with c = 1.
"""

from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.stats import norm

from core.errors import InvalidParameterError
from core.hierarchy import ScoreHierarchy
from core.types import as_point, as_points
from services.family_service import GaussianParams


@dataclass(frozen=True, eq=False)
class LinearGaussianProblem:
    w: np.ndarray
    mu_params: GaussianParams
    gamma_star: float
    alphas: Tuple[float, ...] = ()
    u: Optional[np.ndarray] = None

    def __post_init__(self):
        w = as_point(self.w)
        if np.linalg.norm(w) == 0:
            raise InvalidParameterError("direction w must be non-zero")
        if self.mu_params.dim != w.shape[0]:
            raise InvalidParameterError("input law dimension does not match w")
        alphas = tuple(float(a) for a in self.alphas)
        if any(a <= 0 for a in alphas) or any(b >= a for a, b in zip(alphas, alphas[1:])):
            raise InvalidParameterError(f"alphas must be positive and strictly decreasing, got {alphas}")
        u = np.ones_like(w) if self.u is None else as_point(self.u, w.shape[0])
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "alphas", alphas)
        object.__setattr__(self, "u", u)

    @property
    def p(self) -> int:
        return int(self.w.shape[0])

    @property
    def level_count(self) -> int:
        return len(self.alphas) + 1


def eval_level(problem: LinearGaussianProblem, x, k: int) -> Tuple[float, float]:
    """(score, bound) of level k at x; the top level returns (w.x, 0)."""
    scores, bounds = _eval_batch(problem, np.atleast_2d(as_point(x, problem.p)), k)
    return float(scores[0]), float(bounds[0])


def _eval_batch(problem: LinearGaussianProblem, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
    if not 1 <= k <= problem.level_count:
        raise InvalidParameterError(f"level {k} outside 1..{problem.level_count}")
    phi = points @ problem.w
    if k == problem.level_count:
        return phi, np.zeros_like(phi)
    a = problem.alphas[k - 1]
    return phi + a * np.cos(points @ problem.u), np.full_like(phi, a)


def analytic_probability(problem: LinearGaussianProblem) -> float:
    """P(w.X >= gamma*) for X ~ N(m0, S0)."""
    mu = problem.mu_params
    scale = float(np.sqrt(problem.w @ mu.covariance @ problem.w))
    return float(norm.sf((problem.gamma_star - problem.w @ mu.mean) / scale))


class AnalyticHierarchy(ScoreHierarchy):
    """Score hierarchy of a LinearGaussianProblem."""

    c = 1.0

    def __init__(self, problem: LinearGaussianProblem, cost_ranks: Optional[Sequence[int]] = None):
        self.problem = problem
        if cost_ranks is None:
            cost_ranks = range(1, problem.level_count + 1)
        ranks = tuple(int(d) for d in cost_ranks)
        if len(ranks) != problem.level_count:
            raise InvalidParameterError(f"need {problem.level_count} cost ranks, got {len(ranks)}")
        if any(b <= a for a, b in zip(ranks, ranks[1:])):
            raise InvalidParameterError(f"cost ranks must be strictly increasing, got {ranks}")
        self._ranks = ranks

    @property
    def level_count(self) -> int:
        return self.problem.level_count

    @property
    def cost_ranks(self) -> Tuple[int, ...]:
        return self._ranks

    def evaluate_batch(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        return _eval_batch(self.problem, as_points(points, self.problem.p), k)
