"""
POD reduced-basis hierarchy for the ADR model.

Level k uses the first d_k columns of one orthonormal basis, so the reduced
spaces are nested. Error bounds are residual norms over a stability floor
calibrated offline on the snapshot parameters.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property, partial
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import svdvals

from core.errors import InvalidParameterError, RankDeficientError
from core.hierarchy import ScoreHierarchy
from core.types import as_point, as_points
from models.adr_model import ADRProblem, solve_high_fidelity, sup_norm_score

logger = logging.getLogger(__name__)

STABILITY_SAFETY = 0.9
PROVIDERS = ("residual", "exact")


def _check_dims(dims: Sequence[int]) -> Tuple[int, ...]:
    dims = tuple(int(d) for d in dims)
    if not dims or dims[0] < 1 or any(b <= a for a, b in zip(dims, dims[1:])):
        raise InvalidParameterError(f"dims must be positive and strictly increasing, got {dims}")
    return dims


def pod_basis(snapshots: np.ndarray, dims: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Leading max(dims) left singular vectors of a (q, n) snapshot matrix.

    Returns:
        (basis, singular_values)

    Raises:
        RankDeficientError: max(dims) exceeds the numerical rank
    """
    dims = _check_dims(dims)
    snapshots = np.asarray(snapshots, dtype=np.float64)
    if snapshots.shape[1] < dims[-1]:
        raise InvalidParameterError(f"{snapshots.shape[1]} snapshots cannot span dimension {dims[-1]}")
    u, s, _ = np.linalg.svd(snapshots, full_matrices=False)
    tol = s[0] * max(snapshots.shape) * np.finfo(np.float64).eps if s.size else 0.0
    rank = int(np.sum(s > tol))
    if dims[-1] > rank:
        raise RankDeficientError(f"requested dimension {dims[-1]} exceeds snapshot rank {rank}")
    return u[:, : dims[-1]].copy(), s


def stability_floor(problem: ADRProblem, params: np.ndarray) -> float:
    """0.9 x the smallest singular value of A(x) over the given parameters."""
    sigmas = [svdvals(problem.assemble(x).toarray())[-1] for x in params]
    return STABILITY_SAFETY * float(min(sigmas))


@dataclass(frozen=True)
class _LevelOperators:
    basis: np.ndarray
    applied: List[np.ndarray]  # M_l V
    reduced: List[np.ndarray]  # V^T M_l V


@dataclass(eq=False)
class PODHierarchy:
    problem: ADRProblem
    basis: np.ndarray
    dims: Tuple[int, ...]
    stability_floor: float
    singular_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    lstsq_fallbacks: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, init=False, repr=False)

    def __post_init__(self):
        self.dims = _check_dims(self.dims)
        self.basis = np.asarray(self.basis, dtype=np.float64)
        if self.basis.shape != (self.problem.q, self.dims[-1]):
            raise InvalidParameterError(
                f"basis shape {self.basis.shape} does not match (q={self.problem.q}, d_K={self.dims[-1]})"
            )
        if self.stability_floor <= 0:
            raise InvalidParameterError("stability floor must be positive")

    @classmethod
    def from_basis(
        cls, problem: ADRProblem, basis, dims, stability_floor: float, singular_values=None
    ) -> "PODHierarchy":
        sing = np.zeros(0) if singular_values is None else np.asarray(singular_values, dtype=np.float64)
        return cls(problem=problem, basis=basis, dims=dims, stability_floor=stability_floor, singular_values=sing)

    @property
    def K(self) -> int:
        return len(self.dims)

    def level_basis(self, k: int) -> np.ndarray:
        return self.basis[:, : self.dims[k - 1]]

    def tail_bound(self, k: int) -> float:
        """
        Norm of the singular values discarded at level k. Bounds the
        projection error of every snapshot onto the level-k basis.
        """
        if not 1 <= k <= self.K:
            raise InvalidParameterError(f"reduced level {k} outside 1..{self.K}")
        if self.singular_values.size == 0:
            raise InvalidParameterError("no singular values recorded for this basis")
        return float(np.linalg.norm(self.singular_values[self.dims[k - 1] :]))

    @cached_property
    def _operators(self) -> List[_LevelOperators]:
        levels = []
        for k in range(1, self.K + 1):
            v = self.level_basis(k)
            applied = [np.asarray(m @ v) for m in self.problem.affine_matrices]
            levels.append(_LevelOperators(basis=v, applied=applied, reduced=[v.T @ a for a in applied]))
        return levels

    def operators(self, k: int) -> _LevelOperators:
        if not 1 <= k <= self.K:
            raise InvalidParameterError(f"reduced level {k} outside 1..{self.K}")
        return self._operators[k - 1]


def build_pod(
    problem: ADRProblem, snapshot_params, dims: Sequence[int], stability_samples: int = 50
) -> PODHierarchy:
    """
    Solve the full model at every snapshot parameter and extract the POD basis.

    The stability floor is calibrated on the first `stability_samples`
    snapshot parameters.
    """
    params = as_points(snapshot_params, problem.p)
    dims = _check_dims(dims)
    if params.shape[0] < dims[-1]:
        raise InvalidParameterError(f"need at least {dims[-1]} snapshots, got {params.shape[0]}")
    snapshots = np.column_stack([solve_high_fidelity(problem, x) for x in params])
    basis, sing = pod_basis(snapshots, dims)
    floor = stability_floor(problem, params[:stability_samples])
    pod = PODHierarchy(problem=problem, basis=basis, dims=dims, stability_floor=floor, singular_values=sing)
    logger.info("POD basis: q=%d dims=%s floor=%.4g tail=%.4g", problem.q, dims, floor, pod.tail_bound(pod.K))
    return pod


def rb_solve(hierarchy: PODHierarchy, x, k: int) -> Tuple[np.ndarray, float]:
    """
    Galerkin reduced solve at level k.

    Returns:
        (lifted field, full-order residual 2-norm)
    """
    problem = hierarchy.problem
    x = as_point(x, problem.p)
    ops = hierarchy.operators(k)
    coeffs = problem.affine_coefficients(x)
    rhs = problem.source(x)
    a_red = sum(c * r for c, r in zip(coeffs, ops.reduced))
    b_red = ops.basis.T @ rhs
    try:
        coef = np.linalg.solve(a_red, b_red)
        if not np.all(np.isfinite(coef)):
            raise np.linalg.LinAlgError("non-finite reduced solution")
    except np.linalg.LinAlgError:
        logger.warning("singular reduced system at level %d, falling back to least squares", k)
        with hierarchy._lock:
            hierarchy.lstsq_fallbacks += 1
        coef = np.linalg.lstsq(a_red, b_red, rcond=None)[0]
    residual = rhs - sum(c * (a @ coef) for c, a in zip(coeffs, ops.applied))
    return ops.basis @ coef, float(np.linalg.norm(residual))


def error_bound(hierarchy: PODHierarchy, x, k: int, provider: str = "residual") -> float:
    """
    Bound on ||f(x) - f^(k)(x)||_2.

    provider "residual" gives residual / stability floor; "exact" solves the
    full model and returns the true error (testing only).
    """
    if provider not in PROVIDERS:
        raise InvalidParameterError(f"unknown error-bound provider {provider!r}")
    field, residual = rb_solve(hierarchy, x, k)
    if provider == "residual":
        return residual / hierarchy.stability_floor
    return float(np.linalg.norm(solve_high_fidelity(hierarchy.problem, x) - field))


class PDEHierarchy(ScoreHierarchy):
    """
    Sup-norm scores of the reduced models (levels 1..K) and of the full
    model (level K+1), with c = 1.

    Points of a batch are scored on a thread pool of `workers` threads;
    scores and bounds keep the input order.
    """

    c = 1.0

    def __init__(
        self,
        problem: ADRProblem,
        pod: Optional[PODHierarchy] = None,
        provider: str = "residual",
        workers: int = 1,
    ):
        if provider not in PROVIDERS:
            raise InvalidParameterError(f"unknown error-bound provider {provider!r}")
        if pod is not None and pod.problem is not problem:
            raise InvalidParameterError("POD hierarchy was built for another problem")
        if workers < 1:
            raise InvalidParameterError(f"workers must be >= 1, got {workers}")
        self.problem = problem
        self.pod = pod
        self.provider = provider
        self.workers = workers

    @property
    def level_count(self) -> int:
        return 1 if self.pod is None else self.pod.K + 1

    @property
    def cost_ranks(self) -> Tuple[int, ...]:
        dims = () if self.pod is None else self.pod.dims
        return dims + (max((self.problem.q,) + tuple(d + 1 for d in dims)),)

    def score_point(self, x: np.ndarray, k: int) -> Tuple[float, float]:
        """(score, error bound) of one point at level k."""
        if k == self.top_level:
            return sup_norm_score(solve_high_fidelity(self.problem, x)), 0.0
        field, residual = rb_solve(self.pod, x, k)
        if self.provider == "residual":
            bound = residual / self.pod.stability_floor
        else:
            bound = float(np.linalg.norm(solve_high_fidelity(self.problem, x) - field))
        return sup_norm_score(field), bound

    def evaluate_batch(self, points: np.ndarray, k: int) -> Tuple[np.ndarray, np.ndarray]:
        self.check_level(k)
        points = as_points(points, self.problem.p)
        score = partial(self.score_point, k=k)
        if self.workers > 1 and points.shape[0] > 1:
            with ThreadPoolExecutor(max_workers=min(self.workers, points.shape[0])) as pool:
                pairs = list(pool.map(score, points))
        else:
            pairs = [score(x) for x in points]
        out = np.array(pairs, dtype=np.float64)
        return out[:, 0].copy(), out[:, 1].copy()
