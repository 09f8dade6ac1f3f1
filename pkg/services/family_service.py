"""
Parametric proposal families.

Gaussian family with the closed-form weighted CE update, and a finite
categorical family in which the zero-variance density is representable.
All densities are handled in log space.
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
from scipy.linalg import solve_triangular

from core.errors import DegenerateUpdateError, DominationViolationError, InvalidParameterError
from core.rng import RandomStream
from core.types import as_point, as_points

logger = logging.getLogger(__name__)

DEFAULT_FLOOR = 5e-5
_LOG_2PI = float(np.log(2.0 * np.pi))


# ---------------------------------------------------------------------------
# Gaussian family
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GaussianParams:
    """Mean vector and covariance matrix of a p-dimensional normal law."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        cov = np.asarray(self.covariance, dtype=np.float64)
        p = mean.shape[0]
        if cov.shape != (p, p):
            raise InvalidParameterError(f"covariance shape {cov.shape} does not match mean of length {p}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @cached_property
    def cholesky(self) -> np.ndarray:
        cov = self.covariance
        if not np.allclose(cov, cov.T, rtol=1e-10, atol=1e-12):
            raise InvalidParameterError("covariance is not symmetric")
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as e:
            raise InvalidParameterError(f"covariance is not positive definite: {e}") from e

    @classmethod
    def standard(cls, p: int) -> "GaussianParams":
        return cls(mean=np.zeros(p), covariance=np.eye(p))


def gaussian_log_density_batch(theta: GaussianParams, points: np.ndarray) -> np.ndarray:
    """log nu^theta at each row of an (m, p) array."""
    points = as_points(points, theta.dim)
    chol = theta.cholesky
    diff = points - theta.mean
    white = solve_triangular(chol, diff.T, lower=True)
    maha = np.sum(white * white, axis=0)
    log_det = 2.0 * np.sum(np.log(np.diag(chol)))
    return -0.5 * (theta.dim * _LOG_2PI + log_det + maha)


def gaussian_log_density(theta: GaussianParams, x) -> float:
    """
    Log-density of the normal law theta at x.

    Raises:
        InvalidParameterError: covariance not symmetric positive definite,
            or x of the wrong dimension
    """
    x = as_point(x, theta.dim)
    return float(gaussian_log_density_batch(theta, x.reshape(1, -1))[0])


def gaussian_sample(theta: GaussianParams, stream: RandomStream, m: int) -> np.ndarray:
    """
    Draw m i.i.d. points from theta; deterministic given the stream.

    Returns:
        (m, p) array
    """
    if m < 1:
        raise InvalidParameterError(f"sample size must be >= 1, got {m}")
    gen = stream.generator()
    z = gen.standard_normal((m, theta.dim))
    return theta.mean + z @ theta.cholesky.T


def floor_eigenvalues(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clamp the eigenvalues of a symmetric matrix below `floor` and reassemble."""
    sym = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, floor)
    out = (vecs * vals) @ vecs.T
    return 0.5 * (out + out.T)


def gaussian_ce_update(points, weights, floor: float = DEFAULT_FLOOR) -> GaussianParams:
    """
    Weighted maximum-likelihood Gaussian fit (closed-form CE update).

    Args:
        points: (m, p) samples z_i
        weights: non-negative weights 1_A(z_i) mu(z_i)/nu(z_i); only ratios matter
        floor: minimal covariance eigenvalue

    Returns:
        GaussianParams with mean the weighted average and covariance the
        1/sum(w)-normalized weighted scatter, eigenvalue-floored

    Raises:
        DegenerateUpdateError: all weights are zero
    """
    points = as_points(points)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != points.shape[0]:
        raise InvalidParameterError("weights and points differ in length")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidParameterError("weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateUpdateError("all CE weights are zero")
    if floor <= 0:
        raise InvalidParameterError("covariance floor must be positive")

    mean = (w @ points) / total
    diff = points - mean
    cov = (diff * w[:, None]).T @ diff / total
    return GaussianParams(mean=mean, covariance=floor_eigenvalues(cov, floor))


class GaussianFamily:
    """Gaussian proposal family V used by the engines."""

    name = "gaussian"

    def __init__(self, floor: float = DEFAULT_FLOOR):
        if floor <= 0:
            raise InvalidParameterError("covariance floor must be positive")
        self.floor = floor

    def log_density(self, theta: GaussianParams, points: np.ndarray) -> np.ndarray:
        return gaussian_log_density_batch(theta, points)

    def sample(self, theta: GaussianParams, stream: RandomStream, m: int) -> np.ndarray:
        return gaussian_sample(theta, stream, m)

    def update(self, points: np.ndarray, weights: np.ndarray) -> GaussianParams:
        return gaussian_ce_update(points, weights, self.floor)


# ---------------------------------------------------------------------------
# Categorical family
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class CategoricalParams:
    """Probabilities over a finite support of parameter points."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = as_points(self.support)
        probs = np.asarray(self.probs, dtype=np.float64).reshape(-1)
        if probs.shape[0] != support.shape[0]:
            raise InvalidParameterError("probs and support differ in length")
        if np.any(probs < 0):
            raise InvalidParameterError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidParameterError(f"probabilities sum to {probs.sum()!r}, not 1")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @cached_property
    def index(self) -> Dict[Tuple[float, ...], int]:
        return {tuple(row): i for i, row in enumerate(self.support)}

    def indices_of(self, points: np.ndarray) -> np.ndarray:
        """Support index of each row, -1 when the row is not a support point."""
        points = as_points(points, self.support.shape[1])
        return np.array([self.index.get(tuple(row), -1) for row in points], dtype=np.int64)


def categorical_ce_update(support, weights) -> CategoricalParams:
    """
    Exact CE maximizer over the simplex: the normalized weights.

    Raises:
        DegenerateUpdateError: all weights are zero
    """
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if np.any(w < 0):
        raise InvalidParameterError("weights must be non-negative")
    total = w.sum()
    if total <= 0:
        raise DegenerateUpdateError("all CE weights are zero")
    probs = w / total
    # push the round-off onto the largest entry so the sum is 1 to the last ulp
    probs[np.argmax(probs)] += 1.0 - probs.sum()
    return CategoricalParams(support=support, probs=probs)


def categorical_log_density_batch(theta: CategoricalParams, points: np.ndarray) -> np.ndarray:
    idx = theta.indices_of(points)
    with np.errstate(divide="ignore"):
        logp = np.log(theta.probs)
    out = np.full(idx.shape[0], -np.inf)
    inside = idx >= 0
    out[inside] = logp[idx[inside]]
    return out


def categorical_sample(theta: CategoricalParams, stream: RandomStream, m: int) -> np.ndarray:
    if m < 1:
        raise InvalidParameterError(f"sample size must be >= 1, got {m}")
    gen = stream.generator()
    idx = gen.choice(theta.support.shape[0], size=m, p=theta.probs)
    return theta.support[idx]


class CategoricalFamily:
    """Categorical proposal family over a fixed support."""

    name = "categorical"

    def __init__(self, support):
        self.support = as_points(support)
        self._uniform = CategoricalParams(
            support=self.support, probs=np.full(self.support.shape[0], 1.0 / self.support.shape[0])
        )

    def log_density(self, theta: CategoricalParams, points: np.ndarray) -> np.ndarray:
        return categorical_log_density_batch(theta, points)

    def sample(self, theta: CategoricalParams, stream: RandomStream, m: int) -> np.ndarray:
        return categorical_sample(theta, stream, m)

    def update(self, points: np.ndarray, weights: np.ndarray) -> CategoricalParams:
        idx = self._uniform.indices_of(points)
        if np.any(idx < 0):
            raise InvalidParameterError("sample point outside the categorical support")
        totals = np.bincount(idx, weights=np.asarray(weights, dtype=np.float64), minlength=self.support.shape[0])
        return categorical_ce_update(self.support, totals)


# ---------------------------------------------------------------------------
# Likelihood ratios
# ---------------------------------------------------------------------------


def _log_density_any(theta, points: np.ndarray) -> np.ndarray:
    if isinstance(theta, GaussianParams):
        return gaussian_log_density_batch(theta, points)
    if isinstance(theta, CategoricalParams):
        return categorical_log_density_batch(theta, points)
    raise InvalidParameterError(f"unsupported parameter type {type(theta).__name__}")


def log_likelihood_ratios(mu_params, nu_params, points: np.ndarray) -> np.ndarray:
    """
    log mu(z_i) - log nu(z_i) for each row.

    Points outside supp(mu) get -inf (zero weight).

    Raises:
        DominationViolationError: nu vanishes at a point where mu does not
    """
    log_mu = _log_density_any(mu_params, points)
    log_nu = _log_density_any(nu_params, points)
    bad = np.isneginf(log_nu) & np.isfinite(log_mu)
    if np.any(bad):
        raise DominationViolationError(
            f"proposal density underflows at {int(bad.sum())} point(s) where the input law is positive"
        )
    out = np.full(log_mu.shape[0], -np.inf)
    ok = np.isfinite(log_mu)
    out[ok] = log_mu[ok] - log_nu[ok]
    return out


def likelihood_ratio(mu_params, nu_params, x) -> float:
    """mu(x)/nu(x), computed as a difference of log-densities."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    return float(np.exp(log_likelihood_ratios(mu_params, nu_params, x)[0]))
