"""
Shared data types: parameter points and per-iteration sample batches.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from core.errors import InvalidParameterError


def as_point(x, p: Optional[int] = None) -> np.ndarray:
    """
    Validate a parameter point x in R^p.

    Args:
        x: array-like of length p
        p: expected dimension (skipped when None)

    Returns:
        1-D float64 array
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise InvalidParameterError(f"parameter point must be 1-D, got shape {arr.shape}")
    if p is not None and arr.shape[0] != p:
        raise InvalidParameterError(f"parameter point has dimension {arr.shape[0]}, expected {p}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("parameter point has non-finite coordinates")
    return arr


def as_points(points, p: Optional[int] = None) -> np.ndarray:
    """Validate a sequence of parameter points as an (m, p) float64 array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise InvalidParameterError(f"expected a non-empty (m, p) array, got shape {arr.shape}")
    if p is not None and arr.shape[1] != p:
        raise InvalidParameterError(f"points have dimension {arr.shape[1]}, expected {p}")
    if not np.all(np.isfinite(arr)):
        raise InvalidParameterError("points have non-finite coordinates")
    return arr


@dataclass(frozen=True, eq=False)
class SampleBatch:
    """
    Samples z_1..z_m of one CE iteration with their scores at `level`.

    bounds holds the raw per-point bounds eps_k(z_i) (not multiplied by c);
    log_weights holds log mu(z_i) - log nu(z_i) for the proposal nu the
    points were drawn from.
    """

    points: np.ndarray
    scores: np.ndarray
    level: int
    bounds: np.ndarray
    log_weights: np.ndarray
    top_level: int

    def __post_init__(self):
        m = self.points.shape[0]
        if m < 1:
            raise InvalidParameterError("a sample batch needs at least one point")
        for name in ("scores", "bounds", "log_weights"):
            if getattr(self, name).shape != (m,):
                raise InvalidParameterError(f"{name} must have length {m}")
        if np.any(self.bounds < 0):
            raise InvalidParameterError("per-point bounds must be non-negative")
        if self.level == self.top_level and np.any(self.bounds != 0):
            raise InvalidParameterError("high-fidelity batch must carry zero bounds")

    @property
    def m(self) -> int:
        return int(self.points.shape[0])

    def extend(self, other: "SampleBatch") -> "SampleBatch":
        """Concatenate a batch of additional samples scored at the same level."""
        if other.level != self.level:
            raise InvalidParameterError("cannot merge batches scored at different levels")
        return SampleBatch(
            points=np.vstack([self.points, other.points]),
            scores=np.concatenate([self.scores, other.scores]),
            level=self.level,
            bounds=np.concatenate([self.bounds, other.bounds]),
            log_weights=np.concatenate([self.log_weights, other.log_weights]),
            top_level=self.top_level,
        )

    def rescored(self, scores: np.ndarray, bounds: np.ndarray, level: int) -> "SampleBatch":
        """Same points and weights, scores and bounds from another level."""
        return SampleBatch(
            points=self.points,
            scores=np.asarray(scores, dtype=np.float64),
            level=level,
            bounds=np.asarray(bounds, dtype=np.float64),
            log_weights=self.log_weights,
            top_level=self.top_level,
        )
