"""
Exceptions raised by the estimation engines, models and experiment runner.
"""

from typing import Any, Optional


class MfceError(Exception):
    """
    Base class for every error raised by this package.

    Attributes:
        state: partial engine state, set by the engines before re-raising
    """

    state: Optional[Any] = None


class InvalidParameterError(MfceError):
    """A distribution or engine parameter violates its invariants."""


class DegenerateUpdateError(MfceError):
    """All CE weights are zero; the caller must enlarge the sample."""


class DominationViolationError(MfceError):
    """The proposal density vanishes where the input law does not."""


class BudgetExhaustedError(MfceError):
    """
    Sample growth exceeded the configured cap.

    Attributes:
        gap: gamma_bar minus the best quantile reached with the last sample
        m: sample size at the time of failure
    """

    def __init__(self, message: str, gap: float, m: int, state: Optional[Any] = None):
        super().__init__(message)
        self.gap = gap
        self.m = m
        self.state = state


class LevelExhaustedError(BudgetExhaustedError):
    """Quantile target unreachable at a surrogate level whose sample growth is disabled."""


class IterationLimitError(MfceError):
    """The CE loop ran past the configured iteration cap."""


class RankDeficientError(MfceError):
    """Requested reduced dimension exceeds the numerical rank of the snapshots."""


class SingularSystemError(MfceError):
    """A full-order solve did not reach its residual tolerance."""


class IncompatibleComparisonError(MfceError):
    """Configurations passed to compare do not share the same problem."""


class ConfigError(MfceError):
    """
    Invalid experiment configuration.

    Attributes:
        key_path: dotted path of the offending key (e.g. "engine.rho")
    """

    def __init__(self, key_path: str, message: str):
        super().__init__(f"{key_path}: {message}")
        self.key_path = key_path
