"""
Experiment configuration loaded from JSON files.

Example (analytic benchmark, multifidelity engine):

    {
      "problem": {"kind": "analytic", "w": [1, 0, 0], "alphas": [0.4, 0.1]},
      "algorithm": "multifidelity",
      "engine": {"m": 2000, "gamma_star": 4.0},
      "levels": [1, 2, "hifi"],
      "repetitions": 20,
      "seed": 7
    }
"""

import json
import math
from pathlib import Path
from typing import Annotated, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from core.errors import ConfigError
from core.hierarchy import HIFI_LABEL

PDE_DEFAULT_MEAN = (17 * math.pi / 18, 0.8, 0.15)


class EngineConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    gamma_star: float
    m: int = Field(2000, ge=1)
    rho: float = Field(0.2, gt=0, lt=1)
    delta: float = Field(1e-2, gt=0)
    beta: float = Field(1.25, gt=1)
    floor: float = Field(5e-5, gt=0)
    m_max: Optional[int] = Field(None, ge=1)
    alpha_substitution: bool = False
    inherit_m: bool = False
    max_iterations: int = Field(10_000, ge=1)


class AnalyticProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["analytic"]
    w: List[float]
    mean: Optional[List[float]] = None
    covariance: Optional[List[List[float]]] = None
    alphas: List[float] = Field(default_factory=list)
    u: Optional[List[float]] = None


class PDEProblemConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["pde"]
    nx: int = Field(32, ge=2)
    ny: int = Field(16, ge=2)
    kappa1: float = Field(0.03, gt=0)
    a0: float = Field(0.5, gt=0)
    kappa2: float = Field(0.25, gt=0)
    p: int = Field(3, ge=3)
    turbulence_scale: float = Field(0.2, ge=0)
    mean: Optional[List[float]] = None
    variance: float = Field(1.0, gt=0)
    provider: Literal["residual", "exact"] = "residual"
    pod_file: Optional[str] = None
    snapshots: int = Field(200, ge=1)
    snapshot_seed: int = Field(0, ge=0)
    stability_samples: int = Field(50, ge=1)

    def input_mean(self) -> List[float]:
        if self.mean is not None:
            return list(self.mean)
        return list(PDE_DEFAULT_MEAN) + [0.0] * (self.p - 3)


ProblemConfig = Annotated[Union[AnalyticProblemConfig, PDEProblemConfig], Field(discriminator="kind")]


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    problem: ProblemConfig
    algorithm: Literal["standard", "preconditioned", "multifidelity"]
    engine: EngineConfig
    levels: List[Union[int, Literal["hifi"]]] = Field(default_factory=lambda: [HIFI_LABEL])
    repetitions: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    output_dir: Optional[str] = None
    p_ref: Optional[float] = Field(None, gt=0)
    timing: bool = True

    @field_validator("levels")
    @classmethod
    def _levels_end_with_hifi(cls, levels):
        if not levels or levels[-1] != HIFI_LABEL:
            raise ValueError('last level must be "hifi"')
        ranks = levels[:-1]
        if any(not isinstance(d, int) for d in ranks):
            raise ValueError('"hifi" may only appear as the last level')
        if any(d < 1 for d in ranks) or any(b <= a for a, b in zip(ranks, ranks[1:])):
            raise ValueError("levels must be positive and strictly increasing")
        return levels

    @property
    def surrogate_levels(self) -> List[int]:
        return [int(d) for d in self.levels[:-1]]

    @property
    def levels_label(self) -> str:
        return ";".join(str(d) for d in self.levels)


def _key_path(loc) -> str:
    parts = [str(p) for p in loc]
    # drop the discriminator tag pydantic inserts for tagged unions
    if len(parts) > 1 and parts[0] == "problem" and parts[1] in ("analytic", "pde"):
        parts.pop(1)
    return ".".join(parts) or "<root>"


def _cross_check(config: ExperimentConfig) -> None:
    problem = config.problem
    n_surrogates = len(config.surrogate_levels)
    if isinstance(problem, AnalyticProblemConfig):
        p = len(problem.w)
        if len(problem.alphas) != n_surrogates:
            raise ConfigError("problem.alphas", f"expected {n_surrogates} amplitudes (one per surrogate level)")
        if problem.mean is not None and len(problem.mean) != p:
            raise ConfigError("problem.mean", f"expected length {p}")
        if problem.u is not None and len(problem.u) != p:
            raise ConfigError("problem.u", f"expected length {p}")
        if problem.covariance is not None and (
            len(problem.covariance) != p or any(len(row) != p for row in problem.covariance)
        ):
            raise ConfigError("problem.covariance", f"expected a {p}x{p} matrix")
    else:
        if problem.mean is not None and len(problem.mean) != problem.p:
            raise ConfigError("problem.mean", f"expected length {problem.p}")
        if n_surrogates and config.surrogate_levels[-1] > problem.nx * problem.ny:
            raise ConfigError("levels", "reduced dimension exceeds the number of grid cells")
    m_max = config.engine.m_max
    if m_max is not None and m_max < config.engine.m:
        raise ConfigError("engine.m_max", "must be >= engine.m")


def parse_config(data: dict) -> ExperimentConfig:
    """
    Validate a config dict.

    Raises:
        ConfigError: with the dotted path of the first offending key
    """
    try:
        config = ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(_key_path(first["loc"]), first["msg"]) from e
    _cross_check(config)
    return config


def load_config(path) -> ExperimentConfig:
    """Read and validate a UTF-8 JSON experiment config."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise ConfigError("<file>", f"{path} not found") from e
    except json.JSONDecodeError as e:
        raise ConfigError("<file>", f"{path}: invalid JSON ({e})") from e
    if not isinstance(data, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    return parse_config(data)
