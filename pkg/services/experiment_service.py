"""
Experiment orchestration: build a benchmark from a config, run seeded
repetitions of one engine, and write report.json / runs.csv / compare.csv.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field

from config.experiment import AnalyticProblemConfig, ExperimentConfig
from config.settings import Settings
from core.errors import BudgetExhaustedError, ConfigError, IncompatibleComparisonError, MfceError
from core.hierarchy import ScoreHierarchy
from core.rng import PURPOSE_SNAPSHOT, derive_substream
from db.pod_store import load_pod
from models.adr_model import ADRProblem
from models.analytic_model import AnalyticHierarchy, LinearGaussianProblem, analytic_probability
from models.pod_model import PDEHierarchy, PODHierarchy, build_pod
from services.ce_service import CEConfig, run_multifidelity_ce, run_preconditioned_ce, run_standard_ce
from services.estimator_service import (
    EstimateReport,
    build_report,
    empirical_scv,
    final_is_estimate,
    standard_error,
)
from services.family_service import GaussianFamily, GaussianParams, gaussian_sample

logger = logging.getLogger(__name__)

ENGINES: Dict[str, Callable] = {
    "standard": run_standard_ce,
    "preconditioned": run_preconditioned_ce,
    "multifidelity": run_multifidelity_ce,
}

RUNS_COLUMNS = ["algorithm", "m", "levels", "seed", "p_hat", "scv", "wall_clock_s", "hf_evals"]


@dataclass(eq=False)
class Benchmark:
    family: GaussianFamily
    mu: GaussianParams
    hierarchy: ScoreHierarchy
    p_ref: Optional[float]


# ---------------------------------------------------------------------------
# Benchmark construction
# ---------------------------------------------------------------------------


def adr_problem(config: ExperimentConfig) -> ADRProblem:
    pc = config.problem
    return ADRProblem(
        nx=pc.nx,
        ny=pc.ny,
        kappa1=pc.kappa1,
        a0=pc.a0,
        kappa2=pc.kappa2,
        p=pc.p,
        turbulence_scale=pc.turbulence_scale,
    )


def input_law(config: ExperimentConfig) -> GaussianParams:
    pc = config.problem
    if isinstance(pc, AnalyticProblemConfig):
        p = len(pc.w)
        mean = np.zeros(p) if pc.mean is None else np.asarray(pc.mean)
        cov = np.eye(p) if pc.covariance is None else np.asarray(pc.covariance)
        return GaussianParams(mean=mean, covariance=cov)
    return GaussianParams(mean=np.asarray(pc.input_mean()), covariance=pc.variance * np.eye(pc.p))


def build_pod_for(config: ExperimentConfig, problem: Optional[ADRProblem] = None) -> PODHierarchy:
    """POD hierarchy for the config's levels from snapshots drawn from mu."""
    pc = config.problem
    problem = problem or adr_problem(config)
    dims = config.surrogate_levels
    stream = derive_substream(pc.snapshot_seed, (PURPOSE_SNAPSHOT,))
    params = gaussian_sample(input_law(config), stream, max(pc.snapshots, dims[-1]))
    return build_pod(problem, params, dims, stability_samples=pc.stability_samples)


def build_benchmark(config: ExperimentConfig) -> Benchmark:
    pc = config.problem
    mu = input_law(config)
    family = GaussianFamily(config.engine.floor)
    ranks = config.surrogate_levels

    if isinstance(pc, AnalyticProblemConfig):
        problem = LinearGaussianProblem(
            w=np.asarray(pc.w),
            mu_params=mu,
            gamma_star=config.engine.gamma_star,
            alphas=tuple(pc.alphas),
            u=None if pc.u is None else np.asarray(pc.u),
        )
        hierarchy = AnalyticHierarchy(problem, ranks + [(ranks[-1] if ranks else 0) + 1])
        p_ref = config.p_ref if config.p_ref is not None else analytic_probability(problem)
        return Benchmark(family=family, mu=mu, hierarchy=hierarchy, p_ref=p_ref)

    problem = adr_problem(config)
    pod = None
    if ranks:
        if pc.pod_file:
            if not Path(pc.pod_file).is_file():
                raise ConfigError("problem.pod_file", f"{pc.pod_file} not found (build it with `mfce pod build`)")
            stored = load_pod(pc.pod_file, problem)
            if stored.basis.shape[1] < ranks[-1]:
                raise ConfigError("levels", f"{pc.pod_file} holds only {stored.basis.shape[1]} basis vectors")
            pod = PODHierarchy.from_basis(
                problem, stored.basis[:, : ranks[-1]], ranks, stored.stability_floor, stored.singular_values
            )
        else:
            pod = build_pod_for(config, problem)
    hierarchy = PDEHierarchy(problem, pod, provider=pc.provider, workers=max(1, Settings().MFCE_SCORE_THREADS))
    return Benchmark(family=family, mu=mu, hierarchy=hierarchy, p_ref=config.p_ref)


def engine_config(config: ExperimentConfig, repetition: int, keep_batches: bool = False) -> CEConfig:
    ec = config.engine
    return CEConfig(
        gamma_star=ec.gamma_star,
        m=ec.m,
        rho=ec.rho,
        delta=ec.delta,
        beta=ec.beta,
        floor=ec.floor,
        m_max=ec.m_max if ec.m_max is not None else max(Settings().MFCE_M_MAX, ec.m),
        alpha_substitution=ec.alpha_substitution,
        inherit_m=ec.inherit_m,
        max_iterations=ec.max_iterations,
        keep_batches=keep_batches,
        seed=config.seed,
        stream_prefix=(repetition,),
    )


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


class ExperimentReport(BaseModel):
    """Everything needed to reproduce and summarize an experiment."""

    config: ExperimentConfig
    p_ref: Optional[float] = None
    mean_p_hat: Optional[float] = None
    standard_error: Optional[float] = None
    empirical_scv: Optional[float] = None
    runs: List[EstimateReport] = Field(default_factory=list)

    @property
    def failed(self) -> List[EstimateReport]:
        return [r for r in self.runs if r.error is not None]


class ExperimentFailed(MfceError):
    """
    Some repetitions raised an engine error. Every run, partial traces
    included, is in `report` and already on disk.

    Attributes:
        report: the full experiment report
        cause: the error of the first failed repetition
    """

    def __init__(self, report: ExperimentReport, cause: MfceError):
        super().__init__(str(cause))
        self.report = report
        self.cause = cause
        self.state = cause.state

    @property
    def budget_exhausted(self) -> bool:
        return isinstance(self.cause, BudgetExhaustedError)


def run_repetition(config: ExperimentConfig, benchmark: Benchmark, repetition: int):
    """
    One seeded engine run followed by the final IS step.

    Returns:
        (EstimateReport, MfceError or None)
    """
    cfg = engine_config(config, repetition)
    engine = ENGINES[config.algorithm]
    result = None
    try:
        result = engine(cfg, benchmark.family, benchmark.hierarchy, benchmark.mu)
        final = final_is_estimate(result, cfg, benchmark.family, benchmark.mu)
    except MfceError as e:
        logger.warning("repetition %d: %s: %s", repetition, type(e).__name__, e)
        error = f"{type(e).__name__}: {e}"
        state = e.state if e.state is not None else getattr(result, "state", None)
        if state is None:
            return EstimateReport(repetition=repetition, seed=config.seed, m_final=cfg.m, error=error), e
        return build_report(state, repetition, config.seed, error=error), e
    timings = result.timer.as_dict() if config.timing else {}
    return build_report(result.state, repetition, config.seed, final=final, timings=timings), None


def _runs_frame(config: ExperimentConfig, report: ExperimentReport, labels: Sequence[str]) -> pd.DataFrame:
    rows = []
    for run in report.runs:
        scv = None
        if run.p_hat is not None and report.p_ref:
            scv = ((run.p_hat - report.p_ref) / report.p_ref) ** 2
        row = {
            "algorithm": config.algorithm,
            "m": config.engine.m,
            "levels": config.levels_label,
            "seed": config.seed,
            "p_hat": run.p_hat,
            "scv": scv,
            "wall_clock_s": run.total_wall_clock if config.timing else 0.0,
            "hf_evals": run.hf_evals,
        }
        for label in labels:
            row[f"iters_d{label}"] = run.per_level_iterations.get(label, 0)
        rows.append(row)
    return pd.DataFrame(rows, columns=RUNS_COLUMNS + [f"iters_d{label}" for label in labels])


def output_dir_for(config: ExperimentConfig, out: Optional[str] = None) -> Path:
    return Path(out or config.output_dir or Settings().MFCE_OUTPUT_DIR)


def run_experiment(
    config: ExperimentConfig, out: Optional[str] = None, benchmark: Optional[Benchmark] = None
) -> ExperimentReport:
    """
    Run config.repetitions seeded repetitions and write report.json and runs.csv.

    Repetitions run on a thread pool capped by MFCE_THREADS; results do not
    depend on the pool size.

    Raises:
        ExperimentFailed: a repetition raised an engine error (files are still written)
    """
    benchmark = benchmark or build_benchmark(config)
    out_dir = output_dir_for(config, out)
    workers = max(1, min(Settings().MFCE_THREADS, config.repetitions))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(
            pool.map(lambda r: run_repetition(config, benchmark, r), range(config.repetitions))
        )

    runs = [report for report, _ in outcomes]
    estimates = [r.p_hat for r in runs if r.p_hat is not None]
    report = ExperimentReport(config=config, p_ref=benchmark.p_ref, runs=runs)
    if estimates:
        report.mean_p_hat = float(np.mean(estimates))
        report.standard_error = standard_error(estimates) if len(estimates) > 1 else None
        if benchmark.p_ref and len(estimates) > 1:
            report.empirical_scv = empirical_scv(estimates, benchmark.p_ref)

    write_report(report, benchmark.hierarchy.labels(), out_dir)

    errors = [e for _, e in outcomes if e is not None]
    if errors:
        raise ExperimentFailed(report, errors[0])
    return report


def write_report(report: ExperimentReport, labels: Sequence[str], out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.model_dump_json(indent=2), encoding="utf-8")
    _runs_frame(report.config, report, labels).to_csv(out_dir / "runs.csv", index=False)
    logger.info("wrote %s", out_dir)


# ---------------------------------------------------------------------------
# Comparison and reference
# ---------------------------------------------------------------------------


def _same_problem(a: ExperimentConfig, b: ExperimentConfig) -> bool:
    return a.problem == b.problem and a.engine.gamma_star == b.engine.gamma_star


def _cell_scv(p_hats: pd.Series, p_ref: Optional[float]) -> float:
    estimates = p_hats.dropna().tolist()
    if not p_ref or len(estimates) < 2:
        return float("nan")
    return empirical_scv(estimates, p_ref)


def compare(configs: Sequence[ExperimentConfig], out: Optional[str] = None) -> pd.DataFrame:
    """
    Run every config and write compare.csv with one row per
    (algorithm, m, levels, seed) cell. Configs landing in the same cell pool
    their repetitions.

    Raises:
        IncompatibleComparisonError: fewer than two configs or different problems
    """
    if len(configs) < 2:
        raise IncompatibleComparisonError("compare needs at least two configs")
    first = configs[0]
    for other in configs[1:]:
        if not _same_problem(first, other):
            raise IncompatibleComparisonError("configs do not share the same problem and gamma_star")

    out_dir = output_dir_for(first, out)
    frames = []
    labels: List[str] = []
    p_ref = None
    for i, config in enumerate(configs):
        benchmark = build_benchmark(config)
        p_ref = benchmark.p_ref
        for label in benchmark.hierarchy.labels():
            if label not in labels:
                labels.append(label)
        report = run_experiment(config, str(out_dir / f"{i:02d}_{config.algorithm}"), benchmark)
        frames.append(_runs_frame(config, report, benchmark.hierarchy.labels()))

    # surrogate labels sort by cost rank; hifi stays last
    labels.sort(key=lambda s: (not s.isdigit(), int(s) if s.isdigit() else 0))
    iter_cols = [f"iters_d{label}" for label in labels]
    runs = pd.concat(frames, ignore_index=True)
    for col in iter_cols:
        if col not in runs.columns:
            runs[col] = np.nan

    keys = ["algorithm", "m", "levels", "seed"]
    table = (
        runs.groupby(keys, sort=False)
        .agg(
            p_hat=("p_hat", "mean"),
            scv=("p_hat", lambda s: _cell_scv(s, p_ref)),
            wall_clock_s=("wall_clock_s", "mean"),
            hf_evals=("hf_evals", "mean"),
            **{col: (col, "mean") for col in iter_cols},
        )
        .reset_index()
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    table.to_csv(out_dir / "compare.csv", index=False)
    return table


def build_reference(config: ExperimentConfig, repetitions: int, m: int) -> float:
    """
    Reference probability: mean of `repetitions` high-budget standard-CE estimates.
    """
    benchmark = build_benchmark(config)
    estimates = []
    for r in range(repetitions):
        cfg = engine_config(config, repetition=r)
        cfg = replace(cfg, m=m, m_max=max(cfg.m_max, m))
        result = run_standard_ce(cfg, benchmark.family, benchmark.hierarchy, benchmark.mu)
        estimates.append(final_is_estimate(result, cfg, benchmark.family, benchmark.mu).p_hat)
        logger.info("reference repetition %d/%d: %.6g", r + 1, repetitions, estimates[-1])
    return float(np.mean(estimates))
