import copy
import json
from pathlib import Path

import pandas as pd
import pytest

from config.experiment import load_config, parse_config
from core.errors import BudgetExhaustedError, ConfigError, DegenerateUpdateError, IncompatibleComparisonError
from db.pod_store import save_pod
from services.ce_service import CEState
from services.experiment_service import (
    ENGINES,
    RUNS_COLUMNS,
    ExperimentFailed,
    build_benchmark,
    build_reference,
    compare,
    engine_config,
    run_experiment,
)
from services.estimator_service import empirical_scv
from services.family_service import GaussianFamily

CONFIG_DIR = Path(__file__).resolve().parent.parent / "config" / "experiments"

ANALYTIC = {
    "problem": {"kind": "analytic", "w": [1.0, 0.0, 0.0], "alphas": [0.4, 0.1]},
    "algorithm": "multifidelity",
    "engine": {"m": 500, "gamma_star": 3.0},
    "levels": [1, 2, "hifi"],
    "repetitions": 3,
    "seed": 5,
    "timing": False,
}

PDE = {
    "problem": {"kind": "pde", "nx": 8, "ny": 4, "p": 4, "snapshots": 30, "snapshot_seed": 2, "stability_samples": 30},
    "algorithm": "multifidelity",
    "engine": {"m": 200, "gamma_star": 0.9},
    "levels": [2, 4, "hifi"],
    "repetitions": 2,
    "seed": 1,
}


def _config(base=ANALYTIC, **updates):
    data = copy.deepcopy(base)
    for key, value in updates.items():
        section, _, name = key.rpartition(".")
        (data[section] if section else data)[name] = value
    return parse_config(data)


class TestConfig:
    def test_shipped_configs_load(self):
        for name in ("analytic_standard", "analytic_preconditioned", "analytic_multifidelity", "pde_multifidelity"):
            config = load_config(CONFIG_DIR / f"{name}.json")
            assert config.levels[-1] == "hifi"

    @pytest.mark.parametrize(
        "key, value, path",
        [
            ("engine.rho", 1.5, "engine.rho"),
            ("engine.m", 0, "engine.m"),
            ("levels", [2, 1, "hifi"], "levels"),
            ("levels", [1, 2], "levels"),
            ("problem.alphas", [0.4], "problem.alphas"),
            ("problem.w", "x", "problem.w"),
            ("engine.m_max", 10, "engine.m_max"),
            ("algorithm", "fancy", "algorithm"),
        ],
    )
    def test_invalid_key_path(self, key, value, path):
        with pytest.raises(ConfigError) as info:
            _config(**{key: value})
        assert info.value.key_path == path

    def test_unknown_key(self):
        data = copy.deepcopy(ANALYTIC)
        data["engine"]["speed"] = 2
        with pytest.raises(ConfigError) as info:
            parse_config(data)
        assert info.value.key_path == "engine.speed"

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_engine_config(self):
        cfg = engine_config(_config(), repetition=4)
        assert cfg.stream_prefix == (4,)
        assert cfg.seed == 5
        assert cfg.m_max >= cfg.m


class TestRunExperiment:
    def test_runs_csv_header(self, tmp_path):
        run_experiment(_config(), str(tmp_path))
        header = (tmp_path / "runs.csv").read_text(encoding="utf-8").splitlines()[0]
        assert header == ",".join(RUNS_COLUMNS + ["iters_d1", "iters_d2", "iters_dhifi"])

    def test_report_contents(self, tmp_path):
        report = run_experiment(_config(), str(tmp_path))
        assert len(report.runs) == 3
        assert report.p_ref == pytest.approx(1.3499e-3, rel=1e-3)
        assert report.empirical_scv is not None
        data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        assert data["config"]["algorithm"] == "multifidelity"
        runs = pd.read_csv(tmp_path / "runs.csv")
        assert (runs["wall_clock_s"] == 0.0).all()
        assert (runs["iters_d1"] + runs["iters_d2"] + runs["iters_dhifi"] >= 1).all()

    def test_reruns_are_byte_identical(self, tmp_path):
        run_experiment(_config(), str(tmp_path / "a"))
        run_experiment(_config(), str(tmp_path / "b"))
        for name in ("runs.csv", "report.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_thread_count_does_not_change_results(self, tmp_path, monkeypatch):
        run_experiment(_config(), str(tmp_path / "serial"))
        monkeypatch.setenv("MFCE_THREADS", "3")
        run_experiment(_config(), str(tmp_path / "pool"))
        assert (tmp_path / "serial" / "runs.csv").read_bytes() == (tmp_path / "pool" / "runs.csv").read_bytes()

    def test_failed_repetitions_still_write(self, tmp_path, monkeypatch):
        def exhausted(config, family, hierarchy, mu, nu0=None):
            state = CEState(nu=mu, rho=config.rho, m=config.m, level=1)
            raise BudgetExhaustedError("cap reached", gap=0.5, m=config.m, state=state)

        monkeypatch.setitem(ENGINES, "standard", exhausted)
        with pytest.raises(ExperimentFailed) as info:
            run_experiment(_config(algorithm="standard"), str(tmp_path))
        assert len(info.value.report.failed) == 3
        assert info.value.budget_exhausted
        assert info.value.cause.gap == 0.5
        runs = pd.read_csv(tmp_path / "runs.csv")
        assert runs["p_hat"].isna().all()
        assert (tmp_path / "report.json").exists()

    def test_engine_error_keeps_other_repetitions(self, tmp_path, monkeypatch):
        real = ENGINES["multifidelity"]

        class FailingFamily(GaussianFamily):
            def update(self, points, weights):
                raise DegenerateUpdateError("all weights vanish")

        def degenerate_on_second(config, family, hierarchy, mu, nu0=None):
            if config.stream_prefix == (1,):
                family = FailingFamily()
            return real(config, family, hierarchy, mu, nu0)

        monkeypatch.setitem(ENGINES, "multifidelity", degenerate_on_second)
        with pytest.raises(ExperimentFailed) as info:
            run_experiment(_config(), str(tmp_path))
        assert not info.value.budget_exhausted
        assert isinstance(info.value.cause, DegenerateUpdateError)
        assert [r.repetition for r in info.value.report.failed] == [1]

        data = json.loads((tmp_path / "report.json").read_text(encoding="utf-8"))
        failed = data["runs"][1]
        assert failed["error"].startswith("DegenerateUpdateError")
        assert failed["p_hat"] is None
        assert len(failed["trace_summary"]) == 1
        assert data["runs"][0]["error"] is None and data["runs"][2]["error"] is None

        runs = pd.read_csv(tmp_path / "runs.csv")
        assert len(runs) == 3
        assert runs["p_hat"].isna().tolist() == [False, True, False]


class TestPDEExperiment:
    def test_small_run(self, tmp_path):
        report = run_experiment(_config(PDE), str(tmp_path))
        assert report.p_ref is None
        assert all(r.p_hat is not None and r.p_hat >= 0.0 for r in report.runs)
        runs = pd.read_csv(tmp_path / "runs.csv")
        assert list(runs.columns[-3:]) == ["iters_d2", "iters_d4", "iters_dhifi"]
        assert runs["scv"].isna().all()

    def test_score_threads_do_not_change_results(self, tmp_path, monkeypatch):
        config = _config(PDE, timing=False)
        run_experiment(config, str(tmp_path / "serial"))
        monkeypatch.setenv("MFCE_SCORE_THREADS", "2")
        assert build_benchmark(config).hierarchy.workers == 2
        run_experiment(config, str(tmp_path / "pool"))
        assert (tmp_path / "serial" / "runs.csv").read_bytes() == (tmp_path / "pool" / "runs.csv").read_bytes()

    def test_stored_pod_is_sliced(self, tmp_path, small_pod):
        path = save_pod(small_pod, tmp_path / "pod.bin")
        benchmark = build_benchmark(_config(PDE, **{"problem.pod_file": str(path)}))
        assert benchmark.hierarchy.labels() == ("2", "4", "hifi")
        assert benchmark.hierarchy.pod.stability_floor == small_pod.stability_floor

    def test_missing_pod_file(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            build_benchmark(_config(PDE, **{"problem.pod_file": str(tmp_path / "none.bin")}))
        assert info.value.key_path == "problem.pod_file"


class TestCompare:
    def test_rejects_different_problems(self, tmp_path):
        with pytest.raises(IncompatibleComparisonError):
            compare([_config(), _config(**{"engine.gamma_star": 3.5})], str(tmp_path))
        with pytest.raises(IncompatibleComparisonError):
            compare([_config()], str(tmp_path))

    def test_writes_table(self, tmp_path):
        configs = [
            _config(algorithm="standard"),
            _config(),
            _config(**{"engine.m": 300}),
            _config(),
        ]
        table = compare(configs, str(tmp_path))
        written = pd.read_csv(tmp_path / "compare.csv")
        assert list(written.columns[:8]) == ["algorithm", "m", "levels", "seed", "p_hat", "scv", "wall_clock_s", "hf_evals"]
        assert list(written["algorithm"]) == ["standard", "multifidelity", "multifidelity"]
        assert list(written["m"]) == [500, 500, 300]
        assert (written["seed"] == 5).all()
        assert (written["levels"] == "1;2;hifi").all()
        assert len(table) == 3

        # the repeated config pools its repetitions into one cell
        pooled = pd.concat([pd.read_csv(tmp_path / name / "runs.csv") for name in ("01_multifidelity", "03_multifidelity")])
        p_ref = build_benchmark(_config()).p_ref
        assert written.loc[1, "p_hat"] == pytest.approx(pooled["p_hat"].mean())
        assert written.loc[1, "scv"] == pytest.approx(empirical_scv(pooled["p_hat"].tolist(), p_ref))


def test_reference_close_to_closed_form():
    p_ref = build_reference(_config(), repetitions=3, m=1000)
    assert p_ref == pytest.approx(1.3499e-3, rel=0.3)
