import csv
import json
import os
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.application.uses_cases.harness.experiment_service import (
    best_nu,
    run_experiment,
    run_suite,
    shared_initial_design,
    summarize,
    summarize_experiment,
)
from src.application.uses_cases.optimizer import optimizer_service
from src.application.uses_cases.optimizer.optimizer_service import random_step
from src.core.config import resolve_output_dir, settings
from src.core.errors import InputError
from src.domain.models import Experiment, OptimizerKind, RunStatus
from src.domain.state import RunTrace, TraceRow
from src.infrastructure.database import session_factory
from src.infrastructure.trace_store import TRACE_COLUMNS, TraceWriter, read_trace
from src.interface.schemas.experiments import ExperimentConfig, SuiteConfig


def constant_trace(value, length=4, seed=0, status=RunStatus.COMPLETED):
    rows = [TraceRow(i + 1, (0.0,), value, value, value, float("nan"), float("nan"), float(i)) for i in range(length)]
    return RunTrace(OptimizerKind.RANDOM, "levy-1", seed, rows=rows, status=status)


def tiny_config(**overrides):
    payload = {
        "name": "tiny",
        "objective": "ackley-2",
        "optimizer": "neuralbo",
        "budget": 3,
        "repeats": 2,
        "initial_design": 2,
        "noise_probes": 1000,
        "network": {"width": 8},
        "training": {"epochs": 3, "batch_size": 4},
        "acquisition": {"n_candidates": 32},
    }
    payload.update(overrides)
    return payload


def csv_without_wall_time(path: Path):
    with open(path, newline="") as handle:
        return [row[:-1] for row in csv.reader(handle)]


class TestSummarize:
    def test_midpoint_quartiles(self):
        report = summarize([constant_trace(v, seed=i) for i, v in enumerate([1.0, 2.0, 3.0])])
        assert report.median == [2.0] * 4
        assert report.lower_quartile == [1.5] * 4
        assert report.upper_quartile == [2.5] * 4
        assert report.final_lower_quartile <= report.final_median <= report.final_upper_quartile

    def test_single_trace_is_its_own_median(self):
        trace = constant_trace(1.0)
        trace.rows[2] = TraceRow(3, (0.0,), 0.5, 0.5, 0.5, 0.0, 0.0, 2.0)
        trace.rows[3] = TraceRow(4, (0.0,), 0.7, 0.7, 0.5, 0.0, 0.0, 3.0)
        report = summarize([trace])
        assert report.median == [1.0, 1.0, 0.5, 0.5]
        assert report.wall_time_ms_total == 3.0

    def test_order_invariant(self):
        traces = [constant_trace(v, seed=i) for i, v in enumerate([4.0, 1.0, 9.0, 2.5])]
        assert summarize(traces) == summarize(list(reversed(traces)))

    def test_ragged_traces(self):
        with pytest.raises(InputError):
            summarize([constant_trace(1.0, length=3), constant_trace(1.0, length=4, seed=1)])

    def test_needs_a_trace(self):
        with pytest.raises(InputError):
            summarize([])

    def test_failed_traces_are_reported_not_summarized(self):
        failed = constant_trace(0.0, length=2, seed=7, status=RunStatus.FAILED)
        failed.error = "boom"
        report = summarize([constant_trace(1.0), failed])
        assert report.completed_seeds == [0]
        assert report.failed[0].seed == 7 and report.failed[0].rows == 2 and report.failed[0].error == "boom"
        assert report.median == [1.0] * 4

    def test_skip_and_regret(self):
        report = summarize([constant_trace(3.0)], skip=1, optimum_value=1.0)
        assert report.iterations == 3
        assert report.simple_regret_median == [2.0] * 3
        assert report.cumulative_regret_final_median == 6.0


class TestConfig:
    def test_seeds_follow_repeats(self):
        cfg = ExperimentConfig(objective="levy-2", repeats=3)
        assert cfg.seeds == [0, 1, 2]
        assert cfg.experiment_id == "levy-2-neuralbo"

    def test_default_seed_list(self):
        assert ExperimentConfig().repeats == 10

    @pytest.mark.parametrize("payload", [
        {"objective": "nope-2"},
        {"budget": 0},
        {"repeats": 2, "seeds": [1, 2, 3]},
        {"seeds": [1, 1]},
        {"exploration": {"alpha": 1.0}},
        {"unknown_field": 1},
        {"exploration": {"nu_grid": []}},
        {"exploration": {"nu_grid": [1.0, 1.0]}},
        {"exploration": {"nu_grid": [-0.5]}},
        {"exploration": {"mode": "theory", "nu_grid": [0.1, 1.0]}},
        {"optimizer": "random", "exploration": {"nu_grid": [0.1, 1.0]}},
    ])
    def test_invalid(self, payload):
        with pytest.raises(ValueError):
            ExperimentConfig(**payload)

    def test_environment_wins_over_config(self, tmp_path, monkeypatch):
        monkeypatch.delenv("NEURALBO_OUTPUT_DIR", raising=False)
        assert resolve_output_dir(tmp_path / "configured") == tmp_path / "configured"
        monkeypatch.setenv("NEURALBO_OUTPUT_DIR", str(tmp_path / "env"))
        assert resolve_output_dir(tmp_path / "configured") == tmp_path / "env"


class TestRunExperiment:
    def test_single_row_trace(self, output_dir):
        cfg = ExperimentConfig(**tiny_config(optimizer="random", budget=1, repeats=1, initial_design=0))
        report = run_experiment(cfg)
        path = output_dir / "tiny" / "random" / "seed-0.csv"
        with open(path, newline="") as handle:
            rows = list(csv.reader(handle))
        assert tuple(rows[0]) == TRACE_COLUMNS
        assert len(rows) == 2
        assert report.summaries[OptimizerKind.RANDOM].iterations == 1

    def test_persists_config_summary_and_registry(self, output_dir):
        run_experiment(ExperimentConfig(**tiny_config()))
        summary = json.loads((output_dir / "tiny" / "summary.json").read_text())
        assert summary["trace_schema"] == 1
        assert len(summary["summaries"]["neuralbo"]["median"]) == 3
        assert json.loads((output_dir / "tiny" / "config.json").read_text())["budget"] == 3
        assert (output_dir / "range_cache.json").exists()

        db = session_factory(settings.registry_url(output_dir))()
        try:
            experiment = db.query(Experiment).filter(Experiment.name == "tiny").one()
            assert sorted(run.seed for run in experiment.runs) == [0, 1]
            assert all(run.status is RunStatus.COMPLETED and run.iterations == 5 for run in experiment.runs)
        finally:
            db.close()

    def test_rerun_is_idempotent(self, output_dir):
        cfg = ExperimentConfig(**tiny_config())
        run_experiment(cfg)
        first = csv_without_wall_time(output_dir / "tiny" / "neuralbo" / "seed-1.csv")
        run_experiment(cfg)
        assert csv_without_wall_time(output_dir / "tiny" / "neuralbo" / "seed-1.csv") == first
        db = session_factory(settings.registry_url(output_dir))()
        try:
            assert db.query(Experiment).filter(Experiment.name == "tiny").count() == 1
        finally:
            db.close()

    def test_parallel_matches_serial(self, tmp_path, monkeypatch):
        monkeypatch.delenv("NEURALBO_OUTPUT_DIR", raising=False)
        serial = run_experiment(ExperimentConfig(**tiny_config()), output_dir=tmp_path / "serial")
        parallel = run_experiment(ExperimentConfig(**tiny_config(workers=2)), output_dir=tmp_path / "parallel")
        for seed in (0, 1):
            name = Path("tiny") / "neuralbo" / f"seed-{seed}.csv"
            assert csv_without_wall_time(tmp_path / "serial" / name) == csv_without_wall_time(tmp_path / "parallel" / name)
        assert serial.summaries[OptimizerKind.NEURALBO].median == parallel.summaries[OptimizerKind.NEURALBO].median

    def test_checkpoints(self, output_dir):
        run_experiment(ExperimentConfig(**tiny_config(repeats=1, save_checkpoints=True)))
        snapshot = json.loads((output_dir / "tiny" / "neuralbo" / "seed-0.network.json").read_text())
        checkpoint = json.loads((output_dir / "tiny" / "neuralbo" / "seed-0.precision.json").read_text())
        assert snapshot["shape"] == {"input_dim": 3, "depth": 2, "width": 8}
        assert checkpoint["t"] == 5
    def test_fewer_seeds_drop_stale_files(self, output_dir):
        run_experiment(ExperimentConfig(**tiny_config(repeats=3, save_checkpoints=True)))
        directory = output_dir / "tiny" / "neuralbo"
        assert (directory / "seed-2.csv").exists()
        abandoned = directory / ".seed-7.csv.k3j9.tmp"
        abandoned.write_text("iteration\n")

        run_experiment(ExperimentConfig(**tiny_config(repeats=2)))
        assert sorted(p.name for p in directory.iterdir()) == ["seed-0.csv", "seed-1.csv"]

        rebuilt = summarize_experiment(output_dir / "tiny")
        assert rebuilt.summaries[OptimizerKind.NEURALBO].completed_seeds == [0, 1]
        assert rebuilt.summaries[OptimizerKind.NEURALBO].failed == []
        db = session_factory(settings.registry_url(output_dir))()
        try:
            experiment = db.query(Experiment).filter(Experiment.name == "tiny").one()
            assert sorted(run.seed for run in experiment.runs) == [0, 1]
        finally:
            db.close()

    def test_summarize_reports_a_missing_seed(self, output_dir):
        run_experiment(ExperimentConfig(**tiny_config(optimizer="random")))
        (output_dir / "tiny" / "random" / "seed-1.csv").unlink()
        summary = summarize_experiment(output_dir / "tiny").summaries[OptimizerKind.RANDOM]
        assert summary.completed_seeds == [0]
        assert summary.failed[0].seed == 1 and summary.failed[0].error == "missing seed-1.csv"

    def test_crashing_seed_does_not_stop_the_others(self, output_dir, monkeypatch):
        def crash_on_seed_one(run, oracle):
            if run.trace.seed == 1:
                raise ZeroDivisionError("float division by zero")
            return random_step(run, oracle)

        monkeypatch.setitem(optimizer_service._STEPS, OptimizerKind.RANDOM, crash_on_seed_one)
        report = run_experiment(ExperimentConfig(**tiny_config(optimizer="random", repeats=3)))
        summary = report.summaries[OptimizerKind.RANDOM]
        assert summary.completed_seeds == [0, 2]
        assert summary.failed[0].seed == 1
        assert summary.failed[0].rows == 2
        assert summary.failed[0].error == "ZeroDivisionError: float division by zero"
        db = session_factory(settings.registry_url(output_dir))()
        try:
            runs = db.query(Experiment).filter(Experiment.name == "tiny").one().runs
            assert {run.seed: run.status for run in runs} == {
                0: RunStatus.COMPLETED, 1: RunStatus.FAILED, 2: RunStatus.COMPLETED,
            }
        finally:
            db.close()


class TestRunSuite:
    def test_optimizers_share_initial_design(self, output_dir):
        cfg = SuiteConfig(**tiny_config(name="duel", optimizers=["neuralbo", "random"]))
        report = run_suite(cfg)
        assert set(report.summaries) == {OptimizerKind.NEURALBO, OptimizerKind.RANDOM}
        assert all(len(s.median) == 3 for s in report.summaries.values())
        for seed in cfg.seeds:
            design = shared_initial_design("ackley-2", 2, cfg.master_seed, seed)
            for kind in ("neuralbo", "random"):
                trace = read_trace(output_dir / "duel" / kind / f"seed-{seed}.csv", OptimizerKind(kind), "ackley-2", seed)
                assert_array_equal(np.array([row.x for row in trace.rows[:2]]), design)

    def test_summarize_rebuilds_report(self, output_dir):
        report = run_suite(SuiteConfig(**tiny_config(name="duel")))
        (output_dir / "duel" / "summary.json").unlink()
        rebuilt = summarize_experiment(output_dir / "duel")
        for kind, summary in report.summaries.items():
            assert rebuilt.summaries[kind].median == summary.median
            assert rebuilt.summaries[kind].completed_seeds == summary.completed_seeds
        assert (output_dir / "duel" / "summary.json").exists()

class TestNuSearch:
    def test_best_nu(self):
        summaries = {nu: summarize([constant_trace(v)]) for nu, v in [(0.1, 2.0), (1.0, 0.5), (10.0, 0.5)]}
        assert best_nu(summaries) == 1.0
        assert best_nu(summaries, maximize=True) == 0.1
        assert best_nu({1.0: summarize([constant_trace(0.0, status=RunStatus.FAILED)])}) is None

    def test_grid_shares_seeds_and_designs(self, output_dir):
        grid = {"nu_grid": [0.1, 1.0, 10.0]}
        cfg = SuiteConfig(**tiny_config(name="sweep", optimizers=["neuralbo", "random"], exploration=grid))
        report = run_suite(cfg)
        search = report.nu_search
        assert search.values == [0.1, 1.0, 10.0]
        assert set(search.summaries) == {"0.1", "1.0", "10.0"}
        assert search.best in search.values
        assert report.summaries[OptimizerKind.NEURALBO] == search.summaries[repr(search.best)]
        assert set(report.summaries) == {OptimizerKind.NEURALBO, OptimizerKind.RANDOM}

        for seed in cfg.seeds:
            design = shared_initial_design("ackley-2", 2, cfg.master_seed, seed)
            for variant in ("nu-0.1", "nu-1.0", "nu-10.0"):
                path = output_dir / "sweep" / "neuralbo" / variant / f"seed-{seed}.csv"
                trace = read_trace(path, OptimizerKind.NEURALBO, "ackley-2", seed)
                assert_array_equal(np.array([row.x for row in trace.rows[:2]]), design)

        db = session_factory(settings.registry_url(output_dir))()
        try:
            runs = db.query(Experiment).filter(Experiment.name == "sweep").one().runs
            assert sorted(run.nu for run in runs if run.optimizer is OptimizerKind.NEURALBO) == [0.1, 0.1, 1.0, 1.0, 10.0, 10.0]
            assert all(run.nu is None for run in runs if run.optimizer is OptimizerKind.RANDOM)
        finally:
            db.close()

        rebuilt = summarize_experiment(output_dir / "sweep")
        assert rebuilt.nu_search.best == search.best
        assert rebuilt.summaries[OptimizerKind.NEURALBO].median == report.summaries[OptimizerKind.NEURALBO].median

    def test_dropping_the_grid_removes_its_traces(self, output_dir):
        grid = {"nu_grid": [0.1, 1.0]}
        run_experiment(ExperimentConfig(**tiny_config(repeats=1, exploration=grid)))
        assert (output_dir / "tiny" / "neuralbo" / "nu-1.0" / "seed-0.csv").exists()
        report = run_experiment(ExperimentConfig(**tiny_config(repeats=1)))
        assert report.nu_search is None
        assert sorted(p.name for p in (output_dir / "tiny" / "neuralbo").iterdir()) == ["seed-0.csv"]


class TestTraceWriter:
    def test_interrupted_write_leaves_no_file(self, tmp_path):
        path = tmp_path / "seed-0.csv"
        with pytest.raises(RuntimeError):
            with TraceWriter(path) as writer:
                writer.write(TraceRow(1, (0.5,), 1.0, 1.0, 1.0, 0.1, 1.2, 3.0))
                raise RuntimeError("interrupted")
        assert not path.exists()
        assert list(tmp_path.iterdir()) == []

    def test_values_survive_the_csv(self, tmp_path):
        row = TraceRow(1, (0.1, -2.5e-7), 1.0 / 3.0, 0.25, 0.25, float("nan"), -1e300, 3.25)
        with TraceWriter(tmp_path / "seed-3.csv") as writer:
            writer.write(row)
        trace = read_trace(tmp_path / "seed-3.csv", OptimizerKind.RANDOM, "levy-2", 3)
        restored = trace.rows[0]
        assert restored.x == row.x and restored.y_noisy == row.y_noisy and np.isnan(restored.sigma)
        assert restored.sampled_value == row.sampled_value


@pytest.mark.slow
def test_neuralbo_beats_random_search_on_ackley(output_dir):
    cfg = SuiteConfig(
        name="ackley-acceptance",
        objective="ackley-10",
        optimizers=["neuralbo", "random"],
        budget=500,
        repeats=10,
        initial_design=15,
        network={"width": 128},
        acquisition={"n_candidates": 2000},
        exploration={"nu_grid": [0.1, 1.0, 10.0]},
        workers=os.cpu_count() or 1,
    )
    report = run_suite(cfg)
    neural = report.summaries[OptimizerKind.NEURALBO]
    random = report.summaries[OptimizerKind.RANDOM]
    assert neural.completed_seeds == random.completed_seeds == list(range(10))
    assert neural.final_median < random.final_median
    assert neural.final_median < neural.median[99]
