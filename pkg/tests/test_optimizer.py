import dataclasses

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from src.application.uses_cases.benchmarks.benchmark_service import NoiseModel, get_objective
from src.application.uses_cases.confidence.confidence_service import feature, initial_precision, sigma
from src.application.uses_cases.optimizer import optimizer_service
from src.application.uses_cases.optimizer.optimizer_service import (
    RunConfig,
    greedy_step,
    propose,
    run_neural_greedy,
    run_neuralbo,
    run_optimizer,
    run_random_search,
    encode_inputs,
    sample_candidates,
    seed_initial_design,
    start_run,
    step,
)
from src.application.uses_cases.surrogate.surrogate_service import forward_batch, train
from src.domain.models import CandidateScheme, InitScheme, OptimizerKind, RunStatus, TrainMode
from src.domain.state import (
    AcquisitionConfig,
    Domain,
    Evaluation,
    ExplorationSchedule,
    ObservationLog,
    TrainConfig,
)


def small_config(**overrides) -> RunConfig:
    base = RunConfig(
        budget=5,
        width=16,
        train=TrainConfig(epochs=5, batch_size=8),
        acquisition=AcquisitionConfig(n_candidates=64),
        initial_design=3,
    )
    return dataclasses.replace(base, **overrides)


def without_wall_time(trace) -> np.ndarray:
    return np.array([
        [row.iteration, *row.x, row.y_noisy, row.f_true, row.best_true, row.sigma, row.sampled_value]
        for row in trace.rows
    ])


class TestCandidates:
    @pytest.mark.parametrize("scheme", list(CandidateScheme))
    def test_box_containment(self, scheme):
        domain = Domain.box([-1.0, 0.0, 2.0], [1.0, 0.5, 3.0])
        X = sample_candidates(domain, 100, np.random.default_rng(0), scheme)
        assert X.shape == (100, 3)
        assert all(domain.contains(x) for x in X)

    @pytest.mark.parametrize("scheme", list(CandidateScheme))
    def test_annulus_containment(self, scheme):
        domain = Domain.annulus(4, 0.5, 2.0)
        X = sample_candidates(domain, 100, np.random.default_rng(1), scheme)
        norms = np.linalg.norm(X, axis=1)
        assert np.all(norms >= 0.5 - 1e-12) and np.all(norms <= 2.0 + 1e-12)

    def test_encoded_norms_are_bounded(self):
        box = Domain.box([-32.0, 0.0], [32.0, 1.0])
        X = sample_candidates(box, 200, np.random.default_rng(3))
        norms = np.linalg.norm(encode_inputs(box, X), axis=1)
        assert encode_inputs(box, X).shape == (200, 3)
        assert np.all(norms >= 1.0 / np.sqrt(2.0) - 1e-12) and np.all(norms <= 1.0 + 1e-12)
        annulus = Domain.annulus(3, 1.0, 4.0)
        norms = np.linalg.norm(encode_inputs(annulus, sample_candidates(annulus, 50, np.random.default_rng(4))), axis=1)
        assert np.all(norms >= 0.25 - 1e-12) and np.all(norms <= 1.0 + 1e-12)

    def test_unit_sphere(self):
        X = sample_candidates(Domain.annulus(3, 1.0, 1.0), 20, np.random.default_rng(2))
        assert np.allclose(np.linalg.norm(X, axis=1), 1.0)


class TestPropose:
    def setup_method(self):
        self.domain = Domain.box(-np.ones(2), np.ones(2))
        self.acq = AcquisitionConfig(n_candidates=50)

    def test_first_round_is_pure_exploration(self, make_net):
        net = make_net(d=3, width=16, scheme=InitScheme.HE_THEORY)
        state = initial_precision(net.shape.num_params, 0.5, net.shape.width)
        x, diagnostics = propose(net, state, ExplorationSchedule(), self.domain, self.acq, np.random.default_rng(0))
        assert diagnostics.mean == 0.0
        assert diagnostics.sigma == pytest.approx(np.linalg.norm(feature(net, encode_inputs(self.domain, x)[0])))
        assert diagnostics.n_candidates == 50
        assert self.domain.contains(x)

    def test_zero_scale_ties_go_to_first_candidate(self, make_net):
        net = make_net(d=3, width=16, scheme=InitScheme.HE_THEORY)
        state = initial_precision(net.shape.num_params, 0.5, net.shape.width)
        candidates = sample_candidates(self.domain, 10, np.random.default_rng(1))
        x, diagnostics = propose(net, state, ExplorationSchedule(value=0.0), self.domain, self.acq,
                                 np.random.default_rng(2), candidates=candidates)
        assert diagnostics.index == 0
        assert_array_equal(x, candidates[0])

    def test_zero_scale_picks_surrogate_argmax(self, make_net):
        net = make_net(d=3, width=16, scheme=InitScheme.HE_THEORY)
        X = np.random.default_rng(3).uniform(-1, 1, size=(10, 2))
        log = ObservationLog(encode_inputs(self.domain, X), np.sin(3 * X[:, 0]) + X[:, 1])
        net = train(net, log, TrainConfig(steps=100, learning_rate=0.001, mode=TrainMode.FULL_BATCH))
        state = initial_precision(net.shape.num_params, 0.5, net.shape.width)
        candidates = sample_candidates(self.domain, 200, np.random.default_rng(4))
        x, diagnostics = propose(net, state, ExplorationSchedule(value=0.0), self.domain, self.acq,
                                 np.random.default_rng(5), candidates=candidates)
        assert diagnostics.index == int(np.argmax(forward_batch(net, encode_inputs(self.domain, candidates))))
        assert_array_equal(x, candidates[diagnostics.index])

    def test_deterministic_given_stream(self, make_net):
        net = make_net(d=3, width=16)
        state = initial_precision(net.shape.num_params, 0.5, net.shape.width)
        first = propose(net, state, ExplorationSchedule(), self.domain, self.acq, np.random.default_rng(6))
        second = propose(net, state, ExplorationSchedule(), self.domain, self.acq, np.random.default_rng(6))
        assert_array_equal(first[0], second[0])
        assert first[1] == second[1]


class TestStep:
    def test_bookkeeping_and_shrinking_width(self):
        objective = get_objective("levy-2")
        cfg = small_config()
        run = start_run(OptimizerKind.NEURALBO, cfg, objective.domain, objective.key, seed=0)
        oracle = lambda x: Evaluation(float(objective.function(x[None, :])[0]), float(objective.function(x[None, :])[0]))
        run = seed_initial_design(run, oracle, sample_candidates(objective.domain, 3, np.random.default_rng(0)))
        assert len(run.log) == run.precision.count == len(run.trace) == 3

        before = run.precision
        after = step(run, oracle)
        assert len(after.log) == after.precision.count == len(after.trace) == 4
        x_t = np.array(after.trace.rows[-1].x)
        phi = feature(after.net, encode_inputs(objective.domain, x_t)[0])
        assert sigma(after.precision, phi) <= sigma(before, phi)
        assert after.trace.rows[-1].sigma == pytest.approx(sigma(before, phi))

    def test_greedy_without_perturbation_matches_greedy_thompson(self):
        objective = get_objective("ackley-2")
        cfg = small_config(perturbation=0.0, exploration=ExplorationSchedule(value=0.0))
        oracle = lambda x: Evaluation(float(objective.function(x[None, :])[0]), float(objective.function(x[None, :])[0]))
        design = sample_candidates(objective.domain, 3, np.random.default_rng(0))
        thompson = seed_initial_design(start_run(OptimizerKind.NEURALBO, cfg, objective.domain, objective.key, 4), oracle, design)
        greedy = seed_initial_design(start_run(OptimizerKind.NEURAL_GREEDY, cfg, objective.domain, objective.key, 4), oracle, design)
        assert_array_equal(thompson.net.flat(), greedy.net.flat())
        assert step(thompson, oracle).trace.rows[-1].x == greedy_step(greedy, oracle).trace.rows[-1].x


class TestRuns:
    def test_single_iteration_without_initial_design(self):
        trace = run_neuralbo(small_config(budget=1, initial_design=0), get_objective("ackley-2"), seed=0)
        assert len(trace) == 1
        assert trace.status is RunStatus.COMPLETED

    @pytest.mark.parametrize("runner", [run_neuralbo, run_neural_greedy, run_random_search])
    def test_trace_shape_and_monotone_incumbent(self, runner):
        objective = get_objective("levy-2")
        trace = runner(small_config(noise=NoiseModel(0.5)), objective, seed=1)
        assert len(trace) == 3 + 5
        best = trace.best_values
        assert np.all(np.diff(best) <= 0)
        assert best[-1] == min(row.f_true for row in trace.rows)
        assert all(objective.domain.contains(np.array(row.x)) for row in trace.rows)

    def test_maximization_incumbent(self):
        trace = run_random_search(small_config(maximize=True), get_objective("michalewicz-2"), seed=2)
        assert np.all(np.diff(trace.best_values) >= 0)

    @pytest.mark.parametrize("runner", [run_neuralbo, run_neural_greedy, run_random_search])
    def test_same_seed_same_trace(self, runner):
        objective = get_objective("ackley-2")
        cfg = small_config(noise=NoiseModel(0.1))
        assert_array_equal(without_wall_time(runner(cfg, objective, seed=3)), without_wall_time(runner(cfg, objective, seed=3)))

    def test_different_seeds_differ(self):
        objective = get_objective("ackley-2")
        first = without_wall_time(run_random_search(small_config(), objective, 0))
        second = without_wall_time(run_random_search(small_config(), objective, 1))
        assert not np.array_equal(first, second, equal_nan=True)

    def test_baseline_columns(self):
        objective = get_objective("ackley-2")
        random_trace = run_random_search(small_config(initial_design=0), objective, seed=0)
        assert all(np.isnan(row.sigma) and np.isnan(row.sampled_value) for row in random_trace.rows)
        greedy_trace = run_neural_greedy(small_config(initial_design=0), objective, seed=0)
        assert all(np.isnan(row.sigma) and np.isfinite(row.sampled_value) for row in greedy_trace.rows)

    def test_shared_initial_design_is_used(self):
        objective = get_objective("ackley-2")
        design = sample_candidates(objective.domain, 3, np.random.default_rng(11))
        for runner in (run_neuralbo, run_random_search):
            trace = runner(small_config(), objective, seed=0, initial_points=design)
            assert [row.x for row in trace.rows[:3]] == [tuple(x) for x in design]

    def test_failed_objective_keeps_partial_trace(self):
        objective = get_objective("ackley-2")
        calls = []

        def flaky(x):
            calls.append(x)
            if len(calls) > 4:
                raise RuntimeError("simulator crashed")
            value = float(objective.function(x[None, :])[0])
            return Evaluation(value, value)

        trace = run_optimizer(OptimizerKind.NEURALBO, small_config(), objective, seed=0, oracle=flaky)
        assert trace.status is RunStatus.FAILED
        assert len(trace) == 4
        assert "iteration 5" in trace.error

    def test_rows_stream_as_they_are_produced(self):
        rows = []
        trace = run_random_search(small_config(), get_objective("levy-2"), seed=0, on_row=rows.append)
        assert rows == trace.rows

    def test_unexpected_error_is_recorded_as_failure(self, monkeypatch):
        def broken_train(*args, **kwargs):
            raise ValueError("bad weights")

        monkeypatch.setattr(optimizer_service, "train", broken_train)
        finished = []
        trace = run_optimizer(OptimizerKind.NEURALBO, small_config(), get_objective("ackley-2"), seed=0,
                              on_finish=finished.append)
        assert trace.status is RunStatus.FAILED
        assert trace.error == "ValueError: bad weights"
        assert len(trace) == 3
        assert len(finished) == 1
