"""NeuralBO outer loop and the comparison baselines.

Objectives are minimised by negating them internally: the surrogate, the Thompson
sample and the argmax all live on the maximisation scale, while trace rows report
values on the objective's own scale. The network never sees raw domain points, only their
encoding by encode_inputs, which bounds input norms the way the confidence analysis assumes.

Random streams of a run are derived statelessly: stream k of run seed s under master
seed M is SeedSequence(M, spawn_key=(s, k)), so adding repeats never perturbs
existing runs and every optimizer sees the same noise and initial design for a seed.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.stats import norm, qmc

from src.application.uses_cases.benchmarks.benchmark_service import NoiseModel, NoisyOracle, Objective
from src.application.uses_cases.confidence.confidence_service import (
    feature,
    initial_precision,
    nu,
    posterior_widths,
    rank_one_update,
    sigma,
)
from src.application.uses_cases.surrogate.surrogate_service import forward_batch, init_network, train
from src.core.errors import NeuralBOError, ObjectiveEvaluationError, TrainingDivergenceError
from src.domain.models import CandidateScheme, DomainKind, InitScheme, OptimizerKind, RunStatus
from src.domain.state import (
    AcquisitionConfig,
    Domain,
    Evaluation,
    ExplorationSchedule,
    NetworkShape,
    NetworkState,
    ObservationLog,
    PrecisionState,
    ProposalDiagnostics,
    RunTrace,
    TraceRow,
    TrainConfig,
)

logger = logging.getLogger(__name__)

Oracle = Callable[[np.ndarray], Evaluation]
RowCallback = Callable[[TraceRow], None]

STREAM_NETWORK = 0
STREAM_CANDIDATES = 1
STREAM_NOISE = 2
STREAM_TRAINING = 3
STREAM_DESIGN = 4
STREAM_PERTURBATION = 5


def stream_seed(master_seed: int, seed: int, stream: int, *extra: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(seed, stream, *extra))


@dataclass
class RunStreams:
    network: np.random.SeedSequence
    candidates: np.random.Generator
    noise: np.random.Generator
    training: np.random.Generator
    design: np.random.Generator
    perturbation: np.random.Generator

    @classmethod
    def derive(cls, master_seed: int, seed: int, acquisition_stream: int = 0) -> "RunStreams":
        def rng(stream, *extra):
            return np.random.default_rng(stream_seed(master_seed, seed, stream, *extra))

        return cls(
            network=stream_seed(master_seed, seed, STREAM_NETWORK),
            candidates=rng(STREAM_CANDIDATES, acquisition_stream),
            noise=rng(STREAM_NOISE),
            training=rng(STREAM_TRAINING),
            design=rng(STREAM_DESIGN),
            perturbation=rng(STREAM_PERTURBATION),
        )


@dataclass(frozen=True)
class RunConfig:
    budget: int
    width: int = 128
    depth: int = 2
    init_scheme: InitScheme = InitScheme.HE_THEORY
    train: TrainConfig = field(default_factory=TrainConfig)
    exploration: ExplorationSchedule = field(default_factory=ExplorationSchedule)
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    initial_design: int = 15
    warm_start: bool = False
    maximize: bool = False
    # sd of the target perturbation used by NeuralGreedy
    perturbation: float = 1.0
    noise: NoiseModel = field(default_factory=NoiseModel)
    master_seed: int = 0

    @property
    def lam(self) -> float:
        return self.train.lam

    @property
    def sign(self) -> float:
        return 1.0 if self.maximize else -1.0


@dataclass
class RunState:
    kind: OptimizerKind
    config: RunConfig
    domain: Domain
    net: NetworkState
    precision: PrecisionState | None
    log: ObservationLog
    trace: RunTrace
    streams: RunStreams
    started: float
    on_row: RowCallback | None = None

    @property
    def iteration(self) -> int:
        return len(self.trace)


def sample_candidates(
    domain: Domain,
    n: int,
    rng: np.random.Generator,
    scheme: CandidateScheme = CandidateScheme.UNIFORM,
) -> np.ndarray:
    """n points inside the domain, uniform or scrambled-Sobol."""
    d = domain.dim
    width = d if domain.kind is DomainKind.HYPER_RECTANGLE else d + 1
    if scheme is CandidateScheme.SOBOL:
        sampler = qmc.Sobol(width, scramble=True, seed=rng)
        U = sampler.random_base2(max(0, math.ceil(math.log2(n))))[:n]
    else:
        U = rng.random((n, width))
    if domain.kind is DomainKind.HYPER_RECTANGLE:
        return np.clip(domain.lower + U * (domain.upper - domain.lower), domain.lower, domain.upper)
    # direction from Gaussian quantiles, radius with density proportional to r^(d-1)
    directions = norm.ppf(np.clip(U[:, :d], 1e-12, 1.0 - 1e-12))
    lengths = np.linalg.norm(directions, axis=1, keepdims=True)
    directions = np.divide(directions, lengths, out=np.full_like(directions, 1.0 / math.sqrt(d)), where=lengths > 0)
    a, b = domain.inner_radius, domain.outer_radius
    ratio = (a / b) ** d
    radii = b * (ratio + U[:, d] * (1.0 - ratio)) ** (1.0 / d)
    return directions * np.clip(radii, a, b)[:, None]


def surrogate_dim(domain: Domain) -> int:
    return domain.dim + 1 if domain.kind is DomainKind.HYPER_RECTANGLE else domain.dim


def encode_inputs(domain: Domain, X) -> np.ndarray:
    """Map domain points into the network input space.

    Boxes go affinely onto [-1, 1]^d / sqrt(d), gain a constant coordinate 1 and are
    scaled by 1/sqrt(2), so encoded norms lie in [1/sqrt(2), 1]. Annuli are divided by
    the outer radius.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if domain.kind is DomainKind.NORM_ANNULUS:
        return X / domain.outer_radius
    centred = (2.0 * (X - domain.lower) / (domain.upper - domain.lower) - 1.0) / math.sqrt(domain.dim)
    return np.hstack([centred, np.ones((X.shape[0], 1))]) / math.sqrt(2.0)


def propose(
    net: NetworkState,
    state: PrecisionState,
    sched: ExplorationSchedule,
    domain: Domain,
    acq: AcquisitionConfig,
    rng: np.random.Generator,
    candidates: np.ndarray | None = None,
) -> tuple[np.ndarray, ProposalDiagnostics]:
    """Thompson sample f~(x) ~ N(h(x; theta_{t-1}), nu^2 sigma_t^2(x)) per candidate; return the argmax.

    Ties go to the lowest candidate index.
    """
    if candidates is None:
        candidates = sample_candidates(domain, acq.n_candidates, rng, acq.scheme)
    encoded = encode_inputs(domain, candidates)
    means = forward_batch(net, encoded)
    if not np.all(np.isfinite(means)):
        raise TrainingDivergenceError(-1, "surrogate produced non-finite means")
    widths = posterior_widths(net, state, encoded)
    z = rng.standard_normal(candidates.shape[0])
    samples = means + nu(sched, state.lam) * widths * z
    index = int(np.argmax(samples))
    diagnostics = ProposalDiagnostics(index, float(means[index]), float(widths[index]), float(samples[index]), candidates.shape[0])
    logger.debug("proposal %d/%d: mean %.4g sigma %.4g sample %.4g", index, candidates.shape[0], *diagnostics[1:4])
    return candidates[index].copy(), diagnostics


def start_run(
    kind: OptimizerKind,
    config: RunConfig,
    domain: Domain,
    objective_key: str,
    seed: int,
    on_row: RowCallback | None = None,
) -> RunState:
    streams = RunStreams.derive(config.master_seed, seed, config.acquisition.stream)
    shape = NetworkShape(surrogate_dim(domain), config.depth, config.width)
    net = init_network(shape, streams.network, config.init_scheme)
    precision = initial_precision(shape.num_params, config.lam, shape.width) if kind is OptimizerKind.NEURALBO else None
    trace = RunTrace(kind, objective_key, seed, config.maximize)
    return RunState(kind, config, domain, net, precision, ObservationLog.empty(domain.dim), trace, streams, time.perf_counter(), on_row)


def _observe(run: RunState, x: np.ndarray, oracle: Oracle, width: float, sampled: float) -> RunState:
    try:
        evaluation = oracle(x)
    except Exception as exc:
        raise ObjectiveEvaluationError(run.iteration + 1, exc) from exc
    log = run.log.append(x, run.config.sign * evaluation.noisy)
    precision = run.precision
    if precision is not None:
        precision = rank_one_update(precision, feature(run.net, encode_inputs(run.domain, x)[0]))
    row = TraceRow(
        iteration=run.iteration + 1,
        x=tuple(float(v) for v in x),
        y_noisy=float(evaluation.noisy),
        f_true=float(evaluation.true),
        best_true=float(run.trace.incumbent(evaluation.true)),
        sigma=float(width),
        sampled_value=float(sampled),
        elapsed_ms=(time.perf_counter() - run.started) * 1000.0,
    )
    run.trace.rows.append(row)
    if run.on_row is not None:
        run.on_row(row)
    return replace(run, log=log, precision=precision)


def _retrain(run: RunState, perturb: bool = False) -> RunState:
    start = run.net if run.config.warm_start else run.net.at_anchor()
    log = run.log
    if perturb and run.config.perturbation > 0.0:
        noise = run.config.perturbation * run.streams.perturbation.standard_normal(len(log))
        log = ObservationLog(log.inputs, log.targets + noise)
    log = ObservationLog(encode_inputs(run.domain, log.inputs), log.targets)
    return replace(run, net=train(start, log, run.config.train, rng=run.streams.training))


def initial_design_points(domain: Domain, n: int, rng: np.random.Generator) -> np.ndarray:
    return sample_candidates(domain, n, rng) if n > 0 else np.empty((0, domain.dim))


def seed_initial_design(run: RunState, oracle: Oracle, points: np.ndarray) -> RunState:
    """Evaluate the initial design, then fit the surrogate once."""
    for x in points:
        width = sigma(run.precision, feature(run.net, encode_inputs(run.domain, x)[0])) if run.precision is not None else math.nan
        run = _observe(run, np.asarray(x, dtype=np.float64), oracle, width, math.nan)
    if len(points) and run.kind is not OptimizerKind.RANDOM:
        run = _retrain(run, perturb=run.kind is OptimizerKind.NEURAL_GREEDY)
    return run


def step(run: RunState, oracle: Oracle) -> RunState:
    """One NeuralBO iteration: propose, evaluate, log, retrain, update U."""
    cfg = run.config
    x, diagnostics = propose(run.net, run.precision, cfg.exploration, run.domain, cfg.acquisition, run.streams.candidates)
    run = _observe(run, x, oracle, diagnostics.sigma, cfg.sign * diagnostics.sample)
    return _retrain(run)


def greedy_step(run: RunState, oracle: Oracle) -> RunState:
    """NeuralGreedy: argmax of the surrogate trained on perturbed targets."""
    cfg = run.config
    candidates = sample_candidates(run.domain, cfg.acquisition.n_candidates, run.streams.candidates, cfg.acquisition.scheme)
    means = forward_batch(run.net, encode_inputs(run.domain, candidates))
    if not np.all(np.isfinite(means)):
        raise TrainingDivergenceError(-1, "surrogate produced non-finite means")
    index = int(np.argmax(means))
    run = _observe(run, candidates[index], oracle, math.nan, cfg.sign * float(means[index]))
    return _retrain(run, perturb=True)


def random_step(run: RunState, oracle: Oracle) -> RunState:
    x = sample_candidates(run.domain, 1, run.streams.candidates)[0]
    return _observe(run, x, oracle, math.nan, math.nan)


_STEPS = {
    OptimizerKind.NEURALBO: step,
    OptimizerKind.NEURAL_GREEDY: greedy_step,
    OptimizerKind.RANDOM: random_step,
}


def run_optimizer(
    kind: OptimizerKind,
    config: RunConfig,
    objective: Objective,
    seed: int,
    initial_points: np.ndarray | None = None,
    oracle: Oracle | None = None,
    on_row: RowCallback | None = None,
    on_finish: Callable[[RunState], None] | None = None,
) -> RunTrace:
    """Initial design followed by config.budget iterations; failures keep the partial trace."""
    if config.budget < 1:
        raise NeuralBOError("budget must be at least 1")
    run = start_run(kind, config, objective.domain, objective.key, seed, on_row)
    oracle = oracle or NoisyOracle(objective, config.noise, run.streams.noise)
    if initial_points is None:
        initial_points = initial_design_points(objective.domain, config.initial_design, run.streams.design)
    advance = _STEPS[kind]
    logger.info("%s on %s, seed %d: %d initial points, budget %d", kind.value, objective.key, seed, len(initial_points), config.budget)
    try:
        run = seed_initial_design(run, oracle, initial_points)
        for _ in range(config.budget):
            run = advance(run, oracle)
    except NeuralBOError as exc:
        run.trace.status = RunStatus.FAILED
        run.trace.error = str(exc)
        logger.warning("%s seed %d aborted after %d rows: %s", kind.value, seed, len(run.trace), exc)
    except Exception as exc:
        run.trace.status = RunStatus.FAILED
        run.trace.error = f"{type(exc).__name__}: {exc}"
        logger.exception("%s seed %d crashed after %d rows", kind.value, seed, len(run.trace))
    if on_finish is not None:
        on_finish(run)
    return run.trace


def run_neuralbo(config: RunConfig, objective: Objective, seed: int, **kwargs) -> RunTrace:
    return run_optimizer(OptimizerKind.NEURALBO, config, objective, seed, **kwargs)


def run_neural_greedy(config: RunConfig, objective: Objective, seed: int, **kwargs) -> RunTrace:
    return run_optimizer(OptimizerKind.NEURAL_GREEDY, config, objective, seed, **kwargs)


def run_random_search(config: RunConfig, objective: Objective, seed: int, **kwargs) -> RunTrace:
    return run_optimizer(OptimizerKind.RANDOM, config, objective, seed, **kwargs)
