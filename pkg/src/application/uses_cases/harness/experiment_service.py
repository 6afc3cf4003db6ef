"""Seed fan-out, persistence and summary statistics for experiments and comparison suites."""
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from sqlalchemy.orm import Session

from src.application.uses_cases.benchmarks.benchmark_service import (
    NoiseModel,
    export_range_cache,
    get_objective,
    load_range_cache,
    noise_model,
)
from src.application.uses_cases.confidence.confidence_service import to_checkpoint
from src.application.uses_cases.optimizer.optimizer_service import (
    STREAM_DESIGN,
    RunConfig,
    RunState,
    initial_design_points,
    run_optimizer,
    stream_seed,
)
from src.application.uses_cases.surrogate.surrogate_service import theory_schedule, to_snapshot
from src.core.config import resolve_output_dir, settings
from src.core.errors import InputError
from src.domain.models import Experiment, OptimizerKind, Run, RunStatus, StepSchedule
from src.domain.state import AcquisitionConfig, ExplorationSchedule, RunTrace, TrainConfig
from src.infrastructure.database import session_factory
from src.infrastructure.trace_store import TRACE_SCHEMA_VERSION, TraceStore, TraceWriter, finite_or_none, write_json
from src.interface.schemas.experiments import (
    ExperimentConfig,
    ExperimentReport,
    FailedRun,
    NuSearchReport,
    SuiteConfig,
    SummaryReport,
)

logger = logging.getLogger(__name__)

QUANTILES = (25.0, 50.0, 75.0)


def _quartiles(values: np.ndarray) -> np.ndarray:
    """25/50/75 percentiles along axis 0; ties at even counts take the midpoint."""
    return np.percentile(values, QUANTILES, axis=0, method="midpoint")


def summarize(
    traces: Sequence[RunTrace],
    skip: int = 0,
    optimum_value: float | None = None,
) -> SummaryReport:
    """Median and interquartile band of best-so-far over the completed traces.

    skip drops leading rows (the initial design) from the curves; best-so-far still
    carries the incumbent found there.
    """
    if not traces:
        raise InputError("summarize needs at least one trace")
    completed = sorted((t for t in traces if t.status is RunStatus.COMPLETED), key=lambda t: t.seed)
    failed = sorted(
        (FailedRun(seed=t.seed, rows=len(t), error=t.error) for t in traces if t.status is not RunStatus.COMPLETED),
        key=lambda f: f.seed,
    )
    optimizer = traces[0].optimizer
    if not completed:
        return SummaryReport(
            optimizer=optimizer, completed_seeds=[], failed=failed, iterations=0,
            median=[], lower_quartile=[], upper_quartile=[],
        )
    lengths = {len(t) for t in completed}
    if len(lengths) != 1:
        raise InputError(f"traces have unequal lengths {sorted(lengths)}")
    best = np.stack([t.best_values[skip:] for t in completed])
    lower, median, upper = _quartiles(best)
    final = best[:, -1]
    final_q = _quartiles(final)
    wall = np.array([t.rows[-1].elapsed_ms for t in completed])
    report = SummaryReport(
        optimizer=optimizer,
        completed_seeds=[t.seed for t in completed],
        failed=failed,
        iterations=best.shape[1],
        median=median.tolist(),
        lower_quartile=lower.tolist(),
        upper_quartile=upper.tolist(),
        final_median=float(final_q[1]),
        final_lower_quartile=float(final_q[0]),
        final_upper_quartile=float(final_q[2]),
        final_mean=float(final.mean()),
        final_best=float(final.max() if completed[0].maximize else final.min()),
        final_worst=float(final.min() if completed[0].maximize else final.max()),
        wall_time_ms_total=float(wall.sum()),
        wall_time_ms_max=float(wall.max()),
    )
    if optimum_value is not None:
        simple = np.abs(best - optimum_value)
        true_values = np.stack([[row.f_true for row in t.rows[skip:]] for t in completed])
        cumulative = np.abs(true_values - optimum_value).sum(axis=1)
        regret_q = _quartiles(cumulative)
        report.simple_regret_median = np.percentile(simple, 50.0, axis=0, method="midpoint").tolist()
        report.cumulative_regret_final_lower_quartile = float(regret_q[0])
        report.cumulative_regret_final_median = float(regret_q[1])
        report.cumulative_regret_final_upper_quartile = float(regret_q[2])
    return report


def build_run_config(cfg: ExperimentConfig, noise: NoiseModel) -> RunConfig:
    """Translate the experiment document into the optimizer's run configuration."""
    if cfg.training.schedule is StepSchedule.THEORY:
        train_cfg = theory_schedule(cfg.budget, cfg.network.depth, cfg.network.width, cfg.exploration.alpha).to_train_config()
    else:
        train_cfg = TrainConfig(
            steps=cfg.training.steps,
            learning_rate=cfg.training.learning_rate,
            lam=1.0 + 1.0 / cfg.budget if cfg.theory_lambda else cfg.lam,
            mode=cfg.training.mode,
            batch_size=cfg.training.batch_size,
            epochs=cfg.training.epochs,
        )
    exploration = ExplorationSchedule(
        mode=cfg.exploration.mode,
        rkhs_bound=cfg.exploration.rkhs_bound,
        noise_scale=noise.sd if cfg.exploration.noise_scale is None else cfg.exploration.noise_scale,
        alpha=cfg.exploration.alpha,
        value=cfg.exploration.nu,
    )
    return RunConfig(
        budget=cfg.budget,
        width=cfg.network.width,
        depth=cfg.network.depth,
        init_scheme=cfg.network.init_scheme,
        train=train_cfg,
        exploration=exploration,
        acquisition=AcquisitionConfig(cfg.acquisition.n_candidates, cfg.acquisition.scheme, cfg.acquisition.stream),
        initial_design=cfg.initial_design,
        warm_start=cfg.training.warm_start,
        maximize=cfg.maximize,
        perturbation=cfg.perturbation,
        noise=noise,
        master_seed=cfg.master_seed,
    )


def shared_initial_design(objective_id: str, n: int, master_seed: int, seed: int) -> np.ndarray:
    """The initial design every optimizer of a suite receives for one seed."""
    rng = np.random.default_rng(stream_seed(master_seed, seed, STREAM_DESIGN))
    return initial_design_points(get_objective(objective_id).domain, n, rng)


def nu_variant(nu: float | None) -> str | None:
    """Directory label of one exploration scale of a swept run."""
    return None if nu is None else f"nu-{float(nu)!r}"


def plan_runs(cfg: ExperimentConfig) -> list[tuple[OptimizerKind, float | None]]:
    """(optimizer, nu) pairs of an experiment; only NeuralBO fans out over the nu grid."""
    grid = cfg.exploration.nu_grid
    plan = []
    for kind in cfg.optimizer_kinds:
        if kind is OptimizerKind.NEURALBO and grid:
            plan.extend((kind, float(value)) for value in grid)
        else:
            plan.append((kind, None))
    return plan


def best_nu(summaries: dict[float, SummaryReport], maximize: bool = False) -> float | None:
    """The scale with the best final median; ties keep the earlier grid value."""
    scored = [(nu, s.final_median) for nu, s in summaries.items() if s.final_median is not None]
    if not scored:
        return None
    pick = max if maximize else min
    return pick(scored, key=lambda item: item[1])[0]


@dataclass(frozen=True)
class RunTask:
    kind: OptimizerKind
    config: RunConfig
    objective: str
    seed: int
    initial_points: np.ndarray
    trace_path: Path
    nu: float | None = None
    network_path: Path | None = None
    precision_path: Path | None = None

    @property
    def paths(self) -> list[Path]:
        return [p for p in (self.trace_path, self.network_path, self.precision_path) if p is not None]


def _with_nu(config: RunConfig, nu: float | None) -> RunConfig:
    if nu is None:
        return config
    return replace(config, exploration=replace(config.exploration, value=nu))


def _write_checkpoints(task: RunTask, run: RunState) -> None:
    if task.network_path is not None:
        write_json(task.network_path, to_snapshot(run.net))
    if task.precision_path is not None and run.precision is not None:
        write_json(task.precision_path, to_checkpoint(run.precision))


def execute_task(task: RunTask) -> RunTrace:
    """Run one (optimizer, seed), streaming rows into its trace file."""
    objective = get_objective(task.objective)
    on_finish = (lambda run: _write_checkpoints(task, run)) if task.network_path is not None else None
    with TraceWriter(task.trace_path) as writer:
        trace = run_optimizer(
            task.kind,
            task.config,
            objective,
            task.seed,
            initial_points=task.initial_points,
            on_row=writer.write,
            on_finish=on_finish,
        )
    logger.info("%s seed %d: %s, %d rows -> %s", task.kind.value, task.seed, trace.status.value, len(trace), task.trace_path)
    return trace


def _execute_all(tasks: list[RunTask], workers: int) -> list[RunTrace]:
    if workers <= 1 or len(tasks) <= 1:
        return [execute_task(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(execute_task, tasks))


def record_experiment(db: Session, report: ExperimentReport, runs: Sequence[tuple[RunTask, RunTrace]]) -> Experiment:
    """Replace the registry rows of an experiment with the latest results."""
    existing = db.query(Experiment).filter(Experiment.name == report.experiment).first()
    if existing:
        db.delete(existing)
        db.flush()
    experiment = Experiment(
        name=report.experiment,
        objective=report.objective,
        budget=report.budget,
        initial_design=report.initial_design,
        master_seed=report.master_seed,
        trace_schema=report.trace_schema,
    )
    for task, trace in runs:
        experiment.runs.append(
            Run(
                optimizer=trace.optimizer,
                seed=trace.seed,
                nu=task.nu,
                status=trace.status,
                iterations=len(trace),
                final_best=finite_or_none(trace.rows[-1].best_true) if trace.rows else None,
                trace_path=str(task.trace_path),
                error=trace.error,
            )
        )
    db.add(experiment)
    db.commit()
    db.refresh(experiment)
    return experiment


def _noise_for(cfg: ExperimentConfig, store: TraceStore) -> NoiseModel:
    load_range_cache(store.load_range_cache())
    if cfg.noise_fraction <= 0:
        return NoiseModel()
    return noise_model(get_objective(cfg.objective), cfg.noise, cfg.noise_fraction, cfg.noise_probes)


def _build_report(
    cfg: ExperimentConfig,
    noise: NoiseModel,
    groups: dict[tuple[OptimizerKind, float | None], list[RunTrace]],
) -> ExperimentReport:
    objective = get_objective(cfg.objective)
    summaries, swept = {}, {}
    for (kind, nu), traces in groups.items():
        summary = summarize(traces, skip=cfg.initial_design, optimum_value=objective.optimum_value)
        for failure in summary.failed:
            logger.warning("%s seed %d failed after %d rows: %s", kind.value, failure.seed, failure.rows, failure.error)
        if nu is None:
            summaries[kind] = summary
        else:
            swept[nu] = summary
    nu_search = None
    if swept:
        best = best_nu(swept, cfg.maximize)
        summaries[OptimizerKind.NEURALBO] = swept[best if best is not None else next(iter(swept))]
        nu_search = NuSearchReport(
            values=list(swept),
            best=best,
            summaries={repr(nu): summary for nu, summary in swept.items()},
        )
        logger.info("nu grid %s: best %s", list(swept), best)
    return ExperimentReport(
        experiment=cfg.experiment_id,
        objective=objective.key,
        optimum_value=objective.optimum_value,
        maximize=cfg.maximize,
        budget=cfg.budget,
        initial_design=cfg.initial_design,
        master_seed=cfg.master_seed,
        seeds=list(cfg.seeds),
        noise_sd=noise.sd,
        trace_schema=TRACE_SCHEMA_VERSION,
        summaries={kind: summaries[kind] for kind in cfg.optimizer_kinds},
        nu_search=nu_search,
    )


def _run(cfg: ExperimentConfig, output_dir: Path | None, db: Session | None) -> ExperimentReport:
    root = resolve_output_dir(output_dir or cfg.output_dir)
    store = TraceStore(root)
    name = cfg.experiment_id

    noise = _noise_for(cfg, store)
    store.save_range_cache(export_range_cache())
    run_config = build_run_config(cfg, noise)
    store.save_config(name, cfg.model_dump(mode="json"))
    plan = plan_runs(cfg)
    logger.info(
        "experiment %s: %s on %s, %d seeds, budget %d, noise sd %.4g",
        name, "/".join(k.value for k in cfg.optimizer_kinds), cfg.objective, len(cfg.seeds), cfg.budget, noise.sd,
    )

    designs = {seed: shared_initial_design(cfg.objective, cfg.initial_design, cfg.master_seed, seed) for seed in cfg.seeds}
    tasks = []
    for kind, nu in plan:
        variant = nu_variant(nu)
        for seed in cfg.seeds:
            tasks.append(RunTask(
                kind=kind,
                config=_with_nu(run_config, nu),
                objective=cfg.objective,
                seed=seed,
                initial_points=designs[seed],
                trace_path=store.trace_path(name, kind, seed, variant),
                nu=nu,
                network_path=store.network_path(name, kind, seed, variant) if cfg.save_checkpoints else None,
                precision_path=store.precision_path(name, kind, seed, variant) if cfg.save_checkpoints else None,
            ))
    store.prune(name, [path for task in tasks for path in task.paths])
    traces = _execute_all(tasks, cfg.workers)

    groups = {}
    for task, trace in zip(tasks, traces):
        groups.setdefault((task.kind, task.nu), []).append(trace)
    report = _build_report(cfg, noise, groups)
    store.save_summary(name, report.model_dump(mode="json"))

    runs = list(zip(tasks, traces))
    if db is None:
        db = session_factory(settings.registry_url(root))()
        try:
            record_experiment(db, report, runs)
        finally:
            db.close()
    else:
        record_experiment(db, report, runs)
    return report


def run_experiment(cfg: ExperimentConfig, output_dir: Path | None = None, db: Session | None = None) -> ExperimentReport:
    """Run every seed of cfg, persist traces, config, summary and registry rows."""
    return _run(cfg, output_dir, db)


def run_suite(cfg: SuiteConfig, output_dir: Path | None = None, db: Session | None = None) -> ExperimentReport:
    """Run every optimizer of the suite on shared seeds and shared initial designs."""
    return _run(cfg, output_dir, db)


def summarize_experiment(experiment_dir: Path) -> ExperimentReport:
    """Rebuild summary.json from the trace files of the seeds listed in config.json."""
    experiment_dir = Path(experiment_dir)
    store = TraceStore(experiment_dir.parent)
    name = experiment_dir.name
    payload = store.load_config(name)
    cfg = SuiteConfig.model_validate(payload) if "optimizers" in payload else ExperimentConfig.model_validate(payload)
    expected = cfg.initial_design + cfg.budget
    objective_key = get_objective(cfg.objective).key
    groups = {}
    for kind, nu in plan_runs(cfg):
        variant = nu_variant(nu)
        if not any(store.trace_path(name, kind, seed, variant).exists() for seed in cfg.seeds):
            raise InputError(f"no traces for {kind.value} under {store.optimizer_dir(name, kind, variant)}")
        groups[(kind, nu)] = store.load_traces(
            name, kind, objective_key, cfg.seeds, expected, cfg.maximize, variant,
        )
    report = _build_report(cfg, _noise_for(cfg, store), groups)
    store.save_summary(name, report.model_dump(mode="json"))
    return report
