from datetime import datetime
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, NonNegativeFloat, model_validator

from src.application.uses_cases.benchmarks.benchmark_service import get_objective
from src.core.errors import ConfigurationError
from src.domain.models import (
    CandidateScheme,
    InitScheme,
    NoiseInterpretation,
    OptimizerKind,
    RunStatus,
    ScheduleMode,
    StepSchedule,
    TrainMode,
)

DEFAULT_REPEATS = 10


class NetworkSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    width: int = Field(128, ge=1)
    depth: int = Field(2, ge=2)
    init_scheme: InitScheme = InitScheme.HE_THEORY


class TrainingSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: TrainMode = TrainMode.MINIBATCH
    schedule: StepSchedule = StepSchedule.MANUAL
    learning_rate: float = Field(0.001, gt=0)
    steps: int = Field(200, ge=0)
    batch_size: int = Field(50, ge=1)
    epochs: int = Field(50, ge=0)
    warm_start: bool = False


class ExplorationSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: ScheduleMode = ScheduleMode.FIXED
    nu: float = Field(1.0, ge=0)
    # NeuralBO runs once per value; the report keeps the best
    nu_grid: list[NonNegativeFloat] | None = Field(None, min_length=1)
    rkhs_bound: float = Field(1.0, ge=0)
    # None: use the benchmark's noise standard deviation
    noise_scale: float | None = Field(None, ge=0)
    alpha: float = Field(0.05, gt=0, lt=1)

    @model_validator(mode="after")
    def _check_grid(self):
        if self.nu_grid is None:
            return self
        if self.mode is not ScheduleMode.FIXED:
            raise ValueError("nu_grid needs the fixed exploration mode")
        if len(set(self.nu_grid)) != len(self.nu_grid):
            raise ValueError("nu_grid values must be distinct")
        return self


class AcquisitionSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_candidates: int = Field(2000, ge=1)
    scheme: CandidateScheme = CandidateScheme.UNIFORM
    stream: int = Field(0, ge=0)


class ExperimentConfig(BaseModel):
    """One optimizer on one objective over a list of seeds."""
    model_config = ConfigDict(extra="forbid")

    name: str | None = Field(None, min_length=1, pattern=r"^[A-Za-z0-9_.-]+$")
    objective: str = "ackley-10"
    optimizer: OptimizerKind = OptimizerKind.NEURALBO
    budget: int = Field(500, ge=1)
    repeats: int | None = Field(None, ge=1)
    seeds: list[int] | None = None
    master_seed: int = Field(0, ge=0)
    initial_design: int = Field(15, ge=0)
    lam: float = Field(0.01, gt=0)
    # lambda = 1 + 1/T
    theory_lambda: bool = False
    maximize: bool = False
    noise: NoiseInterpretation = NoiseInterpretation.VARIANCE
    noise_fraction: float = Field(0.01, ge=0)
    noise_probes: int = Field(100_000, ge=2)
    perturbation: float = Field(1.0, ge=0)
    workers: int = Field(1, ge=1)
    save_checkpoints: bool = False
    output_dir: Path | None = None

    network: NetworkSettings = Field(default_factory=NetworkSettings)
    training: TrainingSettings = Field(default_factory=TrainingSettings)
    exploration: ExplorationSettings = Field(default_factory=ExplorationSettings)
    acquisition: AcquisitionSettings = Field(default_factory=AcquisitionSettings)

    @model_validator(mode="after")
    def _resolve(self):
        try:
            get_objective(self.objective)
        except ConfigurationError as exc:
            raise ValueError(str(exc)) from exc
        if self.seeds is None:
            self.seeds = list(range(self.repeats or DEFAULT_REPEATS))
        if any(seed < 0 for seed in self.seeds) or len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be distinct non-negative integers")
        if self.repeats is not None and self.repeats != len(self.seeds):
            raise ValueError(f"repeats={self.repeats} but {len(self.seeds)} seeds given")
        self.repeats = len(self.seeds)
        if self.exploration.nu_grid is not None and OptimizerKind.NEURALBO not in self.optimizer_kinds:
            raise ValueError("nu_grid only applies to the neuralbo optimizer")
        return self

    @property
    def experiment_id(self) -> str:
        return self.name or f"{self.objective}-{self.optimizer.value}"

    @property
    def optimizer_kinds(self) -> list[OptimizerKind]:
        return [self.optimizer]


class SuiteConfig(ExperimentConfig):
    """Several optimizers sharing seeds and initial designs."""
    optimizers: list[OptimizerKind] = Field(
        default_factory=lambda: [OptimizerKind.NEURALBO, OptimizerKind.RANDOM], min_length=1
    )

    @property
    def experiment_id(self) -> str:
        return self.name or f"{self.objective}-suite"

    @property
    def optimizer_kinds(self) -> list[OptimizerKind]:
        return list(dict.fromkeys(self.optimizers))


class FailedRun(BaseModel):
    seed: int
    rows: int
    error: str | None = None


class SummaryReport(BaseModel):
    """Per-iteration best-so-far statistics over the completed traces of one optimizer."""
    optimizer: OptimizerKind | None = None
    completed_seeds: list[int]
    failed: list[FailedRun] = []
    iterations: int
    median: list[float]
    lower_quartile: list[float]
    upper_quartile: list[float]
    final_median: float | None = None
    final_lower_quartile: float | None = None
    final_upper_quartile: float | None = None
    final_mean: float | None = None
    final_best: float | None = None
    final_worst: float | None = None
    wall_time_ms_total: float = 0.0
    wall_time_ms_max: float = 0.0
    simple_regret_median: list[float] | None = None
    cumulative_regret_final_median: float | None = None
    cumulative_regret_final_lower_quartile: float | None = None
    cumulative_regret_final_upper_quartile: float | None = None


class NuSearchReport(BaseModel):
    """NeuralBO summaries per exploration scale; best is the value with the best final median."""
    values: list[float]
    best: float | None = None
    summaries: dict[str, SummaryReport]


class ExperimentReport(BaseModel):
    experiment: str
    objective: str
    optimum_value: float | None = None
    maximize: bool = False
    budget: int
    initial_design: int
    master_seed: int
    seeds: list[int]
    noise_sd: float
    trace_schema: int
    summaries: dict[OptimizerKind, SummaryReport]
    nu_search: NuSearchReport | None = None


class RunResponse(BaseModel):
    id: int
    optimizer: OptimizerKind
    seed: int
    nu: float | None = None
    status: RunStatus
    iterations: int
    final_best: float | None = None
    trace_path: str | None = None
    error: str | None = None
    finished_at: datetime

    class Config:
        from_attributes = True


class ExperimentResponse(BaseModel):
    id: int
    name: str
    objective: str
    budget: int
    initial_design: int
    master_seed: int
    trace_schema: int
    created_at: datetime

    class Config:
        from_attributes = True


class ExperimentDetail(ExperimentResponse):
    runs: list[RunResponse]
