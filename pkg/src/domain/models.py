from sqlalchemy import Column, Integer, String, DateTime, Float, ForeignKey, Enum, Text
from sqlalchemy.orm import declarative_base, relationship
from datetime import datetime, timezone
import enum

Base = declarative_base()


def _utcnow() -> datetime:
    return datetime.now(timezone.utc)


class InitScheme(str, enum.Enum):
    HE_THEORY = "he-theory"
    EXPERIMENT = "experiment"
    NTK_MATCHED = "ntk-matched"


class TrainMode(str, enum.Enum):
    FULL_BATCH = "full-batch"
    MINIBATCH = "minibatch"


class StepSchedule(str, enum.Enum):
    MANUAL = "manual"
    THEORY = "theory"


class ScheduleMode(str, enum.Enum):
    THEORY = "theory"
    FIXED = "fixed-grid"


class DomainKind(str, enum.Enum):
    HYPER_RECTANGLE = "hyper-rectangle"
    NORM_ANNULUS = "norm-annulus"


class CandidateScheme(str, enum.Enum):
    UNIFORM = "uniform"
    SOBOL = "sobol"


class OptimizerKind(str, enum.Enum):
    NEURALBO = "neuralbo"
    NEURAL_GREEDY = "neural-greedy"
    RANDOM = "random"


class NoiseInterpretation(str, enum.Enum):
    # variance = fraction * range
    VARIANCE = "variance"
    # standard deviation = fraction * range
    STD_DEV = "std-dev"


class RunStatus(str, enum.Enum):
    COMPLETED = "completed"
    FAILED = "failed"


class Experiment(Base):
    __tablename__ = "experiments"

    id = Column(Integer, primary_key=True, index=True)
    name = Column(String, unique=True, index=True, nullable=False)
    objective = Column(String, nullable=False)
    budget = Column(Integer, nullable=False)
    initial_design = Column(Integer, nullable=False)
    master_seed = Column(Integer, nullable=False)
    trace_schema = Column(Integer, nullable=False)
    created_at = Column(DateTime, default=_utcnow)

    runs = relationship("Run", back_populates="experiment", cascade="all, delete-orphan")


class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    experiment_id = Column(Integer, ForeignKey("experiments.id", ondelete="CASCADE"), nullable=False)
    optimizer = Column(Enum(OptimizerKind), nullable=False)
    seed = Column(Integer, nullable=False)
    # exploration scale of a swept NeuralBO run
    nu = Column(Float, nullable=True)
    status = Column(Enum(RunStatus), nullable=False)
    iterations = Column(Integer, nullable=False, default=0)
    final_best = Column(Float, nullable=True)
    trace_path = Column(String, nullable=True)
    error = Column(Text, nullable=True)
    finished_at = Column(DateTime, default=_utcnow)

    experiment = relationship("Experiment", back_populates="runs")
