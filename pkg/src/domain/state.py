"""Value types shared by the surrogate, confidence and optimizer services.

Every array held here is float64 and read-only; operations return new values.
"""
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from src.core.errors import ConfigurationError, InputError
from src.domain.models import (
    CandidateScheme,
    DomainKind,
    InitScheme,
    OptimizerKind,
    RunStatus,
    ScheduleMode,
    StepSchedule,
    TrainMode,
)


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=np.float64, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class NetworkShape:
    input_dim: int
    depth: int
    width: int

    def __post_init__(self):
        if self.input_dim < 1 or self.width < 1 or self.depth < 2:
            raise ConfigurationError(
                f"invalid network shape d={self.input_dim}, L={self.depth}, m={self.width}"
            )

    @property
    def num_params(self) -> int:
        m, d, L = self.width, self.input_dim, self.depth
        return m * d + m * m * (L - 2) + m

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        m = self.width
        return [(m, self.input_dim)] + [(m, m)] * (self.depth - 2) + [(1, m)]


@dataclass(frozen=True, eq=False)
class NetworkState:
    """Weights W_1..W_L plus the initialization anchor theta_0.

    Flattened parameter order: W_1 row-major, then W_2, ..., W_L.
    """
    shape: NetworkShape
    weights: tuple[np.ndarray, ...]
    anchor: tuple[np.ndarray, ...]
    scheme: InitScheme = InitScheme.HE_THEORY
    scaled_output: bool = True

    def __post_init__(self):
        expected = self.shape.layer_shapes
        for group in (self.weights, self.anchor):
            if [w.shape for w in group] != expected:
                raise ConfigurationError(f"weight shapes {[w.shape for w in group]} != {expected}")
        object.__setattr__(self, "weights", tuple(_frozen(w) for w in self.weights))
        anchor = tuple(a if not a.flags.writeable and a.dtype == np.float64 else _frozen(a) for a in self.anchor)
        object.__setattr__(self, "anchor", anchor)

    def flat(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights])

    def anchor_flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.anchor])

    def with_flat(self, theta: np.ndarray) -> "NetworkState":
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.shape.num_params,):
            raise InputError(f"expected {self.shape.num_params} parameters, got {theta.shape}")
        return self.with_weights(unflatten(theta, self.shape))

    def with_weights(self, weights) -> "NetworkState":
        # anchor arrays are shared, never copied
        return NetworkState(self.shape, tuple(weights), self.anchor, self.scheme, self.scaled_output)

    def at_anchor(self) -> "NetworkState":
        return self.with_weights(self.anchor)


def unflatten(theta: np.ndarray, shape: NetworkShape) -> list[np.ndarray]:
    out, offset = [], 0
    for rows, cols in shape.layer_shapes:
        size = rows * cols
        out.append(theta[offset:offset + size].reshape(rows, cols))
        offset += size
    return out


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 200
    learning_rate: float = 0.001
    lam: float = 0.01
    mode: TrainMode = TrainMode.MINIBATCH
    batch_size: int = 50
    epochs: int = 50
    schedule: StepSchedule = StepSchedule.MANUAL

    def __post_init__(self):
        if self.steps < 0 or self.epochs < 0:
            raise ConfigurationError("steps and epochs must be non-negative")
        if self.learning_rate <= 0 or self.lam <= 0:
            raise ConfigurationError("learning rate and lambda must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch size must be positive")


@dataclass(frozen=True, eq=False)
class PrecisionState:
    """Inverse of U_t = lam*I + sum phi phi^T with the running log det(U_t/lam)."""
    inverse: np.ndarray
    logdet: float
    count: int
    lam: float
    width: int

    @property
    def dim(self) -> int:
        return self.inverse.shape[0]


@dataclass(frozen=True)
class ExplorationSchedule:
    mode: ScheduleMode = ScheduleMode.FIXED
    rkhs_bound: float = 1.0
    noise_scale: float = 0.0
    alpha: float = 0.05
    value: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie in (0, 1), got {self.alpha}")
        # value 0 is the greedy limit
        if self.value < 0 or self.rkhs_bound < 0 or self.noise_scale < 0:
            raise ConfigurationError("exploration parameters must be non-negative")


@dataclass(frozen=True, eq=False)
class Domain:
    kind: DomainKind
    dim: int
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    inner_radius: float = 0.0
    outer_radius: float = 0.0

    @classmethod
    def box(cls, lower, upper) -> "Domain":
        lower, upper = _frozen(np.atleast_1d(lower)), _frozen(np.atleast_1d(upper))
        if lower.shape != upper.shape or not np.all(lower < upper) or not np.all(np.isfinite(upper - lower)):
            raise ConfigurationError("hyper-rectangle needs finite lower < upper coordinate-wise")
        return cls(DomainKind.HYPER_RECTANGLE, lower.size, lower, upper)

    @classmethod
    def annulus(cls, dim: int, inner: float, outer: float) -> "Domain":
        if dim < 1 or not 0.0 < inner <= outer:
            raise ConfigurationError("annulus needs 0 < a <= b")
        return cls(DomainKind.NORM_ANNULUS, dim, inner_radius=float(inner), outer_radius=float(outer))

    def contains(self, x, atol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.dim,):
            return False
        if self.kind is DomainKind.HYPER_RECTANGLE:
            return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))
        r = np.linalg.norm(x)
        return bool(self.inner_radius - atol <= r <= self.outer_radius + atol)


@dataclass(frozen=True, eq=False)
class ObservationLog:
    inputs: np.ndarray
    targets: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "ObservationLog":
        return cls(_frozen(np.empty((0, dim))), _frozen(np.empty(0)))

    def append(self, x, y: float) -> "ObservationLog":
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.inputs.shape[1],):
            raise InputError(f"expected a {self.inputs.shape[1]}-vector, got shape {x.shape}")
        return ObservationLog(
            _frozen(np.vstack([self.inputs, x[None, :]])),
            _frozen(np.append(self.targets, float(y))),
        )

    def __len__(self) -> int:
        return self.targets.size


@dataclass(frozen=True)
class AcquisitionConfig:
    n_candidates: int = 2000
    scheme: CandidateScheme = CandidateScheme.UNIFORM
    stream: int = 0

    def __post_init__(self):
        if self.n_candidates < 1:
            raise ConfigurationError("need at least one candidate")


class Evaluation(NamedTuple):
    noisy: float
    true: float


class ProposalDiagnostics(NamedTuple):
    index: int
    mean: float
    sigma: float
    sample: float
    n_candidates: int


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    x: tuple[float, ...]
    y_noisy: float
    f_true: float
    best_true: float
    sigma: float
    sampled_value: float
    elapsed_ms: float


@dataclass
class RunTrace:
    optimizer: OptimizerKind
    objective: str
    seed: int
    maximize: bool = False
    rows: list[TraceRow] = field(default_factory=list)
    status: RunStatus = RunStatus.COMPLETED
    error: str | None = None

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def best_values(self) -> np.ndarray:
        return np.array([row.best_true for row in self.rows], dtype=np.float64)

    def incumbent(self, f_true: float) -> float:
        if not self.rows:
            return f_true
        best = self.rows[-1].best_true
        return max(best, f_true) if self.maximize else min(best, f_true)
