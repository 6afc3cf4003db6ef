"""Synthetic objectives (Ackley, Levy, Michalewicz), the noise model and the "name-d" registry.

Definitions (minimisation, x in R^d):
  Ackley       -20 exp(-0.2 sqrt(mean x_i^2)) - exp(mean cos(2 pi x_i)) + 20 + e     on [-32.768, 32.768]^d
  Levy         sin^2(pi w_1) + sum_{i<d} (w_i - 1)^2 (1 + 10 sin^2(pi w_i + 1))
               + (w_d - 1)^2 (1 + sin^2(2 pi w_d)),  w_i = 1 + (x_i - 1)/4           on [-10, 10]^d
  Michalewicz  -sum sin(x_i) sin^(2k)(i x_i^2 / pi), k = 10                         on [0, pi]^d
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from src.core.errors import ConfigurationError, InputError
from src.domain.models import NoiseInterpretation
from src.domain.state import Domain, Evaluation

logger = logging.getLogger(__name__)

PRESET_DIMENSIONS = (10, 20, 50, 100)
MICHALEWICZ_STEEPNESS = 10
MICHALEWICZ_OPTIMA = {2: -1.8013, 5: -4.687658, 10: -9.66015}


def ackley(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    a, b, c = 20.0, 0.2, 2.0 * math.pi
    term1 = -a * np.exp(-b * np.sqrt(np.mean(X ** 2, axis=1)))
    term2 = -np.exp(np.mean(np.cos(c * X), axis=1))
    return term1 + term2 + a + math.e


def levy(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    w = 1.0 + (X - 1.0) / 4.0
    head = np.sin(math.pi * w[:, 0]) ** 2
    middle = np.sum((w[:, :-1] - 1.0) ** 2 * (1.0 + 10.0 * np.sin(math.pi * w[:, :-1] + 1.0) ** 2), axis=1)
    tail = (w[:, -1] - 1.0) ** 2 * (1.0 + np.sin(2.0 * math.pi * w[:, -1]) ** 2)
    return head + middle + tail


def michalewicz(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(X)
    i = np.arange(1, X.shape[1] + 1)
    return -np.sum(np.sin(X) * np.sin(i * X ** 2 / math.pi) ** (2 * MICHALEWICZ_STEEPNESS), axis=1)


@dataclass(frozen=True, eq=False)
class Objective:
    name: str
    domain: Domain
    function: Callable[[np.ndarray], np.ndarray]
    optimum_value: float | None = None

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def key(self) -> str:
        return f"{self.name}-{self.dim}"


@dataclass(frozen=True)
class NoiseModel:
    sd: float = 0.0

    def __post_init__(self):
        if not self.sd >= 0.0:
            raise ConfigurationError("noise standard deviation must be non-negative")


def _box(dim: int, low: float, high: float) -> Domain:
    return Domain.box(np.full(dim, low), np.full(dim, high))


_FACTORIES: dict[str, Callable[[int], Objective]] = {
    "ackley": lambda d: Objective("ackley", _box(d, -32.768, 32.768), ackley, 0.0),
    "levy": lambda d: Objective("levy", _box(d, -10.0, 10.0), levy, 0.0),
    "michalewicz": lambda d: Objective("michalewicz", _box(d, 0.0, math.pi), michalewicz, MICHALEWICZ_OPTIMA.get(d)),
}


def get_objective(objective_id: str) -> Objective:
    """Resolve a "name-d" id such as "ackley-10"."""
    name, _, dim = objective_id.strip().lower().rpartition("-")
    if name not in _FACTORIES or not dim.isdigit() or int(dim) < 1:
        raise ConfigurationError(f"unknown objective {objective_id!r}; expected one of {sorted(_FACTORIES)} as name-d")
    return _FACTORIES[name](int(dim))


def list_objectives() -> list[str]:
    return [f"{name}-{d}" for name in sorted(_FACTORIES) for d in PRESET_DIMENSIONS]


def _checked(obj: Objective, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (obj.dim,):
        raise InputError(f"{obj.key} expects a {obj.dim}-vector, got shape {x.shape}")
    if not obj.domain.contains(x, atol=0.0):
        raise InputError(f"point outside the domain of {obj.key}")
    return x


def evaluate_true(obj: Objective, x) -> float:
    return float(obj.function(_checked(obj, x)[None, :])[0])


def evaluate_noisy(obj: Objective, noise: NoiseModel, x, rng: np.random.Generator) -> float:
    value = evaluate_true(obj, x)
    if noise.sd == 0.0:
        return value
    return value + noise.sd * float(rng.standard_normal())


_RANGE_CACHE: dict[tuple[str, int, int, int], float] = {}


def range_estimate(obj: Objective, n_probe: int, seed: int = 0) -> float:
    """max - min of the true values over n_probe uniform domain samples; cached."""
    if n_probe < 2:
        raise InputError("range estimate needs at least two probes")
    key = (obj.name, obj.dim, int(n_probe), int(seed))
    if key not in _RANGE_CACHE:
        rng = np.random.default_rng(seed)
        probes = rng.uniform(obj.domain.lower, obj.domain.upper, size=(n_probe, obj.dim))
        values = obj.function(probes)
        _RANGE_CACHE[key] = float(np.max(values) - np.min(values))
        logger.info("range of %s over %d probes: %.6g", obj.key, n_probe, _RANGE_CACHE[key])
    return _RANGE_CACHE[key]


def export_range_cache() -> list[dict]:
    return [
        {"objective": name, "dim": dim, "n_probe": n, "seed": seed, "range": value}
        for (name, dim, n, seed), value in sorted(_RANGE_CACHE.items())
    ]


def load_range_cache(entries: list[dict]) -> None:
    for entry in entries:
        key = (entry["objective"], int(entry["dim"]), int(entry["n_probe"]), int(entry["seed"]))
        _RANGE_CACHE[key] = float(entry["range"])


def noise_for_range(
    value_range: float,
    interpretation: NoiseInterpretation = NoiseInterpretation.VARIANCE,
    fraction: float = 0.01,
) -> NoiseModel:
    if value_range <= 0.0:
        logger.warning("function range is %.3g; using noise sd 0", value_range)
        return NoiseModel(0.0)
    if interpretation is NoiseInterpretation.VARIANCE:
        return NoiseModel(math.sqrt(fraction * value_range))
    return NoiseModel(fraction * value_range)


def noise_model(
    obj: Objective,
    interpretation: NoiseInterpretation = NoiseInterpretation.VARIANCE,
    fraction: float = 0.01,
    n_probe: int = 100_000,
    seed: int = 0,
) -> NoiseModel:
    return noise_for_range(range_estimate(obj, n_probe, seed), interpretation, fraction)


class NoisyOracle:
    """x -> Evaluation(noisy, true), drawing noise from its own stream."""

    def __init__(self, obj: Objective, noise: NoiseModel, rng: np.random.Generator):
        self.objective = obj
        self.noise = noise
        self.rng = rng

    def __call__(self, x) -> Evaluation:
        true = evaluate_true(self.objective, x)
        noisy = true if self.noise.sd == 0.0 else true + self.noise.sd * float(self.rng.standard_normal())
        return Evaluation(noisy, true)
