"""Anchor-gradient feature map, Sherman-Morrison precision updates and the exploration scale."""
import math

import numpy as np

from src.application.uses_cases.surrogate.surrogate_service import param_gradients
from src.core.errors import ConfigurationError, InputError, InvariantViolationError, NumericalDegeneracyError
from src.domain.models import ScheduleMode
from src.domain.state import ExplorationSchedule, NetworkState, PrecisionState


NEGATIVE_TOLERANCE = 1e-10
# bounds the (chunk, p) feature block held in memory at once
FEATURE_BLOCK_ENTRIES = 1 << 22


def features(net: NetworkState, X) -> np.ndarray:
    """g(x; theta_0) / sqrt(m) for each row of X; always evaluated at the anchor."""
    return param_gradients(net, X, at="anchor") / math.sqrt(net.shape.width)


def feature(net: NetworkState, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise InputError(f"expected a vector, got shape {x.shape}")
    return features(net, x[None, :])[0]


def initial_precision(dim: int, lam: float, width: int) -> PrecisionState:
    if lam <= 0:
        raise ConfigurationError("lambda must be positive")
    inverse = np.eye(dim) / lam
    inverse.setflags(write=False)
    return PrecisionState(inverse, 0.0, 0, float(lam), int(width))


def _clamp_quadratic(q: np.ndarray) -> np.ndarray:
    if np.any(q < -NEGATIVE_TOLERANCE):
        raise NumericalDegeneracyError(f"negative quadratic form {float(q.min()):.3e} in posterior width")
    return np.maximum(q, 0.0)


def sigmas(state: PrecisionState, Phi) -> np.ndarray:
    """sqrt(lam * phi^T U^-1 phi) for each row of Phi."""
    Phi = np.atleast_2d(np.asarray(Phi, dtype=np.float64))
    if Phi.shape[1] != state.dim:
        raise InputError(f"expected features of dimension {state.dim}, got {Phi.shape[1]}")
    q = np.einsum("ij,ij->i", Phi @ state.inverse, Phi)
    return np.sqrt(state.lam * _clamp_quadratic(q))


def sigma(state: PrecisionState, phi) -> float:
    return float(sigmas(state, np.asarray(phi, dtype=np.float64)[None, :])[0])


def posterior_widths(net: NetworkState, state: PrecisionState, X) -> np.ndarray:
    """sigma_t at every row of X, computing features block by block."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    block = max(1, FEATURE_BLOCK_ENTRIES // max(state.dim, 1))
    out = np.empty(X.shape[0])
    for start in range(0, X.shape[0], block):
        out[start:start + block] = sigmas(state, features(net, X[start:start + block]))
    return out


def rank_one_update(state: PrecisionState, phi) -> PrecisionState:
    """U <- U + phi phi^T, maintained on the inverse with Sherman-Morrison."""
    phi = np.asarray(phi, dtype=np.float64)
    if phi.shape != (state.dim,) or not np.all(np.isfinite(phi)):
        raise InputError("rank-one update needs a finite feature vector of matching dimension")
    u = state.inverse @ phi
    quadratic = float(phi @ u)
    denom = 1.0 + quadratic
    if not denom > 0.0:
        raise InvariantViolationError(f"Sherman-Morrison denominator {denom:.3e} <= 0; precision state corrupted")
    inverse = state.inverse - np.outer(u, u) / denom
    inverse = 0.5 * (inverse + inverse.T)
    inverse.setflags(write=False)
    return PrecisionState(inverse, state.logdet + math.log1p(quadratic), state.count + 1, state.lam, state.width)


def nu(schedule: ExplorationSchedule, lam: float) -> float:
    """theory: sqrt(2) B + R / sqrt(lam) * sqrt(2 log(1/alpha)); fixed-grid: the configured value."""
    if not 0.0 < schedule.alpha < 1.0:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {schedule.alpha}")
    if schedule.mode is ScheduleMode.FIXED:
        return float(schedule.value)
    if lam <= 0:
        raise ConfigurationError("lambda must be positive")
    return math.sqrt(2.0) * schedule.rkhs_bound + schedule.noise_scale / math.sqrt(lam) * math.sqrt(
        2.0 * math.log(1.0 / schedule.alpha)
    )


def to_checkpoint(state: PrecisionState) -> dict:
    rows, cols = np.tril_indices(state.dim)
    return {
        "t": state.count,
        "lam": state.lam,
        "m": state.width,
        "p": state.dim,
        "lower": state.inverse[rows, cols].tolist(),
        "logdet": state.logdet,
    }


def from_checkpoint(checkpoint: dict) -> PrecisionState:
    p = int(checkpoint["p"])
    rows, cols = np.tril_indices(p)
    inverse = np.zeros((p, p))
    inverse[rows, cols] = checkpoint["lower"]
    inverse[cols, rows] = checkpoint["lower"]
    inverse.setflags(write=False)
    return PrecisionState(inverse, float(checkpoint["logdet"]), int(checkpoint["t"]), float(checkpoint["lam"]), int(checkpoint["m"]))
