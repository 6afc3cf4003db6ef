"""Analytic neural tangent kernel of the bias-free ReLU network, its finite-width counterpart,
and information-gain diagnostics.

Layer recursion, starting from Sigma^(1) = Htilde^(1) = <x, x'>:
    Sigma^(l+1)  = 2 E[relu(u) relu(v)]
    Htilde^(l+1) = 2 Htilde^(l) E[relu'(u) relu'(v)] + Sigma^(l+1)
with (u, v) ~ N(0, [[S_ii, S_ij], [S_ij, S_jj]]) and the ReLU arc-cosine closed forms
    E[relu(u) relu(v)]   = sqrt(S_ii S_jj) / (2 pi) * (sin t + (pi - t) cos t)
    E[relu'(u) relu'(v)] = (pi - t) / (2 pi),   t = arccos(clip(rho, -1, 1)).
The kernel is H = (Htilde^(L) + Sigma^(L)) / 2.
"""
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy import linalg

from src.application.uses_cases.confidence.confidence_service import features
from src.application.uses_cases.surrogate.surrogate_service import init_network, param_gradient
from src.core.errors import ConfigurationError, InputError, KernelDomainError, NumericalError
from src.domain.models import InitScheme
from src.domain.state import NetworkShape, NetworkState

logger = logging.getLogger(__name__)

PSD_TOLERANCE = 1e-8


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    matrix: np.ndarray
    points: np.ndarray

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


class InfoGainReport(NamedTuple):
    t: int
    lam: float
    value: float
    min_eigenvalue: float


class KernelEstimate(NamedTuple):
    mean: float
    stderr: float
    n: int


class ConvergenceRow(NamedTuple):
    width: int
    median_abs_deviation: float
    max_abs_deviation: float
    diagonal_ratio: float


def _recursion(gram: np.ndarray, sq_i: np.ndarray, sq_j: np.ndarray, depth: int):
    """Elementwise recursion on arrays of <x_i, x_j>, ||x_i||^2, ||x_j||^2; returns (Sigma^(L), Htilde^(L))."""
    if depth < 2:
        raise ConfigurationError("depth must be at least 2")
    if np.any(sq_i <= 0.0) or np.any(sq_j <= 0.0):
        raise KernelDomainError("the kernel is undefined for zero-norm inputs")
    sigma = np.array(gram, dtype=np.float64)
    htilde = sigma.copy()
    # ReLU halves the second moment and the factor 2 restores it: diagonals stay ||x||^2
    scale = np.sqrt(sq_i * sq_j)
    for _ in range(depth - 1):
        theta = np.arccos(np.clip(sigma / scale, -1.0, 1.0))
        sigma = scale / math.pi * (np.sin(theta) + (math.pi - theta) * np.cos(theta))
        htilde = htilde * (math.pi - theta) / math.pi + sigma
    return sigma, htilde


def _pair(x, x2):
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.ndim != 1 or x.shape != x2.shape:
        raise InputError(f"kernel inputs must be vectors of equal length, got {x.shape} and {x2.shape}")
    return np.array(x @ x2), np.array(x @ x), np.array(x2 @ x2)


def ntk_layers(x, x2, depth: int) -> tuple[float, float]:
    sigma, htilde = _recursion(*_pair(x, x2), depth)
    return float(sigma), float(htilde)


def ntk_value(x, x2, depth: int, normalize: bool = False) -> float:
    gram, sq, sq2 = _pair(x, x2)
    sigma, htilde = _recursion(gram, sq, sq2, depth)
    value = float(0.5 * (htilde + sigma))
    if normalize:
        # k(x, x) = (L + 1) / 2 * ||x||^2
        value /= 0.5 * (depth + 1) * math.sqrt(float(sq) * float(sq2))
    return value


def nngp_value(x, x2, depth: int) -> float:
    return ntk_layers(x, x2, depth)[0]


def limit_value(x, x2, depth: int, scheme: InitScheme | str = InitScheme.HE_THEORY) -> float:
    """Infinite-width limit of <g(x; theta_0), g(x'; theta_0)>/m for an initialisation scheme.

    he-theory zeroes W_L, so every hidden-layer gradient vanishes at theta_0 and only
    Sigma^(L) survives; ntk-matched recovers H.
    """
    scheme = InitScheme(scheme)
    if scheme is InitScheme.HE_THEORY:
        return nngp_value(x, x2, depth)
    if scheme is InitScheme.NTK_MATCHED:
        return ntk_value(x, x2, depth)
    raise ConfigurationError(f"no closed-form gradient-kernel limit for scheme {scheme.value!r}")


def _check_psd(matrix: np.ndarray) -> np.ndarray:
    eigenvalues = np.linalg.eigvalsh(matrix)
    norm = float(np.max(np.abs(eigenvalues))) if eigenvalues.size else 0.0
    if eigenvalues.size and eigenvalues[0] < -PSD_TOLERANCE * norm:
        raise NumericalError(
            f"kernel matrix is not PSD: smallest eigenvalue {eigenvalues[0]:.3e}, spectral norm {norm:.3e}",
            eigenvalues=eigenvalues,
        )
    return eigenvalues


def _points(points) -> np.ndarray:
    try:
        X = np.atleast_2d(np.asarray(points, dtype=np.float64))
    except ValueError as exc:
        raise InputError(f"points must form a rectangular array: {exc}") from exc
    if X.ndim != 2:
        raise InputError(f"points must be a 2-d array, got shape {X.shape}")
    if X.shape[0] < 1:
        raise InputError("need at least one point")
    return X


def _gram_recursion(X: np.ndarray, depth: int):
    sq = np.einsum("ij,ij->i", X, X)
    return _recursion(X @ X.T, sq[:, None], sq[None, :], depth)


def ntk_matrix(points: Sequence, depth: int, normalize: bool = False) -> KernelMatrix:
    X = _points(points)
    sigma, htilde = _gram_recursion(X, depth)
    H = 0.5 * (htilde + sigma)
    if normalize:
        diag = np.sqrt(np.diag(H))
        H = H / np.outer(diag, diag)
    H = 0.5 * (H + H.T)
    _check_psd(H)
    return KernelMatrix(H, X)


def nngp_matrix(points: Sequence, depth: int) -> KernelMatrix:
    X = _points(points)
    sigma, _ = _gram_recursion(X, depth)
    sigma = 0.5 * (sigma + sigma.T)
    _check_psd(sigma)
    return KernelMatrix(sigma, X)


def empirical_kernel(
    shape: NetworkShape,
    seeds: Sequence[int],
    x,
    x2,
    scheme: InitScheme | str = InitScheme.HE_THEORY,
) -> KernelEstimate:
    """Average of <g(x; theta_0), g(x'; theta_0)>/m over fresh initialisations."""
    if not seeds:
        raise InputError("need at least one seed")
    values = []
    for seed in seeds:
        net = init_network(shape, seed, scheme)
        g = param_gradient(net, x, at="anchor")
        g2 = g if x2 is x else param_gradient(net, x2, at="anchor")
        values.append(float(g @ g2) / shape.width)
    values = np.asarray(values)
    stderr = float(values.std(ddof=1) / math.sqrt(values.size)) if values.size > 1 else 0.0
    return KernelEstimate(float(values.mean()), stderr, values.size)


def empirical_gram(net: NetworkState, points: Sequence) -> np.ndarray:
    """K_t = Phi Phi^T with Phi the anchor features of the points."""
    Phi = features(net, _points(points))
    K = Phi @ Phi.T
    return 0.5 * (K + K.T)


def info_gain_from_matrix(matrix: np.ndarray, lam: float) -> InfoGainReport:
    if lam <= 0:
        raise ConfigurationError("lambda must be positive")
    matrix = np.asarray(matrix, dtype=np.float64)
    t = matrix.shape[0]
    try:
        factor, _ = linalg.cho_factor(np.eye(t) + matrix / lam, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky factorisation of I + H/lambda failed: {exc}") from exc
    value = float(np.sum(np.log(np.diag(factor))))
    min_eigenvalue = float(np.linalg.eigvalsh(matrix)[0])
    return InfoGainReport(t, float(lam), value, min_eigenvalue)


def info_gain(points: Sequence, lam: float, depth: int) -> InfoGainReport:
    """0.5 log det(I + H_t / lambda), a lower bound on the maximum information gain."""
    return info_gain_from_matrix(ntk_matrix(points, depth).matrix, lam)


def info_gain_curve(kernel: KernelMatrix, lam: float) -> list[InfoGainReport]:
    """Info gain of every prefix x_1..x_t of the point set, t = 1..n."""
    return [info_gain_from_matrix(kernel.matrix[:t, :t], lam) for t in range(1, kernel.size + 1)]


def _sample_pair(rng: np.random.Generator, s_ii: float, s_jj: float, s_ij: float, n: int):
    z = rng.standard_normal((2, n))
    u = math.sqrt(s_ii) * z[0]
    slope = s_ij / math.sqrt(s_ii)
    v = slope * z[0] + math.sqrt(max(s_jj - slope * slope, 0.0)) * z[1]
    return u, v


def monte_carlo_value(x, x2, depth: int, n_samples: int, rng: np.random.Generator) -> KernelEstimate:
    """Monte-Carlo estimate of H from the Gaussian expectations of the last layer.

    Layers below L-1 use the closed forms; the last layer samples
    q = 2 relu(u) relu(v) + Htilde^(L-1) relu'(u) relu'(v), whose mean is H exactly.
    """
    gram, sq, sq2 = _pair(x, x2)
    if float(sq) <= 0.0 or float(sq2) <= 0.0:
        raise KernelDomainError("the kernel is undefined for zero-norm inputs")
    if depth < 2:
        raise ConfigurationError("depth must be at least 2")
    sigma, htilde = (float(gram), float(gram)) if depth == 2 else ntk_layers(x, x2, depth - 1)
    u, v = _sample_pair(rng, float(sq), float(sq2), sigma, n_samples)
    q = 2.0 * np.maximum(u, 0.0) * np.maximum(v, 0.0) + htilde * ((u > 0) & (v > 0))
    return KernelEstimate(float(q.mean()), float(q.std(ddof=1) / math.sqrt(n_samples)), n_samples)


def _unit_pairs(n_pairs: int, input_dim: int, rng: np.random.Generator):
    X = rng.standard_normal((2 * n_pairs, input_dim))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    return X[:n_pairs], X[n_pairs:]


def convergence_study(
    widths: Sequence[int] = (64, 512, 4096),
    depth: int = 2,
    input_dim: int = 5,
    n_pairs: int = 20,
    n_seeds: int = 1,
    scheme: InitScheme | str = InitScheme.HE_THEORY,
    seed: int = 0,
) -> list[ConvergenceRow]:
    """|empirical - limit| on a fixed set of unit-norm pairs, per width."""
    scheme = InitScheme(scheme)
    rng = np.random.default_rng(seed)
    left, right = _unit_pairs(n_pairs, input_dim, rng)
    limits = np.array([limit_value(a, b, depth, scheme) for a, b in zip(left, right)])
    rows = []
    for width in widths:
        shape = NetworkShape(input_dim, depth, width)
        seeds = [seed * 1_000_003 + width * 101 + k for k in range(n_seeds)]
        estimates = np.array([empirical_kernel(shape, seeds, a, b, scheme).mean for a, b in zip(left, right)])
        deviation = np.abs(estimates - limits)
        diagonal = empirical_kernel(shape, seeds, left[0], left[0], scheme).mean
        row = ConvergenceRow(
            width,
            float(np.median(deviation)),
            float(np.max(deviation)),
            diagonal / ntk_value(left[0], left[0], depth),
        )
        logger.info("width %d: median |K_m - K| = %.4g, diagonal ratio to H %.4f", width, row.median_abs_deviation, row.diagonal_ratio)
        rows.append(row)
    return rows
