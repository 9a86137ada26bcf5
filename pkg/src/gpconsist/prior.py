"""Gaussian-process prior over the latent field, sieves and sieve prior mass."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .domain import FieldFunction, grid_points, uniform_axes
from .rng import as_generator

JITTER_GROWTH = 10.0
JITTER_RETRIES = 3


class CholeskyError(np.linalg.LinAlgError):
    pass


class DuplicatePointsWarning(UserWarning):
    pass


@dataclass(frozen=True)
class KernelSpec:
    """Covariance kernel.

    ``squared-exponential`` is the default family.  ``constant`` (all paths
    are constant functions) exists to build deliberately misspecified priors.
    """

    lengthscale: float = 0.2
    amplitude: float = 1.0
    jitter: float = 1e-9
    family: str = "squared-exponential"

    def __post_init__(self):
        if self.lengthscale <= 0 or self.amplitude <= 0:
            raise ValueError("lengthscale and amplitude must be positive")
        if self.jitter < 0:
            raise ValueError("jitter must be non-negative")
        if self.family not in ("squared-exponential", "constant"):
            raise ValueError(f"unknown kernel family {self.family!r}")

    def __call__(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        if self.family == "constant":
            return np.full((a.shape[0], b.shape[0]), self.amplitude**2)
        d2 = np.sum((a[:, None, :] - b[None, :, :]) ** 2, axis=-1)
        return self.amplitude**2 * np.exp(-d2 / (2 * self.lengthscale**2))


@dataclass(frozen=True)
class LogNormalPrior:
    location: float = 0.0
    scale: float = 1.0

    def logpdf_log(self, log_sigma):
        """Density of log(sigma), which is what a log-scale random walk needs."""
        return stats.norm.logpdf(log_sigma, self.location, self.scale)

    def sample(self, rng, size=None):
        return np.exp(self.location + self.scale * as_generator(rng).standard_normal(size))


@dataclass(frozen=True)
class PriorSpec:
    kernel: KernelSpec = KernelSpec()
    sigma_prior: LogNormalPrior | None = None


@dataclass(frozen=True)
class SieveSpec:
    beta: float = 1.0
    exponent_form: str = "quartic-root"
    includes_sigma_band: bool = False

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.exponent_form not in ("quartic-root", "square-root"):
            raise ValueError("exponent_form must be 'quartic-root' or 'square-root'")

    def log_threshold(self, n) -> np.ndarray | float:
        p = 0.25 if self.exponent_form == "quartic-root" else 0.5
        return (self.beta * np.asarray(n, dtype=float)) ** p

    def threshold(self, n):
        return np.exp(self.log_threshold(n))


def kernel_matrix(k: KernelSpec, points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(np.unique(pts, axis=0)) < len(pts):
        warnings.warn("kernel_matrix received duplicate points", DuplicatePointsWarning, stacklevel=2)
    K = k(pts, pts)
    K[np.diag_indices_from(K)] += k.jitter
    return K


def cholesky_with_jitter(K: np.ndarray, base_jitter: float, scale: float = 1.0) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of ``K``, escalating extra diagonal jitter on failure.

    ``K`` is assumed to already carry ``base_jitter`` on its diagonal.  Returns
    the factor and the total jitter used.
    """
    try:
        return np.linalg.cholesky(K), base_jitter
    except np.linalg.LinAlgError:
        pass
    jitter = base_jitter if base_jitter > 0 else 1e-12 * scale
    for _ in range(JITTER_RETRIES):
        new = jitter * JITTER_GROWTH
        try:
            L = np.linalg.cholesky(K + (new - base_jitter) * np.eye(len(K)))
            return L, new
        except np.linalg.LinAlgError:
            jitter = new
    cond = np.linalg.cond(K)
    raise CholeskyError(f"Cholesky failed after jitter escalation to {jitter:.3g}; condition number {cond:.3g}")


def prior_factor(prior: PriorSpec, points: np.ndarray) -> np.ndarray:
    K = prior.kernel(points, points)
    K[np.diag_indices_from(K)] += prior.kernel.jitter
    L, _ = cholesky_with_jitter(K, prior.kernel.jitter, prior.kernel.amplitude**2)
    return L


def sample_gp_values(prior: PriorSpec, points: np.ndarray, size: int, rng) -> np.ndarray:
    """``size`` joint prior draws at ``points``; returns an array (size, m)."""
    L = prior_factor(prior, points)
    z = as_generator(rng).standard_normal((L.shape[0], size))
    return (L @ z).T


def sample_gp_path(prior: PriorSpec, grid, rng, dim: int = 1) -> FieldFunction:
    """One prior path tabulated on ``grid``.

    ``grid`` is a tuple of per-axis node arrays, or an int resolution used on
    every one of ``dim`` axes.
    """
    axes = uniform_axes(dim, grid) if isinstance(grid, (int, np.integer)) else tuple(grid)
    vals = sample_gp_values(prior, grid_points(axes), 1, rng)[0]
    return FieldFunction(axes, vals)


def sample_gp_paths(prior: PriorSpec, axes, size: int, rng) -> np.ndarray:
    """Draws on a tensor grid; returns (size, *grid_shape)."""
    shape = tuple(len(a) for a in axes)
    return sample_gp_values(prior, grid_points(axes), size, rng).reshape((size,) + shape)


def _grid_norms(values: np.ndarray, axes) -> tuple[np.ndarray, np.ndarray]:
    """sup and per-axis derivative sup for a stack of gridded fields (S, *shape)."""
    d = len(axes)
    flat = np.abs(values.reshape(values.shape[0], -1))
    sup = flat.max(axis=1)
    grads = np.empty((values.shape[0], d))
    for j, a in enumerate(axes):
        if len(a) < 2:
            raise ValueError("derivative norms need at least 2 nodes per axis")
        dj = np.gradient(values, a, axis=j + 1, edge_order=1)
        grads[:, j] = np.abs(dj.reshape(values.shape[0], -1)).max(axis=1)
    return sup, grads


def sup_and_grad_norms(f) -> tuple[float, list[float]]:
    """Sup norm over grid nodes and finite-difference sup of each partial."""
    if not isinstance(f, FieldFunction):
        f = f.on_grid()
    sup, grads = _grid_norms(f.values[None, ...], f.axes)
    return float(sup[0]), [float(g) for g in grads[0]]


def sieve_membership(theta, n: int, sieve: SieveSpec) -> bool:
    sup, grads = sup_and_grad_norms(theta.eta)
    thr = float(sieve.threshold(n))
    if sup > thr or any(g > thr for g in grads):
        return False
    if sieve.includes_sigma_band and theta.sigma is not None:
        return 1.0 / thr <= theta.sigma <= thr
    return True


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def estimate_sieve_complement_mass(
    prior: PriorSpec,
    sieve: SieveSpec,
    n,
    draws: int,
    rng,
    dim: int = 1,
    resolution: int | None = None,
    level: float = 0.95,
):
    """Monte-Carlo prior mass outside the sieve G_n.

    ``n`` may be a single size or a sequence; the same prior draws are reused
    for every size, so the estimates are exactly monotone for nested sieves.
    Returns ``(prob, (lo, hi))`` or a list of them.
    """
    if draws < 1000:
        raise ValueError("draws must be >= 1000")
    gen = as_generator(rng)
    axes = uniform_axes(dim, resolution)
    L = prior_factor(prior, grid_points(axes))
    shape = tuple(len(a) for a in axes)
    stat = np.empty(draws)
    batch = 2000
    for start in range(0, draws, batch):
        m = min(batch, draws - start)
        vals = (L @ gen.standard_normal((L.shape[0], m))).T.reshape((m,) + shape)
        sup, grads = _grid_norms(vals, axes)
        stat[start : start + m] = np.maximum(sup, grads.max(axis=1))
    log_stat = np.log(stat)
    if sieve.includes_sigma_band and prior.sigma_prior is not None:
        log_sigma = np.log(prior.sigma_prior.sample(gen, draws))
        log_stat = np.maximum(log_stat, np.abs(log_sigma))
    ns = np.atleast_1d(n)
    out = []
    for nn in ns:
        k = int(np.sum(log_stat > sieve.log_threshold(nn)))
        out.append((k / draws, wilson_interval(k, draws, level)))
    return out if np.ndim(n) else out[0]


def fit_log_decay_slope(ns, probs, lo: float = 1e-3, hi: float = 0.5) -> float:
    """Least-squares slope of log prob against n over points with prob in (lo, hi)."""
    ns = np.asarray(ns, dtype=float)
    probs = np.asarray(probs, dtype=float)
    keep = (probs > lo) & (probs < hi)
    if keep.sum() < 2:
        return math.nan
    return float(np.polyfit(ns[keep], np.log(probs[keep]), 1)[0])
