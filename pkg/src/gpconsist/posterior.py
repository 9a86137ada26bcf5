"""Posterior sampling over the latent field and posterior-level diagnostics.

The latent field is represented by its values at a finite set of sites: the
observed covariates plus the quadrature nodes used for h(theta), so every
posterior draw has an exact KL rate without further conditioning.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy import stats
from scipy.linalg import solve_triangular

from .domain import Field, Quadrature, TruthSpec, as_points
from .kl import SetSpec, kl_rates_at_nodes
from .models import Binary, Dataset, GaussianError, LaplaceError, ObservationModel, Poisson, Theta
from .prior import PriorSpec, prior_factor
from .rng import as_generator

UNDERFLOW = "underflow - set too deep for MCMC estimation"
INSUFFICIENT = "insufficient data"
PREDICTIVE_GRID = 512
PREDICTIVE_SCALES = 6.0
POISSON_TAIL = 1e-12
_GH_T, _GH_W = hermegauss(40)
_GH_W = _GH_W / _GH_W.sum()


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 10_000
    burn_in: int = 2_000
    thin: int = 4
    sigma_step: float = 0.3
    quadrature: Quadrature = Quadrature(panels=16, order=4)
    extra_sites: tuple = ()

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("burn_in must be in [0, iterations)")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.sigma_step <= 0:
            raise ValueError("sigma_step must be positive")

    @property
    def n_draws(self) -> int:
        return len(range(self.burn_in, self.iterations, self.thin))


def effective_sample_size(x) -> float:
    """ESS from the initial positive sequence of summed autocorrelation pairs."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    if n < 4:
        return float(n)
    xc = x - x.mean()
    var = xc @ xc / n
    if var <= 0:
        return float(n)
    f = np.fft.rfft(xc, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    tau = -1.0
    for k in range(0, n - 1, 2):
        pair = acf[k] + acf[k + 1]
        if pair <= 0:
            break
        tau += 2 * pair
    return float(n / max(tau, 1.0 / n))


class SiteField(Field):
    """A posterior draw known at the latent sites; exact lookup only."""

    def __init__(self, sites: np.ndarray, values: np.ndarray):
        self.dim = sites.shape[1]
        self._lookup = {tuple(p): v for p, v in zip(sites.tolist(), values.tolist())}

    def evaluate(self, pts):
        try:
            return np.array([self._lookup[tuple(p)] for p in pts.tolist()])
        except KeyError as exc:
            raise KeyError(f"{exc.args[0]} is not a latent site; use posterior_predictive") from None


@dataclass
class PosteriorSamples:
    model: ObservationModel
    prior: PriorSpec
    sites: np.ndarray
    n_data: int
    quad_slice: slice
    quad_weights: np.ndarray
    values: np.ndarray  # (draws, sites)
    sigmas: np.ndarray | None
    loglik: np.ndarray
    factor: np.ndarray
    stats: dict = field(default_factory=dict)
    _whitened: np.ndarray | None = None
    _h_cache: dict = field(default_factory=dict)

    def __len__(self):
        return self.values.shape[0]

    @property
    def quad_nodes(self) -> np.ndarray:
        return self.sites[self.quad_slice]

    def theta(self, i: int) -> Theta:
        return Theta(SiteField(self.sites, self.values[i]), None if self.sigmas is None else float(self.sigmas[i]))

    def h_values(self, truth: TruthSpec) -> np.ndarray:
        key = id(truth)
        if key not in self._h_cache:
            eta0 = truth.eta0.evaluate(self.quad_nodes)
            self._h_cache[key] = kl_rates_at_nodes(
                self.model,
                self.values[:, self.quad_slice],
                eta0,
                self.quad_weights,
                self.sigmas,
                self.model._sigma(truth.sigma0),
            )
        return self._h_cache[key]

    def whitened(self) -> np.ndarray:
        if self._whitened is None:
            self._whitened = solve_triangular(self.factor, self.values.T, lower=True)
        return self._whitened


def _loglik(model, y, f_data, sigma):
    if len(y) == 0:
        return 0.0
    return float(np.sum(model.logpdf(y, f_data, sigma)))


def run_mcmc(model: ObservationModel, data: Dataset, prior: PriorSpec, config: McmcConfig, rng) -> PosteriorSamples:
    """Elliptical slice sampling for the field, log-scale random walk for sigma."""
    gen = as_generator(rng)
    n = len(data)
    dim = data.covariates.dim if n else (len(config.extra_sites[0]) if config.extra_sites else 1)
    y = model.validate_y(data.y) if n else np.zeros(0)
    qnodes, qweights = config.quadrature.rule(dim)
    parts = [data.covariates.points.reshape(-1, dim), qnodes]
    if config.extra_sites:
        parts.append(as_points(np.asarray(config.extra_sites, dtype=float), dim))
    sites = np.vstack(parts)
    quad_slice = slice(n, n + len(qnodes))
    L = prior_factor(prior, sites)
    m = L.shape[0]

    needs_sigma = model.needs_sigma
    if needs_sigma and prior.sigma_prior is None:
        raise ValueError(f"{model.name} model needs a sigma prior")
    log_sigma = prior.sigma_prior.location if needs_sigma else 0.0
    sigma = math.exp(log_sigma) if needs_sigma else None

    block = 256
    nus = np.empty((m, 0))
    nu_pos = 0

    def next_nu():
        nonlocal nus, nu_pos
        if nu_pos >= nus.shape[1]:
            nus = L @ gen.standard_normal((m, block))
            nu_pos = 0
        nu_pos += 1
        return nus[:, nu_pos - 1]

    f = next_nu().copy()
    ll = _loglik(model, y, f[:n], sigma)
    keep = config.n_draws
    values = np.empty((keep, m))
    sigmas = np.empty(keep) if needs_sigma else None
    lls = np.empty(keep)
    shrinks = 0
    sigma_accepts = 0
    k = 0
    for it in range(config.iterations):
        nu = next_nu()
        threshold = ll + math.log(gen.random())
        phi = gen.uniform(0.0, 2 * math.pi)
        lo, hi = phi - 2 * math.pi, phi
        while True:
            prop = f * math.cos(phi) + nu * math.sin(phi)
            ll_prop = _loglik(model, y, prop[:n], sigma)
            if ll_prop > threshold:
                f, ll = prop, ll_prop
                break
            shrinks += 1
            if phi > 0:
                hi = phi
            else:
                lo = phi
            phi = gen.uniform(lo, hi)
        if needs_sigma:
            ls_prop = log_sigma + config.sigma_step * gen.standard_normal()
            ll_prop = _loglik(model, y, f[:n], math.exp(ls_prop))
            log_ratio = (
                ll_prop
                - ll
                + prior.sigma_prior.logpdf_log(ls_prop)
                - prior.sigma_prior.logpdf_log(log_sigma)
            )
            if math.log(gen.random()) < log_ratio:
                log_sigma, sigma, ll = ls_prop, math.exp(ls_prop), ll_prop
                sigma_accepts += 1
        if it >= config.burn_in and (it - config.burn_in) % config.thin == 0:
            values[k] = f
            lls[k] = ll
            if needs_sigma:
                sigmas[k] = sigma
            k += 1

    run_stats = {
        "mean_shrinks": shrinks / config.iterations,
        "sigma_acceptance": sigma_accepts / config.iterations if needs_sigma else None,
        "ess_loglik": effective_sample_size(lls),
    }
    if needs_sigma:
        run_stats["ess_sigma"] = effective_sample_size(sigmas)
    return PosteriorSamples(model, prior, sites, n, quad_slice, qweights, values, sigmas, lls, L, run_stats)


# ---------------------------------------------------------------------------
# set probabilities and rates


@dataclass(frozen=True)
class SetProbability:
    prob: float
    mcse: float
    ess: float

    @property
    def resolved(self) -> bool:
        """False when the estimate sits below the chain's resolution 1/ESS."""
        return self.prob >= 1.0 / self.ess

    def __iter__(self):
        return iter((self.prob, self.mcse))


def posterior_set_probability(samples: PosteriorSamples, setspec: SetSpec, h_Theta: float, truth: TruthSpec):
    inside = setspec.contains(samples.h_values(truth), h_Theta).astype(float)
    p = float(inside.mean())
    ess = effective_sample_size(inside)
    mcse = math.sqrt(p * (1 - p) / ess) if 0 < p < 1 else 0.0
    return SetProbability(p, mcse, ess)


@dataclass(frozen=True)
class RateDiagnostic:
    slope: float | None
    verdict: str
    band: tuple
    detail: dict = field(default_factory=dict)


def concentration_rate_diagnostic(probs, n_values, j_value: float, floors=None) -> RateDiagnostic:
    """Compare the slope of log pi(A | Y_n) in n against -J(A).

    PASS when the least-squares slope lies in ``[-2J, -J/2]``.  Probabilities
    at or below their resolution floor (``1/ESS`` per n) give the underflow
    verdict instead of a slope.
    """
    probs = np.asarray(probs, dtype=float)
    ns = np.asarray(n_values, dtype=float)
    floors = np.zeros_like(probs) if floors is None else np.asarray(floors, dtype=float)
    band = (-2.0 * j_value, -0.5 * j_value)
    detail = {"n": ns.tolist(), "probs": probs.tolist(), "floors": floors.tolist()}
    if len(probs) < 3:
        return RateDiagnostic(None, INSUFFICIENT, band, detail)
    if np.any(probs <= 0) or np.any(probs < floors):
        return RateDiagnostic(None, UNDERFLOW, band, detail)
    slope = float(np.polyfit(ns, np.log(probs), 1)[0])
    verdict = "PASS" if band[0] <= slope <= band[1] else "REPORT"
    return RateDiagnostic(slope, verdict, band, detail)


# ---------------------------------------------------------------------------
# predictive distributions


@dataclass(frozen=True)
class PredictiveDistribution:
    """A predictive law at one covariate, held as a probability vector.

    ``bernoulli``: probs = [P(0), P(1)].  ``count``: pmf over 0..len-1.
    ``density``: exact probabilities of the cells cut by ``edges`` (two
    unbounded tail cells included), so ``density()`` recovers the grid density.
    """

    kind: str
    probs: np.ndarray
    x: tuple
    edges: np.ndarray | None = None

    @property
    def p(self) -> float:
        return float(self.probs[1])

    def density(self) -> np.ndarray:
        return self.probs[1:-1] / np.diff(self.edges)


def _conditional(samples: PosteriorSamples, x: np.ndarray):
    kx = samples.prior.kernel(x[None, :], samples.sites)[0]
    a = solve_triangular(samples.factor, kx, lower=True)
    mean = a @ samples.whitened()
    kxx = samples.prior.kernel(x[None, :], x[None, :])[0, 0]
    var = max(kxx - a @ a, 0.0)
    return mean, var


def _latent_nodes(mean, var):
    """(draws, nodes) latent values and node weights for eta(x) ~ N(mean, var)."""
    if var <= 1e-14:
        return mean[:, None], np.ones(1)
    return mean[:, None] + math.sqrt(var) * _GH_T[None, :], _GH_W


def _count_pmf(lams, weights):
    ymax = int(stats.poisson.isf(POISSON_TAIL, float(np.max(lams)))) + 2
    ys = np.arange(ymax + 1)
    pmf = stats.poisson.pmf(ys[None, None, :], lams[..., None])
    out = np.tensordot(weights, pmf.mean(axis=0), axes=(0, 0))
    return out


def _cell_probs(cdf_vals):
    full = np.concatenate([np.zeros(cdf_vals.shape[:-1] + (1,)), cdf_vals, np.ones(cdf_vals.shape[:-1] + (1,))], -1)
    return np.diff(full, axis=-1)


def _density_edges(centers, scale):
    lo = float(np.min(centers)) - PREDICTIVE_SCALES * scale
    hi = float(np.max(centers)) + PREDICTIVE_SCALES * scale
    return np.linspace(lo, hi, PREDICTIVE_GRID)


def posterior_predictive(samples: PosteriorSamples, model: ObservationModel, x, edges=None) -> PredictiveDistribution:
    """Posterior predictive law of Y at covariate ``x``.

    eta(x) is drawn from its prior-kernel conditional given each draw's site
    values; that one-dimensional Gaussian is integrated by Gauss-Hermite.
    """
    xv = as_points(x, samples.sites.shape[1])[0]
    mean, var = _conditional(samples, xv)
    eta, w = _latent_nodes(mean, var)
    if isinstance(model, Binary):
        p = float(np.mean(model.mean_param(eta) @ w))
        return PredictiveDistribution("bernoulli", np.array([1 - p, p]), tuple(xv))
    if isinstance(model, Poisson):
        return PredictiveDistribution("count", _count_pmf(model.mean_param(eta), w), tuple(xv))
    if isinstance(model, (GaussianError, LaplaceError)):
        sig = samples.sigmas[:, None]
        if edges is None:
            edges = _density_edges(mean, float(np.max(np.sqrt(samples.sigmas**2 + var))))
        if isinstance(model, GaussianError):
            # eta(x) uncertainty folds into the Gaussian scale exactly
            cdf = stats.norm.cdf(edges[None, :], mean[:, None], np.sqrt(sig**2 + var))
            probs = _cell_probs(cdf).mean(axis=0)
        else:
            probs = sum(
                wk * _cell_probs(stats.laplace.cdf(edges[None, :], eta[:, k : k + 1], sig)).mean(axis=0)
                for k, wk in enumerate(w)
            )
        return PredictiveDistribution("density", probs, tuple(xv), np.asarray(edges))
    raise TypeError(f"unsupported model {model!r}")


def true_predictive(model: ObservationModel, truth: TruthSpec, x, like: PredictiveDistribution | None = None):
    """The best predictor: the true conditional law of Y at ``x``."""
    xv = as_points(x, truth.eta0.dim)
    eta0 = truth.eta0.evaluate(xv)
    if isinstance(model, Binary):
        p = float(model.mean_param(eta0)[0])
        return PredictiveDistribution("bernoulli", np.array([1 - p, p]), tuple(xv[0]))
    if isinstance(model, Poisson):
        return PredictiveDistribution("count", _count_pmf(model.mean_param(eta0)[None, :], np.ones(1)), tuple(xv[0]))
    sigma0 = model._sigma(truth.sigma0)
    edges = like.edges if like is not None else _density_edges(eta0, sigma0)
    dist = stats.norm if isinstance(model, GaussianError) else stats.laplace
    probs = _cell_probs(dist.cdf(edges, float(eta0[0]), sigma0))
    return PredictiveDistribution("density", probs, tuple(xv[0]), np.asarray(edges))


def hellinger_tv(pred: PredictiveDistribution, best: PredictiveDistribution) -> tuple[float, float]:
    """Squared Hellinger distance (1 - Bhattacharyya) and total variation."""
    if pred.kind != best.kind:
        raise ValueError(f"cannot compare {pred.kind} with {best.kind}")
    f, g = np.asarray(pred.probs, float), np.asarray(best.probs, float)
    if pred.kind == "count":
        size = max(len(f), len(g))
        f, g = np.pad(f, (0, size - len(f))), np.pad(g, (0, size - len(g)))
    elif pred.kind == "density" and not np.array_equal(pred.edges, best.edges):
        raise ValueError("density predictives must share the same grid")
    f, g = np.clip(f, 0, None), np.clip(g, 0, None)
    h2 = float(np.clip(1.0 - np.sum(np.sqrt(f * g)), 0.0, 1.0))
    tv = float(np.clip(0.5 * np.sum(np.abs(f - g)), 0.0, 1.0))
    return h2, tv
