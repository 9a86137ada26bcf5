"""KL divergence rates h(theta), a brute-force oracle, h(Theta), J(A) and set predicates."""
from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np
from scipy import integrate, stats

from .domain import (
    CovariateSpace,
    MonteCarlo,
    Quadrature,
    TruthSpec,
    expect_over_Q,
    grid_points,
    interpolation_matrix,
    uniform_axes,
)
from .models import Binary, GaussianError, LaplaceError, ObservationModel, Poisson, Theta
from .prior import PriorSpec, prior_factor
from .rng import as_generator

POISSON_TAIL = 1e-12
# e^-12 Laplace tail mass is ~3e-6, far above double precision; Gaussian tails are not.
WINDOW_SCALES = {"gaussian": 12.0, "laplace": 40.0}
COARSE_NODES = 17


@dataclass(frozen=True)
class KlRateEstimate:
    value: float
    err: float
    method: str


def kl_rate(model: ObservationModel, theta: Theta, truth: TruthSpec, integrator=None, rng=None) -> KlRateEstimate:
    """Closed-form KL divergence rate of ``theta`` from the truth."""
    sigma, sigma0 = model._sigma(theta.sigma), model._sigma(truth.sigma0)
    space = CovariateSpace(theta.eta.dim)

    def g(x):
        return model.kl_integrand(theta.eta.evaluate(x), truth.eta0.evaluate(x), sigma, sigma0)

    integrator = integrator or Quadrature()
    value, err = expect_over_Q(g, space, integrator, rng)
    method = "monte-carlo" if isinstance(integrator, MonteCarlo) else "quadrature"
    return KlRateEstimate(value, err, method)


def kl_rates_at_nodes(model, eta_vals, eta0_vals, weights, sigma=None, sigma0=None) -> np.ndarray:
    """h for a stack of fields known at quadrature nodes.

    ``eta_vals`` is (S, Q); ``sigma`` is None or length S.  Returns S values.
    """
    eta_vals = np.atleast_2d(eta_vals)
    if model.needs_sigma:
        s = np.asarray(sigma, dtype=float).reshape(-1, 1)
        integrand = model.kl_integrand(eta_vals, eta0_vals[None, :], s, float(sigma0))
    else:
        integrand = model.kl_integrand(eta_vals, eta0_vals[None, :])
    return integrand @ weights


def per_obs_kl_oracle(model: ObservationModel, theta: Theta, truth: TruthSpec, x, return_err: bool = False):
    """KL(f0(.|x) || f(.|x)) by direct summation or adaptive quadrature.

    Independent of the closed forms used by :func:`kl_rate`; a test oracle.
    """
    eta = float(theta.eta(x)[0])
    eta0 = float(truth.eta0(x)[0])
    if isinstance(model, Binary):
        p, p0 = float(model.link(eta)), float(model.link(eta0))
        val = 0.0
        for a, b in ((p0, p), (1 - p0, 1 - p)):
            if a > 0:
                val += a * math.log(a / b)
        err = 4 * np.finfo(float).eps * (abs(val) + 1)
    elif isinstance(model, Poisson):
        lam, lam0 = float(model.link(eta)), float(model.link(eta0))
        ymax = int(stats.poisson.isf(POISSON_TAIL, lam0)) + 1
        while stats.poisson.sf(ymax, lam0) >= POISSON_TAIL:
            ymax += 1
        ys = np.arange(ymax + 1)
        lp0 = stats.poisson.logpmf(ys, lam0)
        lp = stats.poisson.logpmf(ys, lam)
        val = math.fsum(np.exp(lp0) * (lp0 - lp))
        tail = stats.poisson.sf(ymax, lam0)
        # tail terms grow at most linearly in y
        err = tail * (abs(lam - lam0) + (ymax + 10 * math.sqrt(lam0 + 1)) * abs(math.log(lam0 / lam))) + 1e-15
    elif isinstance(model, (GaussianError, LaplaceError)):
        sigma, sigma0 = float(theta.sigma), float(truth.sigma0)
        dist = stats.norm if isinstance(model, GaussianError) else stats.laplace
        f0 = dist(loc=eta0, scale=sigma0)
        f = dist(loc=eta, scale=sigma)
        half = WINDOW_SCALES[model.name] * max(sigma, sigma0)
        lo, hi = eta0 - half, eta0 + half
        brk = sorted(p for p in {eta0, eta} if lo < p < hi)

        def integrand(y):
            l0 = f0.logpdf(y)
            return math.exp(l0) * (l0 - f.logpdf(y))

        val, err = integrate.quad(integrand, lo, hi, points=brk or None, epsabs=1e-13, epsrel=1e-12, limit=200)
        r = (half + 2 * max(sigma, sigma0) + abs(eta - eta0)) / min(sigma, sigma0)
        growth = r + r * r if isinstance(model, GaussianError) else 2 * r
        err += 2 * f0.sf(hi) * (abs(math.log(sigma / sigma0)) + growth)
    else:
        raise TypeError(f"no oracle for {model!r}")
    return (val, err) if return_err else val


def kl_rate_oracle(model: ObservationModel, theta: Theta, truth: TruthSpec, integrator=None) -> KlRateEstimate:
    """E_X of :func:`per_obs_kl_oracle` on the nodes of a quadrature rule.

    ``err`` sums the weighted per-node oracle errors only; covariate
    integration error is shared with :func:`kl_rate` on the same rule.
    """
    integrator = integrator or Quadrature()
    xs, ws = integrator.rule(theta.eta.dim)
    vals = np.empty(len(ws))
    errs = np.empty(len(ws))
    for i, x in enumerate(xs):
        vals[i], errs[i] = per_obs_kl_oracle(model, theta, truth, x[None, :], return_err=True)
    return KlRateEstimate(math.fsum(ws * vals), float(ws @ errs), "oracle")


# ---------------------------------------------------------------------------
# sets


@dataclass(frozen=True)
class SetSpec:
    """A KL-defined parameter set.

    kinds: ``all``; ``h-above`` (h >= c); ``h-band`` (lo <= h <= hi);
    ``N-epsilon`` (h <= h(Theta) + eps).  ``complement`` negates the set.
    """

    kind: str
    params: tuple = ()
    complement: bool = False

    def __post_init__(self):
        object.__setattr__(self, "params", tuple(float(p) for p in self.params))
        need = {"all": 0, "h-above": 1, "h-band": 2, "N-epsilon": 1}
        if self.kind not in need:
            raise ValueError(f"unknown set kind {self.kind!r}")
        if len(self.params) != need[self.kind]:
            raise ValueError(f"{self.kind} takes {need[self.kind]} parameter(s)")
        if self.kind == "N-epsilon" and self.params[0] <= 0:
            raise ValueError("epsilon must be positive")

    @classmethod
    def parse(cls, text: str) -> "SetSpec":
        text = text.strip()
        comp = text.startswith("not:")
        if comp:
            text = text[4:]
        m = re.fullmatch(r"([A-Za-z-]+)(?:\(([^)]*)\))?", text)
        if not m:
            raise ValueError(f"cannot parse set {text!r}")
        args = tuple(float(a) for a in m.group(2).split(",")) if m.group(2) else ()
        return cls(m.group(1), args, comp)

    def negate(self) -> "SetSpec":
        return SetSpec(self.kind, self.params, not self.complement)

    def contains(self, h, h_Theta: float = 0.0):
        h = np.asarray(h, dtype=float)
        if self.kind == "all":
            inside = np.ones(h.shape, dtype=bool)
        elif self.kind == "h-above":
            inside = h >= self.params[0]
        elif self.kind == "h-band":
            inside = (h >= self.params[0]) & (h <= self.params[1])
        else:
            inside = h <= h_Theta + self.params[0]
        return ~inside if self.complement else inside

    def __str__(self):
        body = self.kind + (f"({','.join(f'{p:g}' for p in self.params)})" if self.params else "")
        return ("not:" if self.complement else "") + body


def in_set(theta, setspec: SetSpec, h_value: float, h_Theta: float = 0.0) -> bool:
    return bool(setspec.contains(h_value, h_Theta))


def eps_schedule(n, c: float = 1.0, gamma: float = 0.8):
    """epsilon_n = c * n ** -gamma; gamma in (0, 1) keeps n * eps_n growing."""
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    return c * np.asarray(n, dtype=float) ** (-gamma)


# ---------------------------------------------------------------------------
# h(Theta) and J(A)


@dataclass(frozen=True)
class HThetaEstimate:
    value: float
    certificate: str  # "analytic-zero" | "empirical-min"


class _PriorSearch:
    """Prior draws evaluated at quadrature nodes plus a coarse local search."""

    def __init__(self, model, prior: PriorSpec, truth: TruthSpec, integrator: Quadrature, resolution=None):
        self.model = model
        self.prior = prior
        self.truth = truth
        dim = truth.eta0.dim
        self.nodes, self.weights = integrator.rule(dim)
        self.eta0 = truth.eta0.evaluate(self.nodes)
        self.sigma0 = model._sigma(truth.sigma0)
        self.axes = uniform_axes(dim, resolution)
        self.W = interpolation_matrix(self.axes, self.nodes)
        if prior.kernel.family == "constant":
            self.coarse_W = np.ones((len(self.nodes), 1))
            self.coarse_from_grid = np.full((1, self.W.shape[1]), 1.0 / self.W.shape[1])
        else:
            caxes = uniform_axes(dim, COARSE_NODES)
            self.coarse_W = interpolation_matrix(caxes, self.nodes)
            self.coarse_from_grid = interpolation_matrix(self.axes, grid_points(caxes))

    def draw(self, budget: int, gen):
        L = prior_factor(self.prior, grid_points(self.axes))
        grid_vals = (L @ gen.standard_normal((L.shape[0], budget))).T
        sig = None
        if self.model.needs_sigma:
            if self.prior.sigma_prior is None:
                raise ValueError("this model needs a prior on sigma")
            sig = self.prior.sigma_prior.sample(gen, budget)
        h = kl_rates_at_nodes(self.model, grid_vals @ self.W.T, self.eta0, self.weights, sig, self.sigma0)
        return grid_vals, sig, h

    def h_coarse(self, params):
        if self.model.needs_sigma:
            eta = self.coarse_W @ params[:-1]
            sigma = [math.exp(params[-1])]
        else:
            eta, sigma = self.coarse_W @ params, None
        return float(kl_rates_at_nodes(self.model, eta, self.eta0, self.weights, sigma, self.sigma0)[0])

    def refine(self, grid_vals, sigma, accept=lambda h: True, step=0.5, tol=1e-6, max_evals=200_000):
        """Coordinate descent on the coarse node values (and log sigma)."""
        params = self.coarse_from_grid @ grid_vals
        if self.model.needs_sigma:
            params = np.append(params, math.log(sigma))
        best = self.h_coarse(params)
        if not accept(best):
            return math.inf
        evals = 0
        while step > tol and evals < max_evals:
            improved = False
            for i in range(len(params)):
                for delta in (step, -step):
                    trial = params.copy()
                    trial[i] += delta
                    val = self.h_coarse(trial)
                    evals += 1
                    if val < best and accept(val):
                        params, best, improved = trial, val, True
                        break
            if not improved:
                step /= 2
        return best


def estimate_h_Theta(
    model, prior: PriorSpec, truth: TruthSpec, budget: int, rng=None, integrator=None, resolution=None
) -> HThetaEstimate:
    """Upper bound on the prior ess-inf of h, or an exact zero when the truth is in the prior support."""
    if budget < 100:
        raise ValueError("budget must be >= 100")
    if truth.representable_in_prior and prior.kernel.family == "squared-exponential":
        return HThetaEstimate(0.0, "analytic-zero")
    search = _PriorSearch(model, prior, truth, integrator or Quadrature(), resolution)
    grid_vals, sig, h = search.draw(budget, as_generator(rng))
    i = int(np.argmin(h))
    refined = search.refine(grid_vals[i], None if sig is None else sig[i])
    return HThetaEstimate(float(min(h[i], refined)), "empirical-min")


def j_rate(
    setspec: SetSpec,
    h_Theta: float,
    model,
    prior: PriorSpec,
    truth: TruthSpec,
    budget: int,
    rng=None,
    integrator=None,
    resolution=None,
    min_hits: int = 10,
) -> float:
    """J(A) = ess-inf of h over A minus h(Theta), from prior draws landing in A."""
    search = _PriorSearch(model, prior, truth, integrator or Quadrature(), resolution)
    grid_vals, sig, h = search.draw(budget, as_generator(rng))
    hits = np.flatnonzero(setspec.contains(h, h_Theta))
    if len(hits) < min_hits:
        raise ValueError(f"set has negligible prior mass ({len(hits)} hits in {budget} draws)")
    i = hits[np.argmin(h[hits])]
    refined = search.refine(
        grid_vals[i], None if sig is None else sig[i], accept=lambda v: bool(setspec.contains(v, h_Theta))
    )
    return max(float(min(h[i], refined)) - h_Theta, 0.0)
