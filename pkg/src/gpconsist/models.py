"""Observation models: truncated links, log-densities, simulation and log R_n."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .domain import CovariateSample, Field, TruthSpec, as_points
from .rng import as_generator

BINARY_BASES = ("logistic-cdf", "normal-cdf")
POISSON_BASES = ("softplus", "exp")


def _softplus(u):
    return np.logaddexp(0.0, u)


def _softplus_inv(v):
    v = np.asarray(v, dtype=float)
    return np.where(v > 30, v, np.log(np.expm1(np.minimum(v, 30))))


_BASE = {
    "logistic-cdf": (special.expit, special.logit),
    "normal-cdf": (special.ndtr, special.ndtri),
    "softplus": (_softplus, _softplus_inv),
    "exp": (np.exp, np.log),
}


@dataclass(frozen=True)
class LinkSpec:
    """Truncated link H built from a base function G.

    Binary links clamp G into ``[kappa_B, 1 - kappa_B]``; Poisson links floor
    G at ``kappa_P``.  ``kappa_B = 0`` switches truncation off, which is only
    meant for degenerate test data.
    """

    base: str = "logistic-cdf"
    kind: str = "binary"
    kappa_B: float = 0.05
    kappa_P: float = 0.1

    def __post_init__(self):
        if self.kind == "binary":
            if self.base not in BINARY_BASES:
                raise ValueError(f"binary links need a CDF base, one of {BINARY_BASES}")
            if not 0 <= self.kappa_B < 0.5:
                raise ValueError("kappa_B must lie in [0, 1/2)")
        elif self.kind == "poisson":
            if self.base not in POISSON_BASES:
                raise ValueError(f"poisson links need a non-negative base, one of {POISSON_BASES}")
            if self.kappa_P <= 0:
                raise ValueError("kappa_P must be positive")
        else:
            raise ValueError("link kind must be 'binary' or 'poisson'")

    def __call__(self, u):
        g = _BASE[self.base][0](np.asarray(u, dtype=float))
        if self.kind == "binary":
            return np.clip(g, self.kappa_B, 1.0 - self.kappa_B)
        return np.maximum(g, self.kappa_P)

    def inverse(self, v):
        """A latent value mapping to ``v`` (inside the untruncated range)."""
        return _BASE[self.base][1](np.asarray(v, dtype=float))


def link_H(link: LinkSpec, u):
    out = link(u)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class Theta:
    eta: Field
    sigma: float | None = None

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")


def theta_from_truth(truth: TruthSpec) -> Theta:
    return Theta(truth.eta0, truth.sigma0)


@dataclass(frozen=True)
class Dataset:
    covariates: CovariateSample
    y: np.ndarray

    def __post_init__(self):
        if len(self.covariates) != len(self.y):
            raise ValueError("covariates and responses differ in length")

    def __len__(self):
        return len(self.y)

    def concat(self, other: "Dataset") -> "Dataset":
        return Dataset(self.covariates.concat(other.covariates), np.concatenate([self.y, other.y]))

    def head(self, n: int) -> "Dataset":
        cov = CovariateSample(self.covariates.points[:n], self.covariates.scheme)
        return Dataset(cov, self.y[:n])


# ---------------------------------------------------------------------------
# models


class ObservationModel:
    name: str
    needs_sigma = False
    response_kind = "real"

    def mean_param(self, eta):
        return eta

    def validate_y(self, y):
        return np.asarray(y, dtype=float)

    def _sigma(self, sigma):
        if self.needs_sigma:
            if sigma is None:
                raise ValueError(f"{self.name} model needs a scale sigma")
            return float(sigma)
        return None


class Binary(ObservationModel):
    name = "binary"
    response_kind = "binary"

    def __init__(self, link: LinkSpec | None = None):
        self.link = link or LinkSpec()
        if self.link.kind != "binary":
            raise ValueError("binary model needs a binary link")

    def mean_param(self, eta):
        return self.link(eta)

    def validate_y(self, y):
        y = np.asarray(y)
        if not np.all((y == 0) | (y == 1)):
            raise ValueError("binary responses must be 0 or 1")
        return y.astype(np.int64)

    def logpdf(self, y, eta, sigma=None):
        p = self.mean_param(eta)
        return np.where(y == 1, np.log(p), np.log1p(-p))

    def simulate(self, eta, sigma, gen):
        return (gen.random(np.shape(eta)) < self.mean_param(eta)).astype(np.int64)

    def log_ratio_terms(self, y, eta, eta0, sigma=None, sigma0=None):
        p, p0 = self.mean_param(eta), self.mean_param(eta0)
        return np.where(y == 1, np.log(p / p0), np.log((1 - p) / (1 - p0)))

    def kl_integrand(self, eta, eta0, sigma=None, sigma0=None):
        p, p0 = self.mean_param(eta), self.mean_param(eta0)
        return special.rel_entr(p0, p) + special.rel_entr(1 - p0, 1 - p)

    def __repr__(self):
        return f"Binary({self.link.base}, kappa_B={self.link.kappa_B})"


class Poisson(ObservationModel):
    name = "poisson"
    response_kind = "count"

    def __init__(self, link: LinkSpec | None = None):
        self.link = link or LinkSpec(base="softplus", kind="poisson")
        if self.link.kind != "poisson":
            raise ValueError("poisson model needs a poisson link")

    def mean_param(self, eta):
        return self.link(eta)

    def validate_y(self, y):
        y = np.asarray(y)
        if np.any(y < 0) or np.any(np.asarray(y, dtype=float) % 1 != 0):
            raise ValueError("poisson responses must be non-negative integers")
        return y.astype(np.int64)

    def logpdf(self, y, eta, sigma=None):
        lam = self.mean_param(eta)
        return special.xlogy(y, lam) - lam - special.gammaln(np.asarray(y, dtype=float) + 1)

    def simulate(self, eta, sigma, gen):
        return gen.poisson(self.mean_param(eta)).astype(np.int64)

    def log_ratio_terms(self, y, eta, eta0, sigma=None, sigma0=None):
        lam, lam0 = self.mean_param(eta), self.mean_param(eta0)
        return -(lam - lam0) + y * np.log(lam / lam0)

    def kl_integrand(self, eta, eta0, sigma=None, sigma0=None):
        lam, lam0 = self.mean_param(eta), self.mean_param(eta0)
        return lam - lam0 + special.xlogy(lam0, lam0 / lam)

    def __repr__(self):
        return f"Poisson({self.link.base}, kappa_P={self.link.kappa_P})"


class GaussianError(ObservationModel):
    name = "gaussian"
    needs_sigma = True

    def logpdf(self, y, eta, sigma):
        r = (y - eta) / sigma
        return -0.5 * r * r - math.log(sigma) - 0.5 * math.log(2 * math.pi)

    def simulate(self, eta, sigma, gen):
        return eta + sigma * gen.standard_normal(np.shape(eta))

    def log_ratio_terms(self, y, eta, eta0, sigma, sigma0):
        return (
            math.log(sigma0 / sigma)
            + (y - eta0) ** 2 / (2 * sigma0**2)
            - (y - eta) ** 2 / (2 * sigma**2)
        )

    def kl_integrand(self, eta, eta0, sigma, sigma0):
        scale = np.log(sigma / sigma0) - 0.5 + sigma0**2 / (2 * sigma**2)
        return scale + (eta - eta0) ** 2 / (2 * sigma**2)

    def __repr__(self):
        return "GaussianError()"


class LaplaceError(ObservationModel):
    name = "laplace"
    needs_sigma = True

    def logpdf(self, y, eta, sigma):
        return -np.abs(y - eta) / sigma - math.log(2 * sigma)

    def simulate(self, eta, sigma, gen):
        return gen.laplace(eta, sigma, np.shape(eta))

    def log_ratio_terms(self, y, eta, eta0, sigma, sigma0):
        return math.log(sigma0 / sigma) + np.abs(y - eta0) / sigma0 - np.abs(y - eta) / sigma

    def kl_integrand(self, eta, eta0, sigma, sigma0):
        a = np.abs(eta - eta0)
        return np.log(sigma / sigma0) - 1 + a / sigma + (sigma0 / sigma) * np.exp(-a / sigma0)

    def __repr__(self):
        return "LaplaceError()"


MODEL_NAMES = ("binary", "poisson", "gaussian", "laplace")


def make_model(name: str, link: LinkSpec | None = None) -> ObservationModel:
    if name == "binary":
        return Binary(link)
    if name == "poisson":
        return Poisson(link)
    if name == "gaussian":
        return GaussianError()
    if name == "laplace":
        return LaplaceError()
    raise ValueError(f"unknown model {name!r}; valid: {', '.join(MODEL_NAMES)}")


# ---------------------------------------------------------------------------
# operations


def log_density(model: ObservationModel, theta: Theta, x, y) -> float:
    eta = theta.eta(x)
    y = model.validate_y(np.atleast_1d(y))
    return float(model.logpdf(y, eta, model._sigma(theta.sigma))[0])


def simulate_responses(model: ObservationModel, truth: TruthSpec, xs: CovariateSample, rng) -> Dataset:
    eta0 = truth.eta0.evaluate(xs.points)
    y = model.simulate(eta0, model._sigma(truth.sigma0), as_generator(rng))
    return Dataset(xs, y)


def log_likelihood_ratio(model: ObservationModel, theta: Theta, truth: TruthSpec, data: Dataset) -> float:
    """log R_n(theta) = log f_theta(Y_n) - log f_theta0(Y_n), summed per observation."""
    if len(data) == 0:
        return 0.0
    pts = data.covariates.points
    y = model.validate_y(data.y)
    terms = model.log_ratio_terms(
        y,
        theta.eta.evaluate(pts),
        truth.eta0.evaluate(pts),
        model._sigma(theta.sigma),
        model._sigma(truth.sigma0),
    )
    return math.fsum(np.asarray(terms, dtype=float))


# ---------------------------------------------------------------------------
# CSV persistence


def write_dataset_csv(path, data: Dataset) -> None:
    d = data.covariates.dim
    integer = np.issubdtype(np.asarray(data.y).dtype, np.integer)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j + 1}" for j in range(d)] + ["y"])
        for row, yi in zip(data.covariates.points, data.y):
            cells = [f"{v:.17g}" for v in row]
            cells.append(str(int(yi)) if integer else f"{float(yi):.17g}")
            w.writerow(cells)


def read_dataset_csv(path, response_kind: str = "real", scheme: str = "iid") -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if not header or header[-1] != "y":
        raise ValueError(f"{path}: last column must be 'y'")
    d = len(header) - 1
    pts = np.array([[float(c) for c in r[:d]] for r in body], dtype=float).reshape(-1, d)
    if response_kind in ("binary", "count"):
        y = np.array([int(r[d]) for r in body], dtype=np.int64)
    else:
        y = np.array([float(r[d]) for r in body], dtype=float)
    return Dataset(CovariateSample(as_points(pts, d) if len(pts) else pts, scheme), y)
