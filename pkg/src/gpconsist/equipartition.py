"""Empirical checks of the asymptotic equipartition property.

For a fixed parameter theta, ``n^-1 log R_n(theta) + h(theta)`` should vanish
almost surely as n grows, and uniformly over compact parameter sets.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import CovariateSpace, sample_covariates
from .kl import kl_rate
from .models import log_likelihood_ratio, simulate_responses
from .prior import sieve_membership
from .rng import RngContract, as_generator


@dataclass(frozen=True)
class EquipartitionTrace:
    model: str
    n_values: tuple
    deviations: np.ndarray  # (len(n_values), replicates)
    h: float

    def medians(self) -> np.ndarray:
        return np.median(np.abs(self.deviations), axis=1)

    def slope(self) -> float:
        """Slope of log median |deviation| against log n."""
        return scaling_slope(self.n_values, self.medians())

    def rows(self):
        for i, n in enumerate(self.n_values):
            for r, dev in enumerate(self.deviations[i]):
                yield self.model, int(n), r, float(dev)


def scaling_slope(n_values, values) -> float:
    return float(np.polyfit(np.log(np.asarray(n_values, float)), np.log(np.asarray(values, float)), 1)[0])


def _stream(rng, *path):
    # RngContract gives each (n, replicate) its own stream; a bare Generator is consumed in order.
    if isinstance(rng, RngContract):
        return rng.child(*path).generator()
    return as_generator(rng)


def _dataset(model, truth, n, scheme, gen):
    xs = sample_covariates(n, scheme, CovariateSpace(truth.eta0.dim), gen)
    return simulate_responses(model, truth, xs, gen)


def equipartition_trace(
    model, theta, truth, n_values, replicates: int, rng, scheme: str = "iid", integrator=None
) -> EquipartitionTrace:
    n_values = tuple(int(n) for n in n_values)
    if any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be increasing")
    if replicates < 1:
        raise ValueError("replicates must be >= 1")
    h = kl_rate(model, theta, truth, integrator).value
    dev = np.empty((len(n_values), replicates))
    for i, n in enumerate(n_values):
        for r in range(replicates):
            data = _dataset(model, truth, n, scheme, _stream(rng, "n", n, "rep", r))
            dev[i, r] = log_likelihood_ratio(model, theta, truth, data) / n + h
    if not np.all(np.isfinite(dev)):
        raise FloatingPointError("non-finite equipartition deviation")
    return EquipartitionTrace(model.name, n_values, dev, h)


def uniform_convergence_check(
    model,
    thetas,
    truth,
    n: int,
    replicates: int,
    rng,
    sieve=None,
    sieve_level: int | None = None,
    scheme: str = "iid",
    integrator=None,
) -> np.ndarray:
    """Per-replicate sup over ``thetas`` of |n^-1 log R_n + h| on a shared dataset."""
    if sieve is not None and sieve_level is not None:
        for t in thetas:
            if not sieve_membership(t, sieve_level, sieve):
                raise ValueError(f"theta outside the sieve G_{sieve_level}")
    hs = [kl_rate(model, t, truth, integrator).value for t in thetas]
    out = np.empty(replicates)
    for r in range(replicates):
        data = _dataset(model, truth, n, scheme, _stream(rng, "n", n, "rep", r))
        out[r] = max(abs(log_likelihood_ratio(model, t, truth, data) / n + h) for t, h in zip(thetas, hs))
    return out
