"""Simulation checks of the concentration inequalities used in the consistency proofs.

Hoeffding is checked with its exact constant.  The Hanson-Wright, Bernstein
and Poisson MGF bounds carry unspecified constants; those are calibrated on a
training grid (smallest constant that covers every training point) and then
checked on a disjoint, interleaved validation grid.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .prior import wilson_interval
from .rng import as_generator

CI_LEVEL = 0.99
Z_UPPER = 2.5758293035489004  # two-sided 99% normal quantile
GRID_POINTS = 17  # 9 training (both ends) interleaved with 8 validation points
MIN_TAIL_COUNT = 30


@dataclass
class TailCheckReport:
    kind: str
    params: dict
    t: np.ndarray
    empirical: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    bound: np.ndarray
    verdict: list
    role: list
    constant: float | None = None
    exact: np.ndarray | None = None
    extra: dict = field(default_factory=dict)

    def validation_passed(self) -> bool:
        return all(v == "PASS" for v, r in zip(self.verdict, self.role) if r == "validate")

    def rows(self):
        for i in range(len(self.t)):
            yield (self.kind, float(self.t[i]), float(self.empirical[i]), float(self.ci_hi[i]),
                   float(self.bound[i]), self.verdict[i], self.role[i])

    def to_dict(self) -> dict:
        out = {}
        for k, v in asdict(self).items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out


def log_grid(lo: float, hi: float, points: int = GRID_POINTS) -> np.ndarray:
    return np.exp(np.linspace(math.log(lo), math.log(hi), points))


def split_roles(points: int) -> list:
    return ["train" if i % 2 == 0 else "validate" for i in range(points)]


def _tails(dev: np.ndarray, thresholds: np.ndarray):
    dev = np.sort(dev)
    m = len(dev)
    counts = m - np.searchsorted(dev, thresholds, side="right")
    emp = counts / m
    cis = np.array([wilson_interval(k, m, CI_LEVEL) for k in counts])
    return counts, emp, cis[:, 0], cis[:, 1]


def _window_from_quantiles(dev: np.ndarray, scale: float, top: float = 0.5):
    """Thresholds (in t units) between the ``top`` tail level and MIN_TAIL_COUNT exceedances."""
    m = len(dev)
    q_hi = np.quantile(dev, 1 - MIN_TAIL_COUNT / m)
    q_lo = np.quantile(dev, 1 - top)
    return q_lo / scale, q_hi / scale


def _verdicts(counts, ci_hi, bound):
    out = []
    for k, c, b in zip(counts, ci_hi, bound):
        if c <= b * (1 + 1e-12):
            out.append("PASS")
        elif k == 0:
            out.append("UNRESOLVED")
        else:
            out.append("FAIL")
    return out


def _chunked(samples: int, per_sample: int, budget: int = 4_000_000):
    step = max(1, budget // max(per_sample, 1))
    for start in range(0, samples, step):
        yield min(step, samples - start)


def check_hoeffding(range_width: float, n: int, t_grid=None, samples: int = 100_000, rng=None) -> TailCheckReport:
    """P(|mean - mu| > t) for n summands taking 0 or ``range_width`` with probability 1/2.

    The two-point law attains the largest variance allowed by the range, so it
    is the least favourable bounded summand for the bound 2 exp(-2 n t^2 / R^2).
    """
    if samples < 10_000:
        raise ValueError("samples must be >= 10^4")
    gen = as_generator(rng)
    means = gen.binomial(n, 0.5, samples) * range_width / n
    dev = np.abs(means - range_width / 2)
    if t_grid is None:
        lo = range_width * math.sqrt(math.log(2) / (2 * n))
        _, hi = _window_from_quantiles(dev, 1.0)
        t_grid = log_grid(lo, max(hi, lo * 1.01))
    t = np.asarray(t_grid, dtype=float)
    counts, emp, lo_ci, hi_ci = _tails(dev, t)
    bound = 2 * np.exp(-2 * n * t**2 / range_width**2)
    return TailCheckReport(
        "hoeffding", {"range": range_width, "n": n, "samples": samples}, t, emp, lo_ci, hi_ci, bound,
        _verdicts(counts, hi_ci, bound), ["validate"] * len(t),
    )


def poisson_log_mgf(t, lam: float, lam0: float):
    """Exact log E exp(t z) for z = (y - lam0) log(lam / lam0), y ~ Poisson(lam0)."""
    ell = math.log(lam / lam0)
    t = np.asarray(t, dtype=float)
    return -t * lam0 * ell + lam0 * np.expm1(t * ell)


def check_poisson_subexponential(
    lambda_pair, t_grid=None, samples: int = 200_000, rng=None, c_ref: float = 1.0
) -> TailCheckReport:
    """Empirical MGF of the Poisson log-ratio summand against exp(c^2 t^2), c = C |lam - lam0|."""
    lam, lam0 = (float(v) for v in lambda_pair)
    delta = abs(lam - lam0)
    window = math.inf if delta == 0 else 1.0 / (c_ref * delta)
    if t_grid is None:
        half = log_grid(window * 1e-2, window * 0.95) if delta > 0 else log_grid(1e-2, 1.0)
        t_grid = np.concatenate([-half[::-1], half])
        roles = split_roles(len(half))[::-1] + split_roles(len(half))
    else:
        roles = split_roles(len(t_grid))
    t = np.asarray(t_grid, dtype=float)
    if np.any(np.abs(t) > window):
        raise ValueError(f"t outside the sub-exponential window |t| <= {window:.4g}")
    gen = as_generator(rng)
    y = gen.poisson(lam0, samples)
    ell = math.log(lam / lam0)
    z = (y - lam0) * ell
    e = np.exp(np.outer(t, z))
    emp = e.mean(axis=1)
    se = e.std(axis=1, ddof=1) / math.sqrt(samples)
    exact = np.exp(poisson_log_mgf(t, lam, lam0))
    hi = emp + Z_UPPER * se
    train = np.array([r == "train" for r in roles])
    need = np.zeros(len(t))
    pos = (hi > 1) & (t != 0)
    need[pos] = np.sqrt(np.log(hi[pos])) / (delta * np.abs(t[pos])) if delta > 0 else 0.0
    C = float(need[train].max()) if train.any() else 0.0
    bound = np.exp((C * delta * t) ** 2)
    verdict = ["PASS" if h <= b * (1 + 1e-12) else "FAIL" for h, b in zip(hi, bound)]
    return TailCheckReport(
        "poisson-mgf",
        {"lambda": lam, "lambda0": lam0, "samples": samples, "c_ref": c_ref},
        t, emp, emp - Z_UPPER * se, hi, bound, verdict, roles, C, exact,
        {"se": se.tolist(), "exact_match_3se": bool(np.all(np.abs(emp - exact) <= 3 * se + 1e-15)),
         "calibrated_window": (1.0 / (C * delta)) if C * delta > 0 else math.inf},
    )


def _hw_exponent(kappa, n):
    kappa = np.asarray(kappa, dtype=float)
    return n * np.minimum(kappa**2 / 16, kappa / 4)


def check_hanson_wright(n: int, kappa_grid=None, samples: int = 100_000, rng=None) -> TailCheckReport:
    """P(|z'z - n| > n kappa / 2) against 2 exp(-n min(kappa^2/(16 c0), kappa/(4 c0)))."""
    if samples < 10_000:
        raise ValueError("samples must be >= 10^4")
    gen = as_generator(rng)
    q = np.concatenate([np.sum(gen.standard_normal((m, n)) ** 2, axis=1) for m in _chunked(samples, n)])
    dev = np.abs(q - n)
    if kappa_grid is None:
        lo, hi = _window_from_quantiles(dev, n / 2)
        kappa_grid = log_grid(lo, hi)
    kappa = np.asarray(kappa_grid, dtype=float)
    roles = split_roles(len(kappa))
    counts, emp, lo_ci, hi_ci = _tails(dev, n * kappa / 2)
    expo = _hw_exponent(kappa, n)
    need = expo / np.log(2 / hi_ci)
    train = np.array([r == "train" for r in roles])
    c0 = float(need[train].max())
    bound = 2 * np.exp(-np.divide(expo, c0, out=np.zeros_like(expo), where=expo > 0))
    return TailCheckReport(
        "hanson-wright", {"n": n, "samples": samples}, kappa, emp, lo_ci, hi_ci, bound,
        _verdicts(counts, hi_ci, bound), roles, c0,
    )


def _bernstein_exponent(t, n, s):
    t = np.asarray(t, dtype=float)
    return (n / 2) * np.minimum(t**2 / (4 * s**2), t / (2 * s))


def _bernstein_scale(t: float, n: int, r: float) -> float:
    """Smallest s with (n/2) min(t^2/(4 s^2), t/(2 s)) <= r."""
    if r <= 0:
        return math.inf
    if r <= n / 2:
        return t * math.sqrt(n / (8 * r))
    return n * t / (4 * r)


def check_bernstein_laplace(sigma0: float, n: int, t_grid=None, samples: int = 100_000, rng=None) -> TailCheckReport:
    """Mean of |eps_i|/sigma0 - 1 with Laplace(sigma0) errors against the Bernstein form."""
    if samples < 10_000:
        raise ValueError("samples must be >= 10^4")
    gen = as_generator(rng)
    means = np.concatenate(
        [np.mean(np.abs(gen.laplace(0.0, sigma0, (m, n))) / sigma0 - 1.0, axis=1) for m in _chunked(samples, n)]
    )
    dev = np.abs(means)
    if t_grid is None:
        lo, hi = _window_from_quantiles(dev, 1.0)
        t_grid = log_grid(lo, hi)
    t = np.asarray(t_grid, dtype=float)
    roles = split_roles(len(t))
    counts, emp, lo_ci, hi_ci = _tails(dev, t)
    need = np.array([_bernstein_scale(ti, n, math.log(2 / c)) for ti, c in zip(t, hi_ci)])
    train = np.array([r == "train" for r in roles])
    s = float(need[train].max())
    bound = 2 * np.exp(-_bernstein_exponent(t, n, s)) if s > 0 else np.full(len(t), 2.0)
    return TailCheckReport(
        "bernstein-laplace", {"sigma0": sigma0, "n": n, "samples": samples}, t, emp, lo_ci, hi_ci, bound,
        _verdicts(counts, hi_ci, bound), roles, s,
    )
