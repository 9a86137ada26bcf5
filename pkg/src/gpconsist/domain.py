"""Covariate space, field representation, truth catalog and expectations over Q.

The covariate space is always the unit cube ``[0, 1]^d`` and the covariate
measure Q is uniform on it.  Fields are real functions on the cube, either
tabulated on a tensor grid (multilinear interpolation) or given in closed form.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import RegularGridInterpolator

from .rng import as_generator

DEFAULT_RESOLUTION = {1: 401, 2: 51}
_CUBE_TOL = 1e-12


@dataclass(frozen=True)
class CovariateSpace:
    dim: int = 1

    def __post_init__(self):
        if int(self.dim) < 1:
            raise ValueError("dimension must be >= 1")

    def check_points(self, x) -> np.ndarray:
        """Return ``x`` as an (m, d) array, rejecting points outside the cube."""
        return as_points(x, self.dim)


def as_points(x, dim: int) -> np.ndarray:
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(-1, 1) if dim == 1 else pts.reshape(1, -1)
    if pts.shape[1] != dim:
        raise ValueError(f"expected {dim}-dimensional points, got shape {pts.shape}")
    if np.any(pts < -_CUBE_TOL) or np.any(pts > 1 + _CUBE_TOL):
        bad = pts[np.any((pts < -_CUBE_TOL) | (pts > 1 + _CUBE_TOL), axis=1)][0]
        raise ValueError(f"point {bad.tolist()} lies outside the unit cube")
    return np.clip(pts, 0.0, 1.0)


@dataclass(frozen=True)
class CovariateSample:
    points: np.ndarray
    scheme: str
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def concat(self, other: "CovariateSample") -> "CovariateSample":
        return CovariateSample(np.vstack([self.points, other.points]), self.scheme)


def sample_covariates(n: int, scheme: str, space: CovariateSpace, rng=None) -> CovariateSample:
    """Draw ``n`` covariates.

    ``iid`` draws uniformly on the cube; ``fixed-grid`` returns cell midpoints
    of an equal-volume partition.  For ``d > 1`` and ``n`` not a d-th power the
    lattice is built with ``ceil(n ** (1/d))`` points per axis and truncated,
    which is recorded in the sample metadata.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    d = space.dim
    if scheme == "iid":
        pts = as_generator(rng).random((n, d))
        return CovariateSample(pts, "iid")
    if scheme != "fixed-grid":
        raise ValueError(f"unknown covariate scheme {scheme!r}; use 'iid' or 'fixed-grid'")
    k = int(round(n ** (1.0 / d)))
    if k**d < n:
        k += 1
    mids = (np.arange(k) + 0.5) / k
    mesh = np.stack(np.meshgrid(*([mids] * d), indexing="ij"), axis=-1).reshape(-1, d)
    meta = {"per_axis": k, "truncated": int(k**d - n)}
    return CovariateSample(mesh[:n].copy(), "fixed-grid", meta)


# ---------------------------------------------------------------------------
# fields


class Field:
    """A real function on the unit cube, evaluated on (m, d) point arrays."""

    dim: int

    def __call__(self, x) -> np.ndarray:
        return self.evaluate(as_points(x, self.dim))

    def evaluate(self, pts: np.ndarray) -> np.ndarray:  # pragma: no cover - interface
        raise NotImplementedError

    def on_grid(self, resolution: int | None = None) -> "FieldFunction":
        return FieldFunction.from_callable(self, self.dim, resolution)


def uniform_axes(dim: int, resolution: int | None = None) -> tuple:
    res = resolution or DEFAULT_RESOLUTION.get(dim, 11)
    return tuple(np.linspace(0.0, 1.0, res) for _ in range(dim))


def grid_points(axes) -> np.ndarray:
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1).reshape(-1, len(axes))


class FieldFunction(Field):
    """Field tabulated on a tensor grid with multilinear interpolation."""

    def __init__(self, axes, values):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.dim = len(self.axes)
        vals = np.asarray(values, dtype=float)
        shape = tuple(len(a) for a in self.axes)
        self.values = vals.reshape(shape)
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite at every node")
        for a in self.axes:
            if a[0] > _CUBE_TOL or a[-1] < 1 - _CUBE_TOL or np.any(np.diff(a) <= 0):
                raise ValueError("grid axes must be increasing and span [0, 1]")
        self._interp = None

    @classmethod
    def from_callable(cls, fn: Callable, dim: int = 1, resolution: int | None = None):
        axes = uniform_axes(dim, resolution)
        vals = np.asarray(fn(grid_points(axes)), dtype=float)
        return cls(axes, vals)

    @classmethod
    def constant(cls, c: float, dim: int = 1):
        axes = tuple(np.array([0.0, 1.0]) for _ in range(dim))
        return cls(axes, np.full((2,) * dim, float(c)))

    @property
    def nodes(self) -> np.ndarray:
        return grid_points(self.axes)

    def evaluate(self, pts):
        if self.dim == 1:
            return np.interp(pts[:, 0], self.axes[0], self.values)
        if self._interp is None:
            self._interp = RegularGridInterpolator(self.axes, self.values, method="linear")
        return self._interp(pts)

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        shape = "x".join(str(len(a)) for a in self.axes)
        return f"FieldFunction(grid={shape})"


class ClosedFormField(Field):
    def __init__(self, fn: Callable, dim: int = 1, label: str = ""):
        self.fn = fn
        self.dim = dim
        self.label = label

    def evaluate(self, pts):
        out = np.asarray(self.fn(pts), dtype=float)
        return np.broadcast_to(out, (pts.shape[0],)).copy()

    def __repr__(self):
        return f"ClosedFormField({self.label or self.fn!r})"


def interpolation_matrix(axes, pts: np.ndarray) -> np.ndarray:
    """Dense matrix W with ``W @ values.ravel() == multilinear interp at pts``."""
    shape = tuple(len(a) for a in axes)
    m = pts.shape[0]
    W = np.zeros((m, int(np.prod(shape))))
    lo_idx, fracs = [], []
    for j, a in enumerate(axes):
        i = np.clip(np.searchsorted(a, pts[:, j], side="right") - 1, 0, len(a) - 2)
        lo_idx.append(i)
        fracs.append((pts[:, j] - a[i]) / (a[i + 1] - a[i]))
    rows = np.arange(m)
    for corner in np.ndindex(*(2,) * len(axes)):
        w = np.ones(m)
        idx = []
        for j, c in enumerate(corner):
            w = w * (fracs[j] if c else 1 - fracs[j])
            idx.append(lo_idx[j] + c)
        flat = np.ravel_multi_index(tuple(idx), shape)
        np.add.at(W, (rows, flat), w)
    return W


# ---------------------------------------------------------------------------
# truths


@dataclass(frozen=True)
class TruthSpec:
    name: str
    eta0: Field
    sigma0: float | None = None
    representable_in_prior: bool = True
    kappa0: float = 2.0
    jumps: tuple = ()

    def __post_init__(self):
        if self.jumps and self.representable_in_prior:
            raise ValueError("a truth with jumps cannot be representable in a continuous prior")
        if self.sigma0 is not None and self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")

    def with_sigma(self, sigma0: float) -> "TruthSpec":
        return TruthSpec(self.name, self.eta0, sigma0, self.representable_in_prior, self.kappa0, self.jumps)


def _sin(x):
    return np.sin(2 * np.pi * x[:, 0])


def _bump(x):
    r2 = np.sum((x - 0.5) ** 2, axis=1)
    return 2.0 * np.exp(-r2 / 0.02) - 1.0


def _step(x):
    return np.where(x[:, 0] < 0.5, -1.0, 1.0)


CATALOG_NAMES = ("constant(c)", "smooth-sin", "smooth-bump", "step-jump")


def truth_catalog(name: str, dim: int = 1, sigma0: float | None = None) -> TruthSpec:
    """Look up a named truth.

    ``constant(c)`` is a constant field; ``smooth-sin`` is ``sin(2 pi x_1)``;
    ``smooth-bump`` is a Gaussian bump centred in the cube ranging over
    ``(-1, 1]``; ``step-jump`` is ``-1`` left of ``x_1 = 0.5`` and ``+1`` from
    there on, which no continuous prior path can reproduce.
    """
    m = re.fullmatch(r"constant\(\s*([-+0-9.eE]+)\s*\)", name.strip())
    if m:
        c = float(m.group(1))
        f = ClosedFormField(lambda x, c=c: np.full(x.shape[0], c), dim, name)
        return TruthSpec(name, f, sigma0, True, abs(c) + 1.0)
    if name == "constant":
        return truth_catalog("constant(0)", dim, sigma0)
    if name == "smooth-sin":
        return TruthSpec(name, ClosedFormField(_sin, dim, name), sigma0, True, 2.0)
    if name == "smooth-bump":
        return TruthSpec(name, ClosedFormField(_bump, dim, name), sigma0, True, 2.0)
    if name == "step-jump":
        return TruthSpec(name, ClosedFormField(_step, dim, name), sigma0, False, 2.0, jumps=(0.5,))
    raise ValueError(f"unknown truth {name!r}; valid names: {', '.join(CATALOG_NAMES)}")


# ---------------------------------------------------------------------------
# expectations over Q


@dataclass(frozen=True)
class Quadrature:
    """Composite tensor Gauss-Legendre rule on the cube.

    Each axis is split into ``panels`` equal panels with ``order`` nodes each.
    The error estimate is the difference from the rule with half as many
    panels (or half the order when there is a single panel).
    """

    panels: int = 16
    order: int = 8

    def rule(self, dim: int) -> tuple[np.ndarray, np.ndarray]:
        return _tensor_rule(self.panels, self.order, dim)

    def coarse(self) -> "Quadrature":
        if self.panels > 1:
            return Quadrature(self.panels // 2, self.order)
        return Quadrature(1, max(1, self.order // 2))

    @property
    def n_nodes_1d(self) -> int:
        return self.panels * self.order


@dataclass(frozen=True)
class MonteCarlo:
    m: int = 10_000


def _tensor_rule(panels: int, order: int, dim: int):
    if dim > 2:
        raise ValueError("tensor quadrature supports d <= 2; use MonteCarlo for d > 2")
    t, w = leggauss(order)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    x1 = (edges[:-1, None] + (t[None, :] + 1) * h[:, None] / 2).ravel()
    w1 = (w[None, :] * h[:, None] / 2).ravel()
    if dim == 1:
        return x1[:, None], w1
    xs = grid_points([x1, x1])
    ws = np.outer(w1, w1).ravel()
    return xs, ws


def _checked(g, pts):
    vals = np.asarray(g(pts), dtype=float).reshape(-1)
    bad = ~np.isfinite(vals)
    if np.any(bad):
        raise FloatingPointError(f"integrand is not finite at x = {pts[np.argmax(bad)].tolist()}")
    return vals


def expect_over_Q(g: Callable, space: CovariateSpace, method=None, rng=None) -> tuple[float, float]:
    """Return ``(E_X[g(X)], err)`` under the uniform covariate measure.

    ``g`` takes an (m, d) array and returns m values.  With a ``Quadrature``
    the error is an embedded-rule difference; with ``MonteCarlo`` it is the
    standard error of the sample mean.
    """
    method = method or Quadrature()
    if isinstance(method, MonteCarlo):
        pts = as_generator(rng).random((method.m, space.dim))
        vals = _checked(g, pts)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(method.m))
    xs, ws = method.rule(space.dim)
    val = float(ws @ _checked(g, xs))
    xc, wc = method.coarse().rule(space.dim)
    err = abs(val - float(wc @ _checked(g, xc)))
    return val, err
