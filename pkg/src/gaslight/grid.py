"""Uniform grids on compact intervals, trapezoid quadrature and the L1 metric.

Every density in the library (process noise, observation noise, efforts,
priors) and every information state is a :class:`GridFunction`: nodal values
on a uniform :class:`Grid`. Off-node evaluation is piecewise-linear, and the
integral of the piecewise-linear interpolant equals the trapezoid sum, so a
:class:`GridDensity` is an exact probability density of its interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .errors import GridError

__all__ = [
    "Grid",
    "GridFunction",
    "GridDensity",
    "InformationState",
    "quadrature",
    "l1_distance",
    "normalize",
    "density_stats",
    "interpolate",
    "wrap",
    "sample_density",
    "cell_masses",
    "cdf_at",
]

DENSITY_TOL = 1e-9


@dataclass(frozen=True)
class Grid:
    """Uniform grid of ``n_points`` nodes on ``[lower, upper]``."""

    lower: float
    upper: float
    n_points: int

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise GridError("grid bounds must be finite")
        if not self.lower < self.upper:
            raise GridError(f"grid requires lower < upper, got [{self.lower}, {self.upper}]")
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise GridError(f"grid requires n_points >= 2, got {self.n_points}")
        object.__setattr__(self, "lower", float(self.lower))
        object.__setattr__(self, "upper", float(self.upper))
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def spacing(self) -> float:
        return (self.upper - self.lower) / (self.n_points - 1)

    @property
    def length(self) -> float:
        return self.upper - self.lower

    @cached_property
    def nodes(self) -> np.ndarray:
        x = np.linspace(self.lower, self.upper, self.n_points)
        x.flags.writeable = False
        return x

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(self.n_points, self.spacing)
        w[0] = w[-1] = 0.5 * self.spacing
        w.flags.writeable = False
        return w

    def function(self, values) -> "GridFunction":
        return GridFunction(self, values)


class GridFunction:
    """Real values attached to the nodes of a grid. Immutable."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        vals = np.array(values, dtype=float, copy=True)
        if vals.shape != (grid.n_points,):
            raise GridError(
                f"expected {grid.n_points} values for grid, got shape {vals.shape}"
            )
        if not np.all(np.isfinite(vals)):
            raise GridError("non-finite grid function")
        vals.flags.writeable = False
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)
        self._validate()

    def _validate(self):
        pass

    def __setattr__(self, name, value):
        raise AttributeError(f"{type(self).__name__} is immutable")

    def __repr__(self):
        return f"{type(self).__name__}(grid={self.grid!r}, mass={quadrature(self):.6g})"

    def __call__(self, x, outside: str = "clamp"):
        return interpolate(self, x, outside=outside)

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def scaled(self, factor: float) -> "GridFunction":
        return GridFunction(self.grid, self.values * factor)


class GridDensity(GridFunction):
    """Nonnegative grid function whose trapezoid integral is one."""

    __slots__ = ()

    def _validate(self):
        if np.any(self.values < 0):
            raise GridError("density values must be nonnegative")
        mass = quadrature(self)
        if abs(mass - 1.0) > DENSITY_TOL:
            raise GridError(f"density integrates to {mass!r}, not 1")


class InformationState(GridFunction):
    """Unnormalized nonnegative density over the state grid."""

    __slots__ = ()

    def _validate(self):
        if np.any(self.values < 0):
            raise GridError("information state must be nonnegative")

    @property
    def mass(self) -> float:
        return quadrature(self)

    def scaled(self, factor: float) -> "InformationState":
        return InformationState(self.grid, self.values * factor)


def quadrature(f) -> float:
    """Trapezoid integral of a grid function."""
    vals = np.asarray(f.values)
    if not np.all(np.isfinite(vals)):
        raise GridError("non-finite grid function")
    return float(np.dot(f.grid.weights, vals))


def _check_same_grid(a: GridFunction, b: GridFunction):
    if a.grid != b.grid:
        raise GridError("incompatible grids")


def l1_distance(a: GridFunction, b: GridFunction) -> float:
    """Trapezoid integral of ``|a - b|``."""
    _check_same_grid(a, b)
    return float(np.dot(a.grid.weights, np.abs(a.values - b.values)))


def normalize(f: GridFunction) -> GridDensity:
    """Rescale a nonnegative grid function to unit mass."""
    vals = np.asarray(f.values)
    if np.any(vals < 0):
        raise GridError("non-normalizable: negative values")
    mass = quadrature(f)
    if not mass > 0:
        raise GridError("non-normalizable: zero mass")
    return GridDensity(f.grid, vals / mass)


def density_stats(d: GridDensity) -> tuple[float, float]:
    """Return ``(max, min)`` of a density over its nodes.

    The piecewise-linear interpolant attains its extrema at nodes, so these
    are also the extrema over the whole interval.
    """
    return float(d.values.max()), float(d.values.min())


def wrap(x, grid: Grid):
    """Reduce ``x`` modulo the grid length into ``[lower, upper)``."""
    return grid.lower + np.mod(np.asarray(x, dtype=float) - grid.lower, grid.length)


def interpolate(f: GridFunction, x, outside: str = "clamp"):
    """Piecewise-linear evaluation of ``f`` at arbitrary points.

    ``outside`` selects the treatment of points beyond the grid: ``"clamp"``
    holds the end values, ``"zero"`` extends by zero, ``"wrap"`` reduces the
    argument modulo the interval length first.
    """
    g = f.grid
    x = np.asarray(x, dtype=float)
    if outside == "wrap":
        return np.interp(wrap(x, g), g.nodes, f.values)
    if outside == "zero":
        return np.interp(x, g.nodes, f.values, left=0.0, right=0.0)
    if outside == "clamp":
        return np.interp(x, g.nodes, f.values)
    raise ValueError(f"unknown outside mode {outside!r}")


def cell_masses(d: GridFunction) -> np.ndarray:
    """Integral of the interpolant over each of the ``n_points - 1`` cells."""
    v = d.values
    return 0.5 * d.grid.spacing * (v[:-1] + v[1:])


def sample_density(d: GridDensity, u) -> np.ndarray:
    """Exact inverse-CDF sampling from the piecewise-linear interpolant.

    ``u`` holds uniforms in ``[0, 1)``; the output has the same shape.
    """
    u = np.asarray(u, dtype=float)
    v = d.values
    h = d.grid.spacing
    cm = cell_masses(d)
    cdf = np.concatenate(([0.0], np.cumsum(cm)))
    target = u * cdf[-1]
    cell = np.searchsorted(cdf, target, side="right") - 1
    cell = np.clip(cell, 0, len(cm) - 1)
    r = np.maximum(target - cdf[cell], 0.0)
    f0 = v[cell]
    f1 = v[cell + 1]
    disc = np.maximum(f0 * f0 + 2.0 * (f1 - f0) * r / h, 0.0)
    denom = f0 + np.sqrt(disc)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(denom > 0, 2.0 * r / denom, 0.0)
    t = np.clip(t, 0.0, h)
    return d.grid.lower + cell * h + t


def cdf_at(d: GridFunction, x) -> np.ndarray:
    """Integral of the interpolant of ``d`` from ``lower`` to ``x`` (clipped to the grid)."""
    g = d.grid
    v = d.values
    x = np.clip(np.asarray(x, dtype=float), g.lower, g.upper)
    cum = np.concatenate(([0.0], np.cumsum(cell_masses(d))))
    pos = (x - g.lower) / g.spacing
    i = np.minimum(pos.astype(np.int64), g.n_points - 2)
    t = x - g.nodes[i]
    return cum[i] + v[i] * t + (v[i + 1] - v[i]) * t * t / (2.0 * g.spacing)
