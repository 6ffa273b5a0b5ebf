"""Density families on grids and perturbation families for gaslighting efforts.

Every effort here is a positive multiplicative perturbation of the nominal
observation density followed by exact renormalization, so the ratio
``phi / phi°`` stays bounded on the observation interval.
"""

from __future__ import annotations

import numpy as np

from .errors import GaslightError
from .grid import Grid, GridDensity, GridFunction, normalize

__all__ = [
    "truncated_normal",
    "uniform",
    "tilt",
    "bump",
    "step",
    "perturb",
]


def truncated_normal(grid: Grid, loc: float = 0.0, scale: float = 1.0) -> GridDensity:
    """Normal density restricted to the grid and renormalized by quadrature."""
    if not scale > 0:
        raise GaslightError(f"scale must be positive, got {scale}")
    z = (grid.nodes - loc) / scale
    return normalize(GridFunction(grid, np.exp(-0.5 * z * z)))


def uniform(grid: Grid) -> GridDensity:
    return GridDensity(grid, np.full(grid.n_points, 1.0 / grid.length))


def perturb(base: GridDensity, factor) -> GridDensity:
    """Renormalized ``base * factor``; ``factor`` must be positive at every node."""
    factor = np.asarray(factor, dtype=float)
    if np.any(factor <= 0):
        raise GaslightError("perturbation factor must be positive")
    return normalize(GridFunction(base.grid, base.values * factor))


def tilt(base: GridDensity, epsilon: float) -> GridDensity:
    """Linear tilt: weight ``1 + epsilon`` at the upper end, ``1 - epsilon`` at the lower."""
    if not abs(epsilon) < 1:
        raise GaslightError("tilt requires |epsilon| < 1")
    g = base.grid
    ramp = 2.0 * (g.nodes - g.lower) / g.length - 1.0
    return perturb(base, 1.0 + epsilon * ramp)


def bump(base: GridDensity, center: float, width: float, amplitude: float) -> GridDensity:
    """Raised-cosine bump of half-width ``width`` supported strictly inside the grid.

    ``amplitude > -1`` keeps the density positive; negative values carve a dip.
    """
    g = base.grid
    if not (g.lower < center - width and center + width < g.upper):
        raise GaslightError("bump support must lie strictly inside the observation interval")
    if not amplitude > -1:
        raise GaslightError("bump amplitude must exceed -1")
    r = np.abs(g.nodes - center) / width
    shape = np.where(r < 1, np.cos(0.5 * np.pi * np.minimum(r, 1.0)) ** 2, 0.0)
    return perturb(base, 1.0 + amplitude * shape)


def step(base: GridDensity, epsilon: float) -> GridDensity:
    """``1 + epsilon`` on the lower half of the nodes and ``1 - epsilon`` on the upper half.

    With an even node count the two halves carry equal trapezoid weight, so a
    uniform base stays normalized without rescaling.
    """
    if not abs(epsilon) < 1:
        raise GaslightError("step requires |epsilon| < 1")
    n = base.grid.n_points
    factor = np.where(np.arange(n) < n / 2, 1.0 + epsilon, 1.0 - epsilon)
    return perturb(base, factor)
