"""Tabulated densities and solver grids.

GridDensity carries its own abscissae plus the trapezoid normalization it
was constructed with; cross-grid operations resample by linear
interpolation. SolverGrid fixes the discretization of the PDE solvers;
geometric grids use an exact 2^(1/m) ratio so halving or doubling a size
is an integer index shift.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["GridDensity", "SolverGrid"]


@dataclass
class GridDensity:
    """Function or density tabulated on a 1D grid (or 2D tensor grid).

    For dim == 2, grid is a (z_grid, x_grid) tuple and values has shape
    (len(z_grid), len(x_grid)).
    """

    grid: np.ndarray | tuple
    values: np.ndarray
    dim: int = 1
    normalization: float = field(default=None)

    def __post_init__(self):
        if self.dim == 1:
            self.grid = np.asarray(self.grid, dtype=float)
            self.values = np.asarray(self.values, dtype=float)
            if self.grid.ndim != 1 or self.grid.size != self.values.size:
                raise ValueError("grid and values must be 1D of equal length")
            if np.any(np.diff(self.grid) <= 0):
                raise ValueError("grid must be strictly increasing")
        elif self.dim == 2:
            zg, xg = self.grid
            self.grid = (np.asarray(zg, dtype=float), np.asarray(xg, dtype=float))
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (self.grid[0].size, self.grid[1].size):
                raise ValueError("2D values must have shape (len(z), len(x))")
        else:
            raise ValueError("dim must be 1 or 2")
        if self.normalization is None:
            self.normalization = self.integral()

    def integral(self):
        if self.dim == 1:
            return float(np.trapezoid(self.values, self.grid))
        zg, xg = self.grid
        return float(np.trapezoid(np.trapezoid(self.values, xg, axis=1), zg))

    def normalize(self):
        """Return a copy scaled to unit integral."""
        total = self.integral()
        if total <= 0:
            raise ValueError("cannot normalize a density with nonpositive mass")
        return GridDensity(self.grid, self.values / total, dim=self.dim)

    def __call__(self, x):
        if self.dim != 1:
            raise NotImplementedError("pointwise evaluation is 1D only")
        return np.interp(x, self.grid, self.values, left=0.0, right=0.0)

    def resample(self, new_grid):
        if self.dim != 1:
            raise NotImplementedError
        return GridDensity(new_grid, np.interp(new_grid, self.grid, self.values,
                                               left=0.0, right=0.0))

    def cdf(self):
        """Cumulative trapezoid integral on the grid (starts at 0)."""
        if self.dim != 1:
            raise NotImplementedError
        seg = 0.5 * (self.values[1:] + self.values[:-1]) * np.diff(self.grid)
        return np.concatenate([[0.0], np.cumsum(seg)])

    def cumulative_at(self, x):
        """Exact integral of the linear interpolant from grid[0] to x.

        The interpolant is piecewise linear, so its cumulative is piecewise
        quadratic; evaluating it exactly (rather than interpolating the
        knot cumulative) keeps fine re-binning free of cell-average bias.
        """
        if self.dim != 1:
            raise NotImplementedError
        g, v = self.grid, self.values
        knots = self.cdf()
        x = np.asarray(x, dtype=float)
        xc = np.clip(x, g[0], g[-1])
        idx = np.clip(np.searchsorted(g, xc, side="right") - 1, 0, g.size - 2)
        xl = g[idx]
        dx = g[idx + 1] - xl
        frac = (xc - xl) / dx
        out = knots[idx] + (xc - xl) * (v[idx] + 0.5 * frac * (v[idx + 1] - v[idx]))
        return np.where(x >= g[-1], knots[-1], out)

    def sample(self, rng, size=None):
        """Inverse-CDF draws treating the tabulation as exact."""
        if self.dim != 1:
            raise NotImplementedError
        c = self.cdf()
        c = c / c[-1]
        u = rng.random(size)
        return np.interp(u, c, self.grid)

    def marginal(self, axis):
        """Integrate a 2D density over one variable (0: over z, 1: over x)."""
        if self.dim != 2:
            raise ValueError("marginal is for 2D densities")
        zg, xg = self.grid
        if axis == 0:
            return GridDensity(xg, np.trapezoid(self.values, zg, axis=0))
        return GridDensity(zg, np.trapezoid(self.values, xg, axis=1))

    def check_normalization(self, rtol=1e-12):
        declared = self.normalization
        actual = self.integral()
        scale = max(abs(declared), abs(actual), 1e-300)
        return abs(declared - actual) / scale <= rtol


@dataclass(frozen=True)
class SolverGrid:
    """Discretization for the structured-population solvers.

    kind "uniform": n_points cells on [0, x_max].
    kind "geometric": nodes x_min * 2^(j/m), j = 0..n-1, up to x_max; the
    ratio is an exact m-th root of 2 so x -> x/2 shifts indices by m.
    """

    kind: str
    x_max: float
    x_min: float = 0.0
    n_points: int = 256
    points_per_octave: int = 32

    def __post_init__(self):
        if self.kind not in ("uniform", "geometric"):
            raise ValueError(f"unknown grid kind {self.kind!r}")
        if self.kind == "geometric" and self.x_min <= 0:
            raise ValueError("geometric grid needs x_min > 0")

    @classmethod
    def uniform(cls, x_max, n_points):
        return cls(kind="uniform", x_max=float(x_max), n_points=int(n_points))

    @classmethod
    def geometric(cls, x_min, x_max, points_per_octave=32):
        return cls(kind="geometric", x_min=float(x_min), x_max=float(x_max),
                   points_per_octave=int(points_per_octave))

    @property
    def nodes(self):
        if self.kind == "uniform":
            return np.linspace(0.0, self.x_max, self.n_points + 1)[1:]
        m = self.points_per_octave
        n_octaves = np.log2(self.x_max / self.x_min)
        n = int(np.floor(n_octaves * m)) + 1
        return self.x_min * 2.0 ** (np.arange(n) / m)

    @property
    def widths(self):
        """Cell widths for count <-> density conversion."""
        x = self.nodes
        if self.kind == "uniform":
            w = np.full(x.size, self.x_max / self.n_points)
            return w
        r = 2.0 ** (1.0 / self.points_per_octave)
        # cells centered at the nodes in log scale
        return x * (np.sqrt(r) - 1.0 / np.sqrt(r))

    @property
    def ratio(self):
        if self.kind != "geometric":
            raise ValueError("ratio only defined for geometric grids")
        return 2.0 ** (1.0 / self.points_per_octave)

    @property
    def halving_shift(self):
        """Index shift realizing x -> x/2 on a geometric grid."""
        if self.kind != "geometric":
            raise ValueError("halving shift only defined for geometric grids")
        return self.points_per_octave

    def counts_to_density(self, counts):
        return counts / self.widths

    def density_to_counts(self, density_values):
        return density_values * self.widths
