"""Division-rate functions, growth laws and fragmentation kernels.

A division rate is a nonnegative hazard in the trigger variable (age for
timer models, size for sizer models, added size for adder models). Rates
are tabulated on a strictly increasing grid with an explicit extrapolation
policy, optionally tagged with a closed form that takes precedence when
evaluating. The cumulative hazard must diverge so that every cell divides.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

__all__ = ["RateFunction", "GrowthLaw", "FragmentationKernel"]

TAIL_CONSTANT = "constant"
TAIL_POWER = "power"
TAIL_ZERO_BELOW = "zero-below"
_TAILS = (TAIL_CONSTANT, TAIL_POWER, TAIL_ZERO_BELOW)


@dataclass(frozen=True)
class RateFunction:
    """Nonnegative division rate, tabulated plus tail policy.

    grid: strictly increasing abscissae of the trigger variable.
    values: rate samples, linearly interpolated between grid points.
    tail: extrapolation above the last grid point — "constant" holds the
        last value, "power" continues as values[-1]*(x/grid[-1])**tail_exponent,
        "zero-below" holds the last value above and is zero below grid[0].
    closed_form: optional ("constant", b) | ("power", c, gamma) |
        ("step", c, a0) tag overriding the tabulation.
    """

    grid: np.ndarray
    values: np.ndarray
    tail: str = TAIL_CONSTANT
    tail_exponent: float = 0.0
    closed_form: tuple | None = None

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.values, dtype=float)
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "values", v)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("grid must be strictly increasing with >= 2 points")
        if g[0] < 0:
            raise ValueError("grid must start at a nonnegative abscissa")
        if v.shape != g.shape:
            raise ValueError("values must match grid shape")
        if np.any(v < 0):
            raise ValueError("rate values must be nonnegative")
        if self.tail not in _TAILS:
            raise ValueError(f"unknown tail policy {self.tail!r}")
        if self.tail == TAIL_POWER and self.tail_exponent < 0:
            raise ValueError("power tail exponent must be >= 0")
        if self.closed_form is not None:
            kind = self.closed_form[0]
            if kind == "constant":
                if self.closed_form[1] <= 0:
                    raise ValueError("constant rate must be positive")
            elif kind == "power":
                c, gamma = self.closed_form[1:]
                if c <= 0:
                    raise ValueError("power rate coefficient must be positive")
                if gamma <= -1:
                    raise ValueError("power exponent <= -1 has divergent hazard at 0")
            elif kind == "step":
                if self.closed_form[1] <= 0:
                    raise ValueError("step rate level must be positive")
            else:
                raise ValueError(f"unknown closed form {kind!r}")
        elif v[-1] <= 0:
            # the tail carries the hazard to infinity; a vanishing last value
            # would make the cumulative hazard converge
            raise ValueError("last tabulated value must be positive (hazard must diverge)")

    # -- constructors -------------------------------------------------------

    @classmethod
    def constant(cls, b, x_max=10.0):
        g = np.array([0.0, x_max])
        return cls(g, np.full(2, float(b)), closed_form=("constant", float(b)))

    @classmethod
    def power(cls, c, gamma, x_max=10.0):
        g = np.linspace(0.0, x_max, 65)
        with np.errstate(divide="ignore"):
            v = c * np.where(g > 0, g, 1.0) ** gamma
        v[g == 0] = 0.0 if gamma > 0 else c
        return cls(g, v, tail=TAIL_POWER, tail_exponent=float(gamma),
                   closed_form=("power", float(c), float(gamma)))

    @classmethod
    def step(cls, c, a0, x_max=None):
        if x_max is None:
            x_max = 2.0 * a0 + 1.0
        g = np.array([0.0, a0, x_max])
        return cls(g, np.array([0.0, float(c), float(c)]),
                   closed_form=("step", float(c), float(a0)))

    @classmethod
    def tabulated(cls, grid, values, tail=TAIL_CONSTANT, tail_exponent=0.0):
        return cls(np.asarray(grid, float), np.asarray(values, float),
                   tail=tail, tail_exponent=tail_exponent)

    # -- evaluation ---------------------------------------------------------

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if self.closed_form is not None:
            kind = self.closed_form[0]
            if kind == "constant":
                return np.broadcast_to(self.closed_form[1], x.shape).copy() if x.ndim else float(self.closed_form[1])
            if kind == "power":
                c, gamma = self.closed_form[1:]
                with np.errstate(divide="ignore"):
                    out = c * np.where(x > 0, x, 1.0) ** gamma
                return np.where(x > 0, out, 0.0 if gamma > 0 else (c if gamma == 0 else np.inf))
            c, a0 = self.closed_form[1:]
            return np.where(x >= a0, c, 0.0)
        g, v = self.grid, self.values
        out = np.interp(x, g, v)
        above = x > g[-1]
        if np.any(above):
            if self.tail == TAIL_POWER:
                out = np.where(above, v[-1] * (x / g[-1]) ** self.tail_exponent, out)
            else:
                out = np.where(above, v[-1], out)
        if self.tail == TAIL_ZERO_BELOW:
            out = np.where(x < g[0], 0.0, out)
        return out if out.ndim else float(out)

    def hazard(self, x1, x0=0.0):
        """Cumulative hazard ∫_{x0}^{x1} of the rate; exact on the tabulation.

        The tabulated rate is piecewise linear, so the integral is a sum of
        exact trapezoids; tails and closed forms integrate analytically.
        """
        x1 = np.asarray(x1, dtype=float)
        x0 = np.asarray(x0, dtype=float)
        if np.any(x0 < 0) or np.any(x1 < x0):
            raise ValueError("need 0 <= x0 <= x1")
        return self._antiderivative(x1) - self._antiderivative(x0)

    def _antiderivative(self, x):
        x = np.asarray(x, dtype=float)
        if self.closed_form is not None:
            kind = self.closed_form[0]
            if kind == "constant":
                return self.closed_form[1] * x
            if kind == "power":
                c, gamma = self.closed_form[1:]
                return c * x ** (gamma + 1.0) / (gamma + 1.0)
            c, a0 = self.closed_form[1:]
            return c * np.maximum(0.0, x - a0)
        g, v = self.grid, self.values
        knots = self._knot_hazard()
        idx = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        xl, xr = g[idx], g[idx + 1]
        vl, vr = v[idx], v[idx + 1]
        frac = np.clip((x - xl) / (xr - xl), 0.0, None)
        inside = knots[idx] + (x - xl) * (vl + 0.5 * frac * (vr - vl))
        out = np.where(x <= g[-1], inside, 0.0)
        above = x > g[-1]
        if np.any(above):
            if self.tail == TAIL_POWER:
                gam = self.tail_exponent
                tail_int = v[-1] * g[-1] / (gam + 1.0) * ((np.where(above, x, g[-1]) / g[-1]) ** (gam + 1.0) - 1.0)
            else:
                tail_int = v[-1] * (np.where(above, x, g[-1]) - g[-1])
            out = np.where(above, knots[-1] + tail_int, out)
        if self.tail == TAIL_ZERO_BELOW:
            below = x < g[0]
            out = np.where(below, 0.0, out)
        else:
            # below grid[0] the first value is held constant
            below = x < g[0]
            if np.any(below):
                out = np.where(below, knots[0] - v[0] * (g[0] - x), out)
        return out if out.ndim else float(out)

    def _knot_hazard(self):
        g, v = self.grid, self.values
        seg = 0.5 * (v[1:] + v[:-1]) * np.diff(g)
        knots = np.concatenate([[v[0] * g[0]], v[0] * g[0] + np.cumsum(seg)])
        # reference point: hazard measured from 0 assumes the first value is
        # held constant on [0, grid[0]] (grid normally starts at 0)
        if self.tail == TAIL_ZERO_BELOW:
            knots = knots - v[0] * g[0]
        return knots

    def hazard_inverse(self, target, x0=0.0):
        """Solve ∫_{x0}^{x} rate = target for x (vectorised, exact).

        On the tabulation the cumulative hazard is piecewise quadratic, so
        each solve reduces to a quadratic root in the bracketing segment;
        tails and closed forms invert analytically.
        """
        target = np.asarray(target, dtype=float)
        scalar = target.ndim == 0
        t = np.atleast_1d(target) + self._antiderivative(np.asarray(x0, dtype=float))
        if np.any(np.atleast_1d(target) < 0):
            raise ValueError("hazard target must be nonnegative")
        out = self._invert_antiderivative(np.atleast_1d(t))
        return float(out[0]) if scalar else out

    def _invert_antiderivative(self, t):
        if self.closed_form is not None:
            kind = self.closed_form[0]
            if kind == "constant":
                return t / self.closed_form[1]
            if kind == "power":
                c, gamma = self.closed_form[1:]
                return ((gamma + 1.0) * t / c) ** (1.0 / (gamma + 1.0))
            c, a0 = self.closed_form[1:]
            return a0 + t / c
        g, v = self.grid, self.values
        knots = self._knot_hazard()
        out = np.empty_like(t)
        below = t < knots[0]
        if np.any(below):
            if self.tail == TAIL_ZERO_BELOW or v[0] <= 0:
                out[below] = g[0]  # no hazard accrues before the support
            else:
                out[below] = g[0] - (knots[0] - t[below]) / v[0]
        above = t > knots[-1]
        if np.any(above):
            excess = t[above] - knots[-1]
            if self.tail == TAIL_POWER:
                gam = self.tail_exponent
                out[above] = g[-1] * (1.0 + (gam + 1.0) * excess / (v[-1] * g[-1])) ** (1.0 / (gam + 1.0))
            else:
                out[above] = g[-1] + excess / v[-1]
        mid = ~(below | above)
        if np.any(mid):
            tm = t[mid]
            idx = np.clip(np.searchsorted(knots, tm, side="right") - 1, 0, g.size - 2)
            xl = g[idx]
            dx = g[idx + 1] - xl
            vl, vr = v[idx], v[idx + 1]
            rem = tm - knots[idx]
            slope = (vr - vl) / dx
            # solve vl*s + slope*s^2/2 = rem for s in [0, dx]
            with np.errstate(invalid="ignore", divide="ignore"):
                disc = np.sqrt(np.maximum(vl * vl + 2.0 * slope * rem, 0.0))
                s_quad = np.where(slope > 0, (disc - vl) / np.where(slope != 0, slope, 1.0),
                                  2.0 * rem / np.maximum(vl + disc, 1e-300))
            s_lin = rem / np.where(vl > 0, vl, 1.0)
            s = np.where(np.abs(slope) * dx > 1e-14 * np.maximum(vl, vr), s_quad, s_lin)
            out[mid] = xl + np.clip(s, 0.0, dx)
        return out

    def sample_trigger(self, rng, size=None, start=0.0):
        """Draw trigger values with survival exp(-∫_{start}^x rate)."""
        u = rng.random(size)
        return self.hazard_inverse(-np.log1p(-u), x0=start)

    def mean_trigger(self):
        """Mean of the trigger distribution rate*exp(-hazard), by quadrature."""
        upper = float(self.hazard_inverse(40.0))
        val, _ = integrate.quad(lambda x: np.exp(-self.hazard(x)), 0.0, upper, limit=200)
        return val


@dataclass(frozen=True)
class GrowthLaw:
    """Deterministic single-cell growth: exponential or tabulated speed.

    The flow map solves dX/dt = speed(X), X(0, x) = x; for a tabulated,
    piecewise-linear speed the travel-time integral has a closed form per
    segment, so the flow is evaluated by inverting an exact time table.
    """

    kind: str = "exponential"
    kappa: float | None = 1.0
    grid: np.ndarray | None = None
    speed_values: np.ndarray | None = None
    _time_knots: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "exponential":
            if self.kappa is None or self.kappa <= 0:
                raise ValueError("exponential growth needs kappa > 0")
            return
        if self.kind != "tabulated":
            raise ValueError(f"unknown growth kind {self.kind!r}")
        g = np.asarray(self.grid, dtype=float)
        v = np.asarray(self.speed_values, dtype=float)
        if g.ndim != 1 or g.size < 2 or np.any(np.diff(g) <= 0):
            raise ValueError("growth grid must be strictly increasing")
        if np.any(v <= 0):
            raise ValueError("growth speed must be positive on the size domain")
        object.__setattr__(self, "grid", g)
        object.__setattr__(self, "speed_values", v)
        object.__setattr__(self, "_time_knots", self._build_time_knots(g, v))

    @classmethod
    def exponential(cls, kappa):
        return cls(kind="exponential", kappa=float(kappa))

    @classmethod
    def tabulated(cls, grid, speed_values):
        return cls(kind="tabulated", kappa=None, grid=grid, speed_values=speed_values)

    @staticmethod
    def _build_time_knots(g, v):
        # exact travel time across each segment of a piecewise-linear speed
        dx = np.diff(g)
        slope = np.diff(v) / dx
        seg = np.where(
            np.abs(slope) * dx > 1e-14 * v[:-1],
            np.log(np.maximum(v[1:], 1e-300) / v[:-1]) / np.where(slope != 0, slope, 1.0),
            dx / (0.5 * (v[1:] + v[:-1])),
        )
        return np.concatenate([[0.0], np.cumsum(seg)])

    def speed(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            return self.kappa * x
        out = np.interp(x, self.grid, self.speed_values)
        return out if out.ndim else float(out)

    def _time_from_start(self, x):
        """Travel time from grid[0] to x (tabulated kind, constant speed outside)."""
        g, v, tk = self.grid, self.speed_values, self._time_knots
        x = np.asarray(x, dtype=float)
        outside_hi = np.maximum(x - g[-1], 0.0) / v[-1]
        outside_lo = np.minimum(x - g[0], 0.0) / v[0]
        x = np.clip(x, g[0], g[-1])
        idx = np.clip(np.searchsorted(g, x, side="right") - 1, 0, g.size - 2)
        xl = g[idx]
        slope = (v[idx + 1] - v[idx]) / (g[idx + 1] - xl)
        vl = v[idx]
        vx = vl + slope * (x - xl)
        part = np.where(
            np.abs(slope) * (g[idx + 1] - xl) > 1e-14 * vl,
            np.log(np.maximum(vx, 1e-300) / vl) / np.where(slope != 0, slope, 1.0),
            (x - xl) / np.where(vl > 0, vl, 1.0),
        )
        return tk[idx] + part + outside_hi + outside_lo

    def time_to_grow(self, x0, x1):
        """Time for the flow to carry size x0 to size x1 (>= x0)."""
        x0 = np.asarray(x0, dtype=float)
        x1 = np.asarray(x1, dtype=float)
        if self.kind == "exponential":
            return np.log(x1 / x0) / self.kappa
        return self._time_from_start(x1) - self._time_from_start(x0)

    def flow(self, t, x):
        """Size after time t starting from size x."""
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        if self.kind == "exponential":
            return x * np.exp(self.kappa * t)
        g, tk = self.grid, self._time_knots
        target = self._time_from_start(x) + t
        v = self.speed_values
        over = np.maximum(target - tk[-1], 0.0) * v[-1]
        under = np.minimum(target, 0.0) * v[0]
        target = np.clip(target, 0.0, tk[-1])
        idx = np.clip(np.searchsorted(tk, target, side="right") - 1, 0, g.size - 2)
        slope = (v[idx + 1] - v[idx]) / (g[idx + 1] - g[idx])
        dt = target - tk[idx]
        out = np.where(
            np.abs(slope) * (g[idx + 1] - g[idx]) > 1e-14 * v[idx],
            g[idx] + v[idx] * (np.exp(slope * dt) - 1.0) / np.where(slope != 0, slope, 1.0),
            g[idx] + v[idx] * dt,
        ) + over + under
        return out if out.ndim else float(out)


@dataclass(frozen=True)
class FragmentationKernel:
    """Daughter/mother size-ratio law at division.

    Either equal mitosis (point mass at 1/2) or a symmetric probability
    density on (0, 1) with mean 1/2, tabulated on a ratio grid.
    """

    kind: str = "mitosis"
    grid: np.ndarray | None = None
    density: np.ndarray | None = None

    def __post_init__(self):
        if self.kind == "mitosis":
            return
        if self.kind != "density":
            raise ValueError(f"unknown fragmentation kind {self.kind!r}")
        z = np.asarray(self.grid, dtype=float)
        w = np.asarray(self.density, dtype=float)
        if np.any(z <= 0) or np.any(z >= 1) or np.any(np.diff(z) <= 0):
            raise ValueError("ratio grid must be strictly increasing inside (0, 1)")
        if np.any(w < 0):
            raise ValueError("ratio density must be nonnegative")
        total = np.trapezoid(w, z)
        if total <= 0:
            raise ValueError("ratio density must have positive mass")
        w = w / total
        mean = np.trapezoid(z * w, z)
        if abs(mean - 0.5) > 1e-8:
            raise ValueError(f"ratio density mean {mean:.6g} != 1/2")
        sym = np.interp(1.0 - z, z, w, left=0.0, right=0.0)
        if np.max(np.abs(sym - w)) > 1e-8 * max(1.0, np.max(w)):
            raise ValueError("ratio density must be symmetric about 1/2")
        object.__setattr__(self, "grid", z)
        object.__setattr__(self, "density", w)

    @classmethod
    def mitosis(cls):
        return cls(kind="mitosis")

    @classmethod
    def from_density(cls, grid, density):
        return cls(kind="density", grid=grid, density=density)

    @classmethod
    def symmetric_beta(cls, concentration, n=513):
        """Beta(c, c) septum law, a convenient smooth unequal-division model."""
        from scipy import stats

        z = np.linspace(1e-4, 1.0 - 1e-4, n)
        return cls.from_density(z, stats.beta.pdf(z, concentration, concentration))

    @property
    def is_mitosis(self):
        return self.kind == "mitosis"

    def sample(self, rng, size=None):
        if self.kind == "mitosis":
            return np.full(size, 0.5) if size is not None else 0.5
        z, w = self.grid, self.density
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(z))])
        cdf = cdf / cdf[-1]
        u = rng.random(size)
        return np.interp(u, cdf, z)

    def mellin(self, s):
        """∫ z^{s-1} b0(dz); equals 2^{1-s} for equal mitosis."""
        s = np.asarray(s, dtype=complex)
        if self.kind == "mitosis":
            return np.exp((s - 1.0) * np.log(0.5))
        z, w = self.grid, self.density
        vals = z[None, :] ** (s.reshape(-1, 1) - 1.0) * w[None, :]
        out = np.trapezoid(vals, z, axis=-1)
        return out.reshape(s.shape)
