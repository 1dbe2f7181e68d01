"""Age-structured (renewal) model: eigenelements and transport solver.

The eigenelements have closed quadrature forms: the stationary profile is
proportional to exp(-lam*a - cumulative hazard), the Malthus parameter of
the whole-population case is the unique root of a monotone one-dimensional
equation, and the adjoint integrates the same exponential from the right.

The time solver advances age cohorts on a lattice with spacing equal to
the time step, so transport is an exact shift and survival factors are
exact hazard increments; newborn cohorts enter at the age-zero slot with a
within-step re-division correction that keeps the global growth rate
second-order accurate in the step size.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse

from .entropy import EntropyTrace, relative_entropy
from .grids import GridDensity
from .stepping import EigenTriplet, power_iterate

__all__ = [
    "malthus_parameter", "eigenelements", "stationary_density",
    "step_matrix", "discrete_eigen", "evolve", "RenewalSolution",
]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _quad_nodes(rate, a_hi, min_panels=120):
    """Panels aligned to tabulation knots, 10-point Gauss-Legendre each."""
    knots = [0.0, a_hi]
    if rate.closed_form is None:
        knots.extend(float(g) for g in rate.grid if 0.0 < g < a_hi)
    elif rate.closed_form[0] == "step":
        a0 = rate.closed_form[2]
        if 0.0 < a0 < a_hi:
            knots.append(a0)
    knots = np.unique(np.asarray(knots))
    h_target = a_hi / min_panels
    edges = [knots[0]]
    for a, b in zip(knots[:-1], knots[1:]):
        n = max(1, int(np.ceil((b - a) / h_target)))
        edges.extend(np.linspace(a, b, n + 1)[1:])
    edges = np.asarray(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    half = 0.5 * np.diff(edges)
    nodes = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    weights = (half[:, None] * _GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


def malthus_parameter(rate, k=2, tol=1e-13):
    """Population growth rate: unique root of 2∫rate·e^{-lam·a-hazard} = 1.

    Returns 0 for the conservative single-lineage case (k=1).
    """
    if k == 1:
        return 0.0
    if k != 2:
        raise ValueError("k must be 1 or 2")
    a_hi = float(rate.hazard_inverse(45.0))
    nodes, weights = _quad_nodes(rate, a_hi)
    b_vals = rate(nodes)
    h_vals = rate.hazard(nodes)

    def g(lam):
        return 2.0 * np.dot(weights, b_vals * np.exp(-lam * nodes - h_vals)) - 1.0

    hi = 1.0 / max(a_hi / 45.0, 1e-12)
    lo = 0.0
    # g(0) = 1 by hazard divergence; expand until the root is bracketed
    for _ in range(200):
        if g(hi) < 0:
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RuntimeError("could not bracket the growth-rate root")
    return float(optimize.brentq(g, lo, hi, xtol=tol, rtol=8.9e-16))


def stationary_density(rate, k):
    """(lam_k, callable stationary age profile), normalized to unit integral."""
    lam = malthus_parameter(rate, k)
    a_hi = float(rate.hazard_inverse(45.0))
    nodes, weights = _quad_nodes(rate, a_hi)
    norm = float(np.dot(weights, np.exp(-lam * nodes - rate.hazard(nodes))))

    def density(a):
        return np.exp(-lam * np.asarray(a, float) - rate.hazard(a)) / norm

    return lam, density


def eigenelements(rate, k, n_points=4097, a_max=None):
    """Eigentriplet of the renewal model by direct quadrature.

    The adjoint of the whole-population case satisfies the uniform bound
    sup phi <= 2 phi(0); the computed bound ratio is reported in the
    diagnostics. phi is identically 1 for k=1.
    """
    lam, density = stationary_density(rate, k)
    if a_max is None:
        # truncate where the profile has decayed to ~1e-17 of its scale
        def decay(a):
            return lam * a + rate.hazard(a) - 39.0

        hi = float(rate.hazard_inverse(39.0))
        a_max = float(optimize.brentq(decay, 1e-12, hi + 1e-9)) if lam > 0 else hi
    grid = np.linspace(0.0, a_max, n_points)
    n_vals = density(grid)
    n_dens = GridDensity(grid, n_vals)
    diagnostics = {"a_max": a_max}
    if k == 1:
        phi = np.ones_like(grid)
    else:
        f = np.exp(-lam * grid - rate.hazard(grid))
        # J(a) = ∫_a^∞ e^{-lam s - H(s)} ds, accumulated from the far tail
        # inward so the tiny tail values keep full relative accuracy
        from scipy.integrate import cumulative_simpson, simpson

        tail = f[-1] / (lam + float(rate(a_max)))
        J = cumulative_simpson(f[::-1], x=grid, initial=0.0)[::-1] + tail
        with np.errstate(over="ignore"):
            phi_shape = 1.0 - lam * J * np.exp(lam * grid + rate.hazard(grid))
        phi_shape = np.maximum(phi_shape, 0.0)
        scale = simpson(n_vals * phi_shape, x=grid)
        phi = k * phi_shape / (k * scale)
        bound_ratio = float(np.max(phi) / (2.0 * phi[0]))
        diagnostics["adjoint_bound_ratio"] = bound_ratio
        diagnostics["adjoint_bound_ok"] = bound_ratio <= 1.0 + 1e-9
    return EigenTriplet(lam=lam, N=n_dens, phi=phi, k=k, diagnostics=diagnostics)


# -- lattice solver ----------------------------------------------------------


def _cohort_survivals(rate, ages, dt):
    return np.exp(-(rate.hazard(ages + dt) - np.maximum(rate.hazard(ages), 0.0)))


def _newborn_redivision_fraction(rate, dt):
    # expected fraction of a step's newborns that divide again within it
    u = 0.5 * dt * (_GL_NODES + 1.0)
    w = 0.5 * dt * _GL_WEIGHTS
    return float(np.dot(w, 1.0 - np.exp(-rate.hazard(u)))) / dt


def step_matrix(rate, k, dt, a_max):
    """One-step cohort operator: exact shift + survival + birth row.

    Cohorts sit at ages (j + 1/2) dt; survivors of the last cohort leave
    the system (tracked as leakage by the solver).
    """
    n = int(np.ceil(a_max / dt - 1e-9))
    ages = (np.arange(n) + 0.5) * dt
    s = _cohort_survivals(rate, ages, dt)
    p0 = _newborn_redivision_fraction(rate, dt)
    birth_gain = k * (1.0 + (k - 1) * p0)
    rows = np.concatenate([np.arange(1, n), np.zeros(n, dtype=int)])
    cols = np.concatenate([np.arange(0, n - 1), np.arange(n)])
    vals = np.concatenate([s[:-1], birth_gain * (1.0 - s)])
    S = sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
    return S, ages


def discrete_eigen(rate, k, dt=0.01, a_max=None, tol=1e-12, max_iter=200_000):
    """Eigenpair of the lattice one-step operator itself.

    This is the pair against which the solver's entropy decay and adjoint
    duality hold to round-off, since they are properties of the discrete
    dynamics rather than of the continuum limit.
    """
    if a_max is None:
        a_max = float(rate.hazard_inverse(34.0))
    S, ages = step_matrix(rate, k, dt, a_max)
    v0 = np.exp(-rate.hazard(ages)) * dt
    lam, v, info = power_iterate(S, v0, dt, tol=tol, max_iter=max_iter)
    dens = GridDensity(ages, v / dt)
    lam_phi, phi, info_adj = power_iterate(S.T.tocsr(), np.ones(ages.size), dt,
                                           tol=tol, max_iter=max_iter)
    scale = float(np.sum(v * phi))
    phi = phi / scale
    if k == 1:
        lam = 0.0
    diagnostics = {"iterations": info["iterations"], "residual": info["residual"],
                   "lam_adjoint": lam_phi, "dt": dt}
    return EigenTriplet(lam=lam, N=dens, phi=phi, k=k, diagnostics=diagnostics)


@dataclass
class RenewalSolution:
    """Trajectory of the age-profile solver."""

    times: list
    snapshots: list
    ages: np.ndarray
    dt: float
    leaked_mass: float
    entropy: EntropyTrace | None = None
    total_counts: list = field(default_factory=list)

    def final(self):
        return self.snapshots[-1]


def evolve(n0, rate, k, T, dt=1e-3, a_max=None, n_snapshots=9,
           entropy_ref=None, entropy_profile="square"):
    """Advance an initial age density to time T on the cohort lattice.

    n0: GridDensity, or an array of cohort counts matching the lattice.
    entropy_ref: optional EigenTriplet (on any grid; resampled here) whose
    relative entropy is recorded each step.
    """
    if a_max is None:
        a_max = float(rate.hazard_inverse(34.0))
        if isinstance(n0, GridDensity):
            a_max = max(a_max, float(n0.grid[-1]) + 1e-9)
    S, ages = step_matrix(rate, k, dt, a_max)
    n = ages.size
    if isinstance(n0, GridDensity):
        edges = np.concatenate([ages - 0.5 * dt, [ages[-1] + 0.5 * dt]])
        counts = np.diff(n0.cumulative_at(edges))
    else:
        counts = np.asarray(n0, dtype=float).copy()
        if counts.size != n:
            raise ValueError("cohort counts do not match the lattice size")

    n_steps = max(1, int(round(T / dt)))
    snap_every = max(1, n_steps // max(n_snapshots - 1, 1))
    surv_last = float(_cohort_survivals(rate, ages[-1:], dt)[0])

    trace = None
    ref_n = ref_phi = None
    if entropy_ref is not None:
        trace = EntropyTrace()
        ref_n = np.interp(ages, entropy_ref.N.grid, entropy_ref.N.values)
        src_phi = entropy_ref.phi if entropy_ref.phi is not None else np.ones(n)
        ref_phi = np.interp(ages, entropy_ref.N.grid, src_phi)
        ref = EigenTriplet(lam=entropy_ref.lam, N=GridDensity(ages, ref_n),
                           phi=ref_phi, k=k)

    times, snapshots, totals = [0.0], [GridDensity(ages, counts / dt)], [counts.sum()]
    leaked = 0.0
    if trace is not None:
        val, _ = relative_entropy(counts / dt, ref, np.full(n, dt),
                                  profile=entropy_profile, t=0.0)
        trace.append(0.0, val)
    for step in range(1, n_steps + 1):
        leaked += counts[-1] * surv_last
        counts = S @ counts
        t = step * dt
        if trace is not None:
            val, _ = relative_entropy(counts / dt, ref, np.full(n, dt),
                                      profile=entropy_profile, t=t)
            trace.append(t, val)
        if step % snap_every == 0 or step == n_steps:
            times.append(t)
            snapshots.append(GridDensity(ages, counts / dt))
            totals.append(counts.sum())
    return RenewalSolution(times=times, snapshots=snapshots, ages=ages, dt=dt,
                           leaked_mass=leaked, entropy=trace, total_counts=totals)
