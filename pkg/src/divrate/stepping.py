"""Shared machinery for the time-stepping solvers.

Every solver advances cell counts by a sparse linear one-step operator; the
dominant eigenpair is extracted by power iteration on that operator (and
its transpose for the adjoint). In the equal-mitosis + exponential-growth
configuration the dominant eigenvalue is not unique: a ring of neutrally
stable oscillating modes sits at the same modulus, so iterates are averaged
over one oscillation period, which cancels the ring exactly on the lattice
and leaves the positive eigenvector.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

from .grids import GridDensity

__all__ = ["EigenTriplet", "PowerIterationError", "power_iterate", "iterate_steps"]


class PowerIterationError(RuntimeError):
    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


@dataclass
class EigenTriplet:
    """Dominant eigenvalue, eigenvector and adjoint, normalized.

    Conventions: integral of N is 1, integral of N*phi is 1, both with the
    discrete weights of the solver that produced them; lam is 0 in the
    conservative single-lineage case (k=1).
    """

    lam: float
    N: GridDensity
    phi: np.ndarray | None
    k: int
    diagnostics: dict = field(default_factory=dict)

    @property
    def oscillatory(self):
        return bool(self.diagnostics.get("oscillatory", False))


def iterate_steps(step, v, n_steps):
    """Apply the one-step operator n_steps times, returning all iterates."""
    out = [v]
    for _ in range(n_steps):
        v = step @ v
        out.append(v)
    return out


def power_iterate(step, v0, dt, tol=1e-10, max_iter=100_000, period=1):
    """Dominant (growth rate, vector) of a positive one-step operator.

    period > 1 averages growth-corrected iterates over that many steps,
    which removes neutrally stable oscillating modes whose phases are
    roots of unity on the lattice. Convergence is declared when the
    normalized averaged iterate moves less than `tol` in L1.
    """
    v = np.asarray(v0, dtype=float)
    total = v.sum()
    if total <= 0:
        raise ValueError("initial vector must have positive mass")
    v = v / total
    prev = None
    growth = 1.0
    done = 0
    while done < max_iter:
        iterates = iterate_steps(step, v, period)
        done += period
        mass0, mass1 = iterates[0].sum(), iterates[-1].sum()
        if not np.isfinite(mass1) or mass1 <= 0:
            raise PowerIterationError("iteration lost positivity or finiteness",
                                      iterations=done)
        growth = (mass1 / mass0) ** (1.0 / period)
        if period > 1:
            acc = np.zeros_like(v)
            for j, w in enumerate(iterates[:-1]):
                acc += w / growth**j
            v = acc / period
        else:
            v = iterates[-1]
        v = v / v.sum()
        if prev is not None:
            residual = float(np.abs(v - prev).sum())
            if residual < tol:
                lam = np.log(growth) / dt
                return lam, v, {"iterations": done, "residual": residual}
        prev = v
    raise PowerIterationError(
        f"power iteration did not converge in {max_iter} steps",
        residual=float(np.abs(v - prev).sum()) if prev is not None else None,
        iterations=done,
    )


def as_csr(rows, cols, vals, n):
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))
