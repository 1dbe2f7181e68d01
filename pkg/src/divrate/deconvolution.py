"""Inversion of the fragmentation operator and Fourier deconvolution.

Equal mitosis turns the inversion into the dilation equation
2k f(2x) - f(x) = L, solved by geometric series from either end of the
axis (the decaying branches; the ln-2-periodic homogeneous solutions are
deliberately excluded). General self-similar ratio laws invert through
the Mellin transform, realized as an FFT on a uniform log grid. A plain
Fourier deconvolution with spectral cutoff serves the severely ill-posed
increment-from-size-marginal reconstruction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import GridDensity

__all__ = [
    "DilationProblem", "dilation_apply", "dilation_solve",
    "mellin_dilation_solve", "fourier_deconvolve", "DeconvolutionError",
]


class DeconvolutionError(RuntimeError):
    pass


def _halving_shift(grid):
    """Index shift realizing x -> x/2; requires an exact 2^(1/m) ratio."""
    step = np.log2(grid[1] / grid[0])
    m = int(round(1.0 / step))
    if m < 1 or np.max(np.abs(np.diff(np.log2(grid)) - 1.0 / m)) > 1e-9:
        raise ValueError("dilation operations need a geometric grid with "
                         "ratio an exact m-th root of 2")
    return m


@dataclass(frozen=True)
class DilationProblem:
    """Right-hand side and branch choice for 2k f(2x) - f(x) = L."""

    L: GridDensity
    k: int
    branch: str = "glued"  # "H0", "Hinf", or "glued"
    x_bar: float | None = None  # gluing abscissa; None picks it automatically


def dilation_apply(f, k, tail_value=0.0):
    """Apply the mitosis fragmentation operator: 2k f(2x) - f(x).

    Values of f beyond the top of its grid default to zero (densities
    decay); pass tail_value to override.
    """
    m = _halving_shift(f.grid)
    doubled = np.full(f.values.size, tail_value)
    doubled[:-m] = f.values[m:]
    return GridDensity(f.grid, 2 * k * doubled - f.values)


def _series_H0(vals, m, k, tol, max_terms):
    """sum_{j>=1} (2k)^{-j} L(2^{-j} x); below the grid L holds its lowest value."""
    out = np.zeros_like(vals)
    prev_norms = []
    shifted = vals
    for j in range(1, max_terms + 1):
        rolled = np.empty_like(shifted)
        rolled[m:] = shifted[:-m]
        rolled[:m] = shifted[0]
        shifted = rolled
        term = shifted / (2.0 * k) ** j
        out += term
        norm = float(np.sqrt(np.mean(term**2)))
        prev_norms.append(norm)
        if norm < tol * max(float(np.sqrt(np.mean(out**2))), 1e-300):
            return out, j
        if len(prev_norms) > 10 and prev_norms[-1] > prev_norms[-11]:
            raise DeconvolutionError(
                "series toward zero is not decaying (L must be summable "
                "with the (2k)^-j weight near the origin)")
    return out, max_terms


def _series_Hinf(vals, m, k, tol, max_terms):
    """-sum_{j>=0} (2k)^j L(2^j x); beyond the grid L is zero.

    The sum is finite on a truncated grid (each shift pushes mass off the
    top); decay is monitored on the upper half of the grid, where this
    branch is meant to be used — toward the origin the true solution is
    allowed to blow up.
    """
    out = np.zeros_like(vals)
    prev_norms = []
    top = slice(3 * vals.size // 4, None)
    shifted = vals.copy()
    for j in range(0, max_terms):
        term = -((2.0 * k) ** j) * shifted
        out += term
        norm = float(np.sqrt(np.mean(term[top] ** 2)))
        prev_norms.append(norm)
        if norm < tol * max(float(np.sqrt(np.mean(out[top] ** 2))), 1e-300):
            return out, j + 1
        if len(prev_norms) > 10 and prev_norms[-1] > prev_norms[-11] > 0:
            raise DeconvolutionError(
                "series toward infinity is not decaying (L must beat the "
                "(2k)^j weight at the tail)")
        rolled = np.zeros_like(shifted)
        rolled[:-m] = shifted[m:]
        shifted = rolled
        if not np.any(shifted):
            return out, j + 1
    return out, max_terms


def dilation_solve(problem, tol=1e-12, max_terms=200):
    """Solve 2k f(2x) - f(x) = L by the decaying series branches.

    branch "H0" sums scaled copies toward the origin, "Hinf" toward
    infinity; "glued" uses H0 below x_bar and Hinf above, with x_bar at
    the crossing of the two estimated truncation errors when not given.
    """
    L = problem.L
    m = _halving_shift(L.grid)
    k = problem.k
    if problem.branch == "H0":
        out, _ = _series_H0(L.values, m, k, tol, max_terms)
        return GridDensity(L.grid, out)
    if problem.branch == "Hinf":
        out, _ = _series_Hinf(L.values, m, k, tol, max_terms)
        return GridDensity(L.grid, out)
    if problem.branch != "glued":
        raise ValueError(f"unknown branch {problem.branch!r}")
    h0, j0 = _series_H0(L.values, m, k, tol, max_terms)
    hinf, jinf = _series_Hinf(L.values, m, k, tol, max_terms)
    x = L.grid
    n = x.size
    if problem.x_bar is not None:
        x_bar = problem.x_bar
    else:
        # per-point truncation proxies: magnitude of each branch's last
        # included term; glue where they cross
        idx = np.arange(n)
        src0 = np.maximum(idx - j0 * m, 0)
        err0 = np.abs(L.values[src0]) / (2.0 * k) ** j0
        j_star = np.minimum((n - 1 - idx) // m, jinf - 1)
        src_inf = np.minimum(idx + np.maximum(j_star, 0) * m, n - 1)
        err_inf = np.abs(L.values[src_inf]) * (2.0 * k) ** np.maximum(j_star, 0)
        diff = err0 - err_inf
        cross = np.flatnonzero(np.diff(np.sign(diff)) != 0)
        x_bar = float(x[cross[0]]) if cross.size else float(np.sqrt(x[0] * x[-1]))
    glued = np.where(x <= x_bar, h0, hinf)
    out = GridDensity(x, glued)
    out.x_bar = x_bar
    out.branch_gap = float(np.max(np.abs(h0 - hinf)
                                  [(x > 0.5 * x_bar) & (x < 2.0 * x_bar)], initial=0.0))
    return out


def mellin_dilation_solve(L, frag, k, q=None, n_fft=2**14, u_range=None,
                          floor=1e-8):
    """Invert the fragmentation operator via the Mellin transform.

    Works for any self-similar ratio law: divides the transform of L by
    k*M[b0](s) - 1 on the line Re(s) = (q+1)/2, realized as an FFT in
    log coordinates. The line must avoid the zero at s = k, so q = 2k-1
    is rejected; q < 2k-1 selects the branch decaying toward infinity.
    """
    if q is None:
        q = 2 * k - 1.2
    sigma = 0.5 * (q + 1.0)
    if abs(q + 1.0 - 2.0 * k) < 1e-6:
        raise DeconvolutionError(
            "integration line hits the zero of the symbol at s = k; "
            "shift the weight exponent q away from 2k-1")
    x = L.grid
    if u_range is None:
        u_range = (min(np.log(x[0]), -12.0), max(np.log(x[-1]), 12.0))
    u = np.linspace(u_range[0], u_range[1], n_fft, endpoint=False)
    du = u[1] - u[0]
    xs = np.exp(u)
    vals = np.interp(xs, x, L.values, left=L.values[0], right=0.0)
    g = vals * np.exp(sigma * u)
    v = 2.0 * np.pi * np.fft.fftfreq(n_fft, d=du)
    # the FFT kernel e^{-ivu} pairs with the symbol on the conjugate line
    denom = k * frag.mellin(sigma - 1j * v) - 1.0
    bad = np.abs(denom) < floor
    gh = np.fft.fft(g)
    ratio = np.where(bad, 0.0, gh / np.where(bad, 1.0, denom))
    h = np.fft.ifft(ratio)
    out = np.real(h) * np.exp(-sigma * u)
    result = GridDensity(xs, out)
    result.flagged_frequencies = int(bad.sum())
    result.imag_residual = float(np.max(np.abs(np.imag(h))))
    return result


def fourier_deconvolve(numerator, denominator, grid, cutoff, floor=1e-3):
    """Ratio of Fourier transforms with a hard frequency cutoff.

    numerator, denominator: samples on the common uniform grid.
    cutoff: retained band is |frequency| <= cutoff (radians per unit x).
    floor: relative modulus floor on the denominator transform within the
    band; an error is raised when more than half the retained band is
    floored (the problem is then hopelessly ill-posed at this cutoff).
    Returns (values, diagnostics).
    """
    grid = np.asarray(grid, dtype=float)
    dx = grid[1] - grid[0]
    if np.max(np.abs(np.diff(grid) - dx)) > 1e-9 * dx:
        raise ValueError("fourier_deconvolve needs a uniform grid")
    num = np.fft.fft(np.asarray(numerator, dtype=float))
    den = np.fft.fft(np.asarray(denominator, dtype=float))
    freq = 2.0 * np.pi * np.fft.fftfreq(grid.size, d=dx)
    band = np.abs(freq) <= cutoff
    scale = np.max(np.abs(den[band])) if np.any(band) else 0.0
    low = np.abs(den) < floor * scale
    floored = band & low
    if band.sum() == 0 or floored.sum() > 0.5 * band.sum():
        raise DeconvolutionError(
            "denominator transform below the floor on most of the retained "
            "band; lower the cutoff or the floor")
    ratio = np.zeros_like(num)
    ok = band & ~low
    ratio[ok] = num[ok] / den[ok]
    # continuous-transform semantics: numerator ≈ denominator ∗ result dx
    out = np.fft.ifft(ratio) / dx
    diagnostics = {
        "imag_residual": float(np.max(np.abs(np.imag(out)))),
        "flagged_frequencies": int(floored.sum()),
        "retained_frequencies": int(band.sum()),
    }
    return np.real(out), diagnostics
