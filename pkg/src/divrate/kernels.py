"""Compactly supported smoothing kernels and kernel density machinery.

Kernels are polynomials on [-1, 1]. The moment conditions (unit mass,
vanishing moments up to the kernel order) are what the estimators rely on;
near a support boundary the weights are re-balanced so the same conditions
hold on the truncated support, which removes the usual boundary bias of
plain kernel smoothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "KernelSpec",
    "BIWEIGHT",
    "ORDER4",
    "kde",
    "kde_derivative",
]


@dataclass(frozen=True)
class KernelSpec:
    """Polynomial kernel on [-1, 1].

    order: index of the first non-vanishing moment (2 for the biweight,
        4 for the corrected kernel); moments 1..order-1 vanish.
    coeffs: polynomial coefficients in increasing degree.
    """

    order: int
    coeffs: np.ndarray = field(repr=False)
    name: str = "kernel"

    def __post_init__(self):
        object.__setattr__(self, "coeffs", np.asarray(self.coeffs, dtype=float))

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        inside = np.abs(u) <= 1.0
        out = np.where(inside, np.polynomial.polynomial.polyval(u, self.coeffs), 0.0)
        return out

    def derivative(self, u):
        u = np.asarray(u, dtype=float)
        dcoef = np.polynomial.polynomial.polyder(self.coeffs)
        inside = np.abs(u) <= 1.0
        return np.where(inside, np.polynomial.polynomial.polyval(u, dcoef), 0.0)

    def moment(self, j, c=1.0):
        """∫_{-1}^{min(c,1)} u^j K(u) du, exact (polynomial antiderivative)."""
        c = np.minimum(np.asarray(c, dtype=float), 1.0)
        total = np.zeros_like(c)
        for i, a in enumerate(self.coeffs):
            if a == 0.0:
                continue
            p = i + j + 1
            total = total + a * (c**p - (-1.0) ** p) / p
        return total

    def squared_norm(self):
        """∫ K(u)^2 du."""
        sq = np.polynomial.polynomial.polymul(self.coeffs, self.coeffs)
        return float(sum(a * (1.0 - (-1.0) ** (i + 1)) / (i + 1) for i, a in enumerate(sq)))


# Biweight profile (15/16)(1-u^2)^2: symmetric, order 2.
BIWEIGHT = KernelSpec(
    order=2,
    coeffs=np.array([15 / 16, 0.0, -30 / 16, 0.0, 15 / 16]),
    name="biweight",
)

# (1/64)(105 - 315 u^2)(1-u^2)^2: vanishing 2nd moment, order 4.
ORDER4 = KernelSpec(
    order=4,
    coeffs=np.array([105 / 64, 0.0, -525 / 64, 0.0, 735 / 64, 0.0, -315 / 64]),
    name="order4",
)


def _density_weights(kernel, c):
    """Coefficients (alpha, beta) of the boundary weight K(u)(alpha+beta*u).

    Solves unit-mass / zero-first-moment on the truncated support [-1, c].
    For c >= 1 this reduces to alpha=1, beta=0 (the plain kernel).
    """
    m0 = kernel.moment(0, c)
    m1 = kernel.moment(1, c)
    m2 = kernel.moment(2, c)
    det = m0 * m2 - m1 * m1
    alpha = m2 / det
    beta = -m1 / det
    return alpha, beta


def _derivative_weights(kernel, c):
    """Coefficients (p0, p1, p2) of the derivative weight K(u)(p0+p1*u+p2*u^2).

    Moment conditions on [-1, c]: mass 0, first moment -1, second moment 0,
    so that sum G((a-X_i)/h)/(n h^2) estimates f' with O(h^2) bias up to the
    support boundary.
    """
    m = [kernel.moment(j, c) for j in range(5)]
    mat = np.array([[m[0], m[1], m[2]], [m[1], m[2], m[3]], [m[2], m[3], m[4]]])
    rhs = np.array([0.0, -1.0, 0.0])
    if np.ndim(c) == 0:
        p = np.linalg.solve(mat, rhs)
        return p[0], p[1], p[2]
    sol = np.linalg.solve(np.moveaxis(mat, -1, 0), rhs[None, :])
    return sol[:, 0], sol[:, 1], sol[:, 2]


def _window(data_sorted, x, h):
    lo = np.searchsorted(data_sorted, x - h, side="left")
    hi = np.searchsorted(data_sorted, x + h, side="right")
    return lo, hi


def kde(data, x, kernel=BIWEIGHT, h=None, weights=None, support_start=None):
    """Kernel density estimate at points `x`.

    weights: optional per-observation weights (weighted densities); the
        estimate is sum w_i K_h(x - X_i) / sum w_i.
    support_start: left edge of the density support; evaluation points with
        x - support_start < h get boundary-corrected weights.
    """
    data = np.asarray(data, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if h is None or h <= 0:
        raise ValueError("bandwidth h must be positive")
    if weights is None:
        w = np.ones_like(data)
    else:
        w = np.asarray(weights, dtype=float)
    order = np.argsort(data)
    ds, ws = data[order], w[order]
    total = ws.sum()
    out = np.zeros_like(x)
    lo, hi = _window(ds, x, h)
    for j in range(x.size):
        if hi[j] <= lo[j]:
            continue
        u = (x[j] - ds[lo[j] : hi[j]]) / h
        ku = kernel(u)
        if support_start is not None:
            c = (x[j] - support_start) / h
            if c < 1.0:
                alpha, beta = _density_weights(kernel, c)
                ku = ku * (alpha + beta * u)
        out[j] = (ws[lo[j] : hi[j]] * ku).sum()
    return out / (total * h)


def kde_derivative(data, x, kernel=BIWEIGHT, h=None, weights=None, support_start=None):
    """Estimate of the density derivative at points `x` (same conventions as kde)."""
    data = np.asarray(data, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if h is None or h <= 0:
        raise ValueError("bandwidth h must be positive")
    if weights is None:
        w = np.ones_like(data)
    else:
        w = np.asarray(weights, dtype=float)
    order = np.argsort(data)
    ds, ws = data[order], w[order]
    total = ws.sum()
    out = np.zeros_like(x)
    lo, hi = _window(ds, x, h)
    for j in range(x.size):
        if hi[j] <= lo[j]:
            continue
        u = (x[j] - ds[lo[j] : hi[j]]) / h
        c = 1.0
        if support_start is not None:
            c = min((x[j] - support_start) / h, 1.0)
        p0, p1, p2 = _derivative_weights(kernel, c)
        gu = kernel(u) * (p0 + p1 * u + p2 * u * u)
        out[j] = (ws[lo[j] : hi[j]] * gu).sum()
    return out / (total * h * h)
