"""Dilation-equation branches, Mellin inversion, Fourier deconvolution."""

import numpy as np
import pytest

from divrate.deconvolution import (DeconvolutionError, DilationProblem,
                                   dilation_apply, dilation_solve,
                                   fourier_deconvolve, mellin_dilation_solve)
from divrate.grids import GridDensity
from divrate.rates import FragmentationKernel


def geo_grid(x_min=1e-10, x_max=40.0, m=32):
    n = int(np.floor(np.log2(x_max / x_min) * m)) + 1
    return x_min * 2.0 ** (np.arange(n) / m)


class TestDilationApply:
    def test_zero_maps_to_zero(self):
        x = geo_grid(0.01, 10.0)
        out = dilation_apply(GridDensity(x, np.zeros_like(x)), k=1)
        assert np.all(out.values == 0)

    def test_exponential_example(self):
        x = geo_grid(0.001, 200.0)
        out = dilation_apply(GridDensity(x, np.exp(-x)), k=1)
        expect = 2 * np.exp(-2 * x) - np.exp(-x)
        inside = x < 50.0  # beyond-top tail policy affects the last octave
        assert np.max(np.abs(out.values[inside] - expect[inside])) < 1e-12

    def test_round_trip_with_solve(self):
        x = geo_grid(1e-10, 500.0)
        lvals = 2 * np.exp(-2 * x) - np.exp(-x)
        sol = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1, branch="H0"))
        back = dilation_apply(sol, k=1)
        inside = (x > 1e-3) & (x < 100.0)
        assert np.max(np.abs(back.values[inside] - lvals[inside])) < 1e-8


class TestDilationSolve:
    def test_zero_rhs(self):
        x = geo_grid(0.01, 10.0)
        out = dilation_solve(DilationProblem(GridDensity(x, np.zeros_like(x)), k=1))
        assert np.all(out.values == 0)

    def test_telescoping_oracle(self):
        # L = G_1(e^{-x}) telescopes back to e^{-x}
        x = geo_grid(1e-10, 40.0)
        lvals = 2 * np.exp(-2 * x) - np.exp(-x)
        sol = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1, branch="H0"))
        window = (x >= 0.05) & (x <= 20.0)
        assert np.max(np.abs(sol.values[window] - np.exp(-x[window]))) < 1e-8

    def test_linearity(self):
        x = geo_grid(1e-8, 40.0)
        lvals = 2 * np.exp(-2 * x) - np.exp(-x)
        p1 = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1, branch="H0"))
        p3 = dilation_solve(DilationProblem(GridDensity(x, 3 * lvals), k=1, branch="H0"))
        assert np.allclose(3 * p1.values, p3.values, rtol=0, atol=1e-14)

    def test_branches_agree_in_the_middle(self):
        x = geo_grid(1e-10, 400.0)
        lvals = 2 * np.exp(-2 * x) - np.exp(-x)
        h0 = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1, branch="H0"))
        hinf = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1, branch="Hinf"))
        mid = (x > 0.5) & (x < 2.0)
        assert np.max(np.abs(h0.values[mid] - hinf.values[mid])) < 1e-4

    def test_glued_branch_reports_gap(self):
        x = geo_grid(1e-10, 400.0)
        lvals = 2 * np.exp(-2 * x) - np.exp(-x)
        glued = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1))
        assert glued.branch_gap < 1e-4
        window = (x >= 0.05) & (x <= 20.0)
        assert np.max(np.abs(glued.values[window] - np.exp(-x[window]))) < 1e-6

    def test_non_decaying_series_raises(self):
        # a tail decaying slower than 1/(2k) per octave makes the series
        # toward infinity grow term by term
        x = geo_grid(1e-8, 1e8, m=4)
        lvals = x ** -0.5
        with pytest.raises(DeconvolutionError):
            dilation_solve(DilationProblem(GridDensity(x, lvals), k=1,
                                           branch="Hinf"))


class TestMellin:
    def test_agreement_with_series_mitosis(self):
        x = geo_grid(1e-10, 400.0, m=32)
        lvals = 2 * np.exp(-2 * x) - np.exp(-x)
        series = dilation_solve(DilationProblem(GridDensity(x, lvals), k=1,
                                                branch="H0"))
        mel = mellin_dilation_solve(GridDensity(x, lvals),
                                    FragmentationKernel.mitosis(), k=1, q=0.5,
                                    n_fft=2**16)
        window = (mel.grid >= 0.1) & (mel.grid <= 10.0)
        series_on = np.interp(mel.grid[window], x, series.values)
        assert np.max(np.abs(mel.values[window] - series_on)) < 1e-4

    def test_line_through_symbol_zero_rejected(self):
        x = geo_grid(1e-6, 100.0)
        dens = GridDensity(x, np.exp(-x))
        with pytest.raises(DeconvolutionError):
            mellin_dilation_solve(dens, FragmentationKernel.mitosis(), k=1, q=1.0)

    def test_parseval_sanity(self):
        # the log-FFT realization preserves the weighted two-norm
        x = geo_grid(1e-8, 100.0, m=64)
        f = np.exp(-0.5 * np.log(np.maximum(x, 1e-300)) ** 2)
        sigma = 0.5
        u = np.log(x)
        g = f * np.exp(sigma * u)
        du = u[1] - u[0]
        norm_direct = np.sum(np.abs(g) ** 2) * du
        gh = np.fft.fft(g)
        norm_fft = np.sum(np.abs(gh) ** 2) * du / g.size
        assert norm_fft == pytest.approx(norm_direct, rel=1e-6)


class TestFourierDeconvolve:
    def test_self_ratio_is_band_indicator(self):
        x = np.linspace(0.0, 40.0, 4096)
        dx = x[1] - x[0]
        f = np.exp(-((x - 10.0) ** 2))
        out, diag = fourier_deconvolve(f, f, x, cutoff=3.0, floor=1e-12)
        freq = 2 * np.pi * np.fft.fftfreq(x.size, d=dx)
        ratio = np.fft.fft(out) * dx
        band = np.abs(freq) <= 3.0
        assert np.allclose(np.abs(ratio[band]), 1.0, atol=1e-8)
        assert np.allclose(np.abs(ratio[~band]), 0.0, atol=1e-10)

    def test_known_convolution_recovers_kernel(self):
        x = np.linspace(0.0, 60.0, 2**13)
        dx = x[1] - x[0]
        f = np.exp(-np.maximum(x - 1.0, 0.0)) * (x >= 1.0)
        w = np.exp(-0.5 * ((x - 5.0) / 0.4) ** 2)
        w /= np.trapezoid(w, x)
        conv = np.convolve(f, w)[: x.size] * dx
        out, diag = fourier_deconvolve(conv, f, x, cutoff=18.0, floor=1e-8)
        err = np.sqrt(np.trapezoid((out - w) ** 2, x))
        assert err < 1e-3
        assert diag["imag_residual"] < 1e-8

    def test_linearity_in_numerator(self):
        x = np.linspace(0.0, 20.0, 1024)
        f = np.exp(-x)
        g = np.exp(-0.5 * (x - 3.0) ** 2)
        o1, _ = fourier_deconvolve(g, f, x, cutoff=5.0)
        o2, _ = fourier_deconvolve(2.0 * g, f, x, cutoff=5.0)
        assert np.allclose(o2, 2.0 * o1, atol=1e-12)

    def test_floored_band_raises(self):
        x = np.linspace(0.0, 20.0, 1024)
        delta_like = np.zeros_like(x)
        delta_like[0] = 1.0
        narrow = np.exp(-((x - 5.0) / 0.05) ** 2)
        with pytest.raises(DeconvolutionError):
            fourier_deconvolve(delta_like, narrow, x, cutoff=100.0, floor=0.5)
