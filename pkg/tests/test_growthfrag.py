"""Size-structured solver: eigenpairs, moment balances, oscillations."""

import numpy as np
import pytest

from divrate import growthfrag
from divrate.grids import GridDensity, SolverGrid
from divrate.rates import FragmentationKernel, GrowthLaw, RateFunction

MITOSIS = FragmentationKernel.mitosis()


def geometric_grid(x_min=2.0**-8, x_max=2.0**5, m=64):
    return SolverGrid.geometric(x_min, x_max, points_per_octave=m)


class TestEigenelements:
    @pytest.mark.parametrize("kappa", [0.5, 1.0])
    @pytest.mark.parametrize("gamma", [1.0, 2.0])
    def test_growth_rate_equals_kappa(self, kappa, gamma):
        # first-moment balance forces the population growth rate to kappa
        trip = growthfrag.eigenelements(
            RateFunction.power(1.0, gamma), GrowthLaw.exponential(kappa),
            MITOSIS, k=2, grid=geometric_grid())
        assert trip.lam == pytest.approx(kappa, abs=1e-6)
        assert trip.oscillatory

    def test_adjoint_linear_in_size(self):
        trip = growthfrag.eigenelements(
            RateFunction.power(1.0, 1.0), GrowthLaw.exponential(1.0),
            MITOSIS, k=2, grid=geometric_grid())
        x = trip.N.grid
        # away from the grid edges phi is proportional to x
        core = (x > 0.1) & (x < 8.0)
        ratio = trip.phi[core] / x[core]
        dev = np.abs(ratio / np.median(ratio) - 1.0)
        assert np.max(dev) < 1e-3

    def test_conservative_profile_is_size_weighted(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = geometric_grid()
        t1 = growthfrag.eigenelements(rate, growth, MITOSIS, k=1, grid=grid)
        t2 = growthfrag.eigenelements(rate, growth, MITOSIS, k=2, grid=grid)
        assert t1.lam == 0.0
        x = t1.N.grid
        core = (x > 0.1) & (x < 8.0)
        ratio = t1.N.values[core] / (x[core] * t2.N.values[core])
        assert np.max(np.abs(ratio / np.median(ratio) - 1.0)) < 1e-3

    def test_normalizations(self):
        trip = growthfrag.eigenelements(
            RateFunction.power(1.0, 2.0), GrowthLaw.exponential(1.0),
            MITOSIS, k=2, grid=geometric_grid())
        widths = geometric_grid().widths
        assert np.sum(trip.N.values * widths) == pytest.approx(1.0, rel=1e-9)
        assert np.sum(trip.N.values * trip.phi * widths) == pytest.approx(1.0, rel=1e-9)
        assert np.all(trip.N.values >= 0)
        assert np.all(trip.phi >= 0)

    def test_tail_violation_rejected(self):
        dead = RateFunction.tabulated([0.0, 1.0], [1.0, 1e-12])
        with pytest.raises(ValueError):
            growthfrag.eigenelements(dead, GrowthLaw.exponential(1.0), MITOSIS,
                                     k=2, grid=SolverGrid.uniform(30.0, 256))


class TestMomentBalances:
    @pytest.mark.parametrize("k", [1, 2])
    def test_number_and_mass_identities(self, k):
        # 2^12-point geometric grid, one unit of time
        grid = SolverGrid.geometric(2.0**-8, 2.0**8, points_per_octave=256)
        trip = growthfrag.eigenelements(
            RateFunction.power(1.0, 1.0), GrowthLaw.exponential(1.0),
            MITOSIS, k=2, grid=grid, tol=1e-9)
        sol = growthfrag.evolve(trip.N, RateFunction.power(1.0, 1.0),
                                GrowthLaw.exponential(1.0), MITOSIS, k=k,
                                T=1.0, grid=grid)
        res_count, res_mass = sol.moment_residuals()
        assert res_count < 1e-3
        assert res_mass < 1e-3

    def test_stationarity_after_renormalization(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = geometric_grid()
        trip = growthfrag.eigenelements(rate, growth, MITOSIS, k=2, grid=grid)
        sol = growthfrag.evolve(trip.N, rate, growth, MITOSIS, k=2, T=1.0,
                                grid=grid)
        final = sol.final()
        renorm = final.values / (sol.counts[-1] / sol.counts[0])
        drift = np.sum(np.abs(renorm - trip.N.values) * sol.widths)
        assert drift < 1e-4

    def test_nonnegativity_preserved(self):
        rate = RateFunction.power(1.0, 2.0)
        grid = geometric_grid(m=32)
        rng = np.random.default_rng(0)
        x = grid.nodes
        n0 = GridDensity(x, rng.uniform(0.0, 1.0, x.size) * np.exp(-x)).normalize()
        sol = growthfrag.evolve(n0, rate, GrowthLaw.exponential(1.0), MITOSIS,
                                k=2, T=2.0, grid=grid)
        assert all(np.all(s.values >= 0) for s in sol.snapshots)

    def test_leakage_small_on_wide_grid(self):
        rate = RateFunction.power(1.0, 1.0)
        grid = geometric_grid()
        trip = growthfrag.eigenelements(rate, GrowthLaw.exponential(1.0),
                                        MITOSIS, k=2, grid=grid)
        sol = growthfrag.evolve(trip.N, rate, GrowthLaw.exponential(1.0),
                                MITOSIS, k=2, T=1.0, grid=grid)
        assert sol.leaked_top + sol.leaked_bottom < 1e-8 * sol.counts[-1]


class TestEntropy:
    def test_gre_nonincreasing_random_initial(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = geometric_grid(m=32)
        trip = growthfrag.eigenelements(rate, growth, MITOSIS, k=2, grid=grid)
        rng = np.random.default_rng(7)
        x = grid.nodes
        for trial in range(5):
            vals = trip.N.values * rng.uniform(0.3, 3.0, x.size)
            n0 = GridDensity(x, vals)
            sol = growthfrag.evolve(n0, rate, growth, MITOSIS, k=2, T=2.0,
                                    grid=grid, entropy_ref=trip)
            assert sol.entropy.is_nonincreasing(1e-8 * max(sol.entropy.values))


class TestOscillations:
    def test_zeroth_mode_conserved_everywhere(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = geometric_grid(m=32)
        trip = growthfrag.eigenelements(rate, growth, MITOSIS, k=2, grid=grid)
        n0 = GridDensity(grid.nodes,
                         trip.N.values * (1.0 + 0.3 * np.sin(np.log(grid.nodes))))
        sol = growthfrag.evolve(n0, rate, growth, MITOSIS, k=2, T=np.log(2.0),
                                grid=grid, n_snapshots=5)
        amps = [abs(growthfrag.oscillation_amplitude(s, 0, 1.0, 2, t=t))
                for t, s in zip(sol.snapshot_times, sol.snapshots)]
        assert np.max(np.abs(np.asarray(amps) / amps[0] - 1.0)) < 1e-6

    def test_first_mode_conserved_on_geometric_grid(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = geometric_grid(m=32)
        trip = growthfrag.eigenelements(rate, growth, MITOSIS, k=2, grid=grid)
        x = grid.nodes
        pert = 1.0 + 0.5 * np.cos(2.0 * np.pi * np.log2(x))
        n0 = GridDensity(x, trip.N.values * pert)
        period = np.log(2.0)
        sol = growthfrag.evolve(n0, rate, growth, MITOSIS, k=2, T=period,
                                grid=grid, n_snapshots=5)
        a0 = abs(growthfrag.oscillation_amplitude(sol.snapshots[0], 1, 1.0, 2, 0.0))
        a1 = abs(growthfrag.oscillation_amplitude(sol.final(), 1, 1.0, 2,
                                                  sol.snapshot_times[-1]))
        assert abs(a1 / a0 - 1.0) < 0.01

    def test_first_mode_damped_on_uniform_grid(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = SolverGrid.uniform(16.0, 2048)
        x = grid.nodes
        base = np.exp(-0.5 * np.log(np.maximum(x, 1e-12)) ** 2)
        pert = 1.0 + 0.5 * np.cos(2.0 * np.pi * np.log2(np.maximum(x, 1e-12)))
        n0 = GridDensity(x, base * pert).normalize()
        period = np.log(2.0)
        sol = growthfrag.evolve(n0, rate, growth, MITOSIS, k=2, T=period,
                                grid=grid, n_snapshots=3)
        a0 = abs(growthfrag.oscillation_amplitude(sol.snapshots[0], 1, 1.0, 2, 0.0))
        a1 = abs(growthfrag.oscillation_amplitude(sol.final(), 1, 1.0, 2,
                                                  sol.snapshot_times[-1]))
        assert a1 < 0.9 * a0


class TestEigenSolverConsistency:
    def test_power_iteration_matches_long_run(self):
        rate = RateFunction.power(1.0, 1.0)
        growth = GrowthLaw.exponential(1.0)
        grid = geometric_grid(m=32)
        trip = growthfrag.eigenelements(rate, growth, MITOSIS, k=2, grid=grid)
        mid = np.sqrt(grid.nodes[0] * grid.nodes[-1])
        n0 = GridDensity(grid.nodes,
                         np.exp(-0.5 * np.log(grid.nodes / mid) ** 2)).normalize()
        sol = growthfrag.evolve(n0, rate, growth, MITOSIS, k=2, T=25.0,
                                grid=grid, n_snapshots=3)
        # average the last period to strip the conserved oscillation
        period_steps = int(round(np.log(2.0) / sol.dt))
        S, info = growthfrag.build_step(rate, growth, MITOSIS, 2, grid)
        counts = sol.final().values * sol.widths
        acc = np.zeros_like(counts)
        g = np.exp(trip.lam * sol.dt)
        for j in range(period_steps):
            acc += counts / g**j
            counts = S @ counts
        avg = acc / period_steps
        avg = avg / avg.sum()
        dist = np.abs(avg / sol.widths - trip.N.values)
        assert np.sum(dist * sol.widths) < 1e-4

    def test_general_kernel_profile(self):
        frag = FragmentationKernel.symmetric_beta(8.0)
        rate = RateFunction.power(1.0, 1.0)
        trip = growthfrag.eigenelements(rate, GrowthLaw.exponential(1.0), frag,
                                        k=2, grid=geometric_grid(m=32))
        assert not trip.oscillatory
        assert trip.lam == pytest.approx(1.0, abs=1e-3)
        assert np.all(trip.N.values >= 0)
