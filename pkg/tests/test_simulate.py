"""Branching-tree simulator: sampling laws, schemes, invariants."""

import numpy as np
import pytest
from scipy import stats

from divrate.grids import GridDensity
from divrate.kernels import BIWEIGHT
from divrate.models import GrowthVariability, ModelSpec, RngStream
from divrate.rates import FragmentationKernel, GrowthLaw, RateFunction
from divrate.simulate import (U1, U2, VT, empirical_density, sample_division_size,
                              sample_increment, sample_lifetime_age, simulate_forest,
                              simulate_tree)


def age_model(b=1.0, kappa=1.0):
    return ModelSpec("age", RateFunction.constant(b), GrowthLaw.exponential(kappa))


def size_model(kappa=1.0):
    return ModelSpec("size", RateFunction.power(1.0, 1.0), GrowthLaw.exponential(kappa))


def adder_model(kappa=1.0):
    return ModelSpec("increment", RateFunction.constant(1.0), GrowthLaw.exponential(kappa))


class TestSamplingLaws:
    def test_lifetime_quantile(self):
        # survival exp(-zeta) = 0.5 at zeta = ln 2
        rate = RateFunction.constant(1.0)
        assert rate.hazard_inverse(-np.log(0.5)) == pytest.approx(np.log(2.0))

    def test_lifetime_quadratic_hazard(self):
        rate = RateFunction.power(2.0, 1.0)  # hazard a^2; at exp(-1): a = 1
        assert rate.hazard_inverse(1.0) == pytest.approx(1.0)

    def test_lifetime_monte_carlo_mean(self):
        rng = np.random.default_rng(0)
        draws = sample_lifetime_age(RateFunction.constant(1.0), rng, size=100_000)
        assert draws.mean() == pytest.approx(1.0, abs=0.01)

    def test_division_size_quantiles(self):
        rate = RateFunction.constant(1.0)
        assert rate.hazard_inverse(1.0, x0=1.0) == pytest.approx(2.0)
        linear = RateFunction.power(1.0, 1.0)
        assert linear.hazard_inverse(0.5, x0=0.0) == pytest.approx(1.0)

    def test_division_size_ks_vs_closed_form(self):
        # oracle: survival exp(-(x^2 - 1)/2) starting from birth size 1
        rng = np.random.default_rng(1)
        draws = sample_division_size(RateFunction.power(1.0, 1.0), 1.0, rng, size=100_000)
        res = stats.kstest(draws, lambda x: 1.0 - np.exp(-(x**2 - 1.0) / 2.0))
        assert res.statistic < 0.01

    def test_increment_quantile_and_lifetime(self):
        rate = RateFunction.constant(1.0)
        assert rate.hazard_inverse(-np.log(0.5)) == pytest.approx(np.log(2.0))
        growth = GrowthLaw.exponential(1.0)
        # birth size 1, increment 1: flow time for 1 -> 2 is ln 2
        assert growth.time_to_grow(1.0, 2.0) == pytest.approx(np.log(2.0))

    def test_increment_independent_of_birth_size(self):
        # independence holds at birth; the unbiased scheme observes exactly that
        sample = simulate_forest(adder_model(), U1(9999), seed=5, n_trees=10)
        xi, eta = sample.size_birth, sample.increment
        assert xi.size == 100_000
        corr = np.corrcoef(xi, eta)[0, 1]
        assert abs(corr) < 0.02

    def test_thinning_cross_check(self):
        # independent oracle: accept-reject thinning of a bounded rate
        rate = RateFunction.tabulated([0.0, 1.0, 3.0], [0.5, 2.0, 1.0])
        rng = np.random.default_rng(11)
        n = 40_000
        direct = sample_lifetime_age(rate, rng, size=n)

        def thin(rng, n):
            bmax = 2.0
            out = np.empty(n)
            for i in range(n):
                t = 0.0
                while True:
                    t += rng.exponential(1.0 / bmax)
                    if rng.random() <= rate(t) / bmax:
                        out[i] = t
                        break
            return out

        thinned = thin(np.random.default_rng(12), n)
        res = stats.ks_2samp(direct, thinned)
        assert res.statistic < 0.015


class TestSchemes:
    def test_u1_chain_length(self):
        sample = simulate_tree(age_model(), U1(3), RngStream(0))
        assert len(sample) == 4

    def test_u1_parents_linked(self):
        sample = simulate_tree(age_model(), U1(5), RngStream(1))
        assert list(sample.parent_index) == [-1, 0, 1, 2, 3, 4]
        recs = list(sample.records())
        assert recs[1].parent == recs[0].id

    def test_u2_exponential_population_growth(self):
        # E|alive| ~ e^{t} for unit constant rate: regression slope of
        # ln(mean count) on t over [2, 6] should be 1
        horizons = np.linspace(2.0, 6.0, 9)
        means = []
        for T in horizons:
            counts = [len(simulate_tree(age_model(), VT(T), RngStream(100 + r)))
                      for r in range(60)]
            means.append(np.mean(counts))
        slope = np.polyfit(horizons, np.log(means), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.05)

    def test_u2_contains_exactly_divided_cells(self):
        sample = simulate_tree(age_model(), U2(6.0), RngStream(2))
        assert np.all(sample.birth_time + sample.lifetime <= 6.0)

    def test_u2_vt_partition(self):
        # same stream: divided and alive cells partition cells born before T
        T = 6.0
        u2 = simulate_tree(size_model(), U2(T), RngStream(3))
        vt = simulate_tree(size_model(), VT(T), RngStream(3))
        assert np.all(vt.birth_time <= T)
        ids_u2 = set(u2.ids)
        ids_vt = set(vt.ids)
        assert not ids_u2 & ids_vt
        # every cell born before T appears exactly once: each divided parent
        # has both children accounted for (divided or alive)
        all_ids = ids_u2 | ids_vt
        for i in ids_u2:
            assert i + "0" in all_ids and i + "1" in all_ids

    def test_mitosis_exact_halving(self):
        sample = simulate_tree(size_model(), U2(5.0), RngStream(4))
        child = np.flatnonzero(sample.parent_index >= 0)
        parent = sample.parent_index[child]
        assert np.array_equal(sample.size_birth[child],
                              sample.size_division[parent] / 2.0)

    def test_mass_conservation_general_kernel(self):
        spec = ModelSpec("size", RateFunction.power(1.0, 1.0),
                         GrowthLaw.exponential(1.0),
                         FragmentationKernel.symmetric_beta(6.0))
        full = simulate_tree(spec, U2(5.0), RngStream(5))
        # sibling pairs sum exactly to the mother division size
        by_id = {i: k for k, i in enumerate(full.ids)}
        for k, i in enumerate(full.ids):
            sib = i[:-1] + ("1" if i.endswith("0") else "0")
            if i == "0" or sib not in by_id:
                continue
            p = full.parent_index[k]
            total = full.size_birth[k] + full.size_birth[by_id[sib]]
            assert total == pytest.approx(full.size_division[p], rel=1e-12)

    def test_determinism(self):
        a = simulate_tree(size_model(), U2(5.0), RngStream(6))
        b = simulate_tree(size_model(), U2(5.0), RngStream(6))
        assert a == b

    def test_distinct_streams_differ(self):
        a = simulate_tree(size_model(), U2(5.0), RngStream(6))
        b = simulate_tree(size_model(), U2(5.0), RngStream(7))
        assert a != b

    def test_vt_snapshot_observables(self):
        T = 5.0
        vt = simulate_tree(age_model(), VT(T), RngStream(8))
        ages = vt.ages_at_snapshot
        assert np.all(ages >= 0) and np.all(ages <= T)
        sizes = vt.sizes_at_snapshot
        assert np.all(sizes >= vt.size_birth)

    def test_cap_truncates(self):
        sample = simulate_tree(age_model(), U2(14.0), RngStream(9), cap=2000)
        assert sample.metadata["truncated"]

    def test_growth_variability_draws(self):
        var = GrowthVariability(0.2)
        draws = var.sample(np.random.default_rng(10), mean=1.0, size=200_000)
        assert draws.mean() == pytest.approx(1.0, abs=0.005)
        assert draws.std() / draws.mean() == pytest.approx(0.2, abs=0.005)
        spec = ModelSpec("increment", RateFunction.constant(1.0),
                         GrowthLaw.exponential(1.0), growth_variability=var)
        sample = simulate_tree(spec, U2(8.0), RngStream(10))
        assert sample.growth_rate.std() > 0.1

    def test_root_density_draw(self):
        grid = np.linspace(0.5, 1.5, 101)
        dens = GridDensity(grid, np.ones_like(grid)).normalize()
        sample = simulate_tree(size_model(), U1(0), RngStream(11), root_size=dens)
        assert 0.5 <= sample.size_birth[0] <= 1.5


class TestEmpiricalDensities:
    def test_single_record_histogram(self):
        sample = simulate_tree(age_model(), U1(0), RngStream(12))
        grid = np.linspace(0.0, 2.0 * sample.lifetime[0] + 0.1, 32)
        dens = empirical_density(sample, "lifetimes", h=0, grid=grid)
        assert dens.integral() == pytest.approx(1.0, rel=1e-9)
        assert np.count_nonzero(dens.values) == 1

    def test_u1_lifetime_density_exponential(self):
        sample = simulate_forest(age_model(), U1(9999), seed=13, n_trees=10)
        grid = np.linspace(0.0, 8.0, 801)
        dens = empirical_density(sample, "lifetimes", BIWEIGHT, grid=grid, h=0.1)
        err = np.trapezoid(np.abs(dens.values - np.exp(-grid)), grid)
        assert err < 0.03

    def test_u2_lifetime_density_biased(self):
        # whole-tree observation doubles the effective hazard for unit rate:
        # lifetime density 2 exp(-2a)
        sample = simulate_forest(age_model(), U2(9.0), seed=14, n_trees=18)
        assert len(sample) > 90_000
        grid = np.linspace(0.0, 6.0, 601)
        dens = empirical_density(sample, "lifetimes", BIWEIGHT, grid=grid, h=0.06)
        err = np.trapezoid(np.abs(dens.values - 2.0 * np.exp(-2.0 * grid)), grid)
        assert err < 0.05

    def test_joint_density_shapes(self):
        sample = simulate_tree(adder_model(), U2(7.0), RngStream(15))
        joint = empirical_density(sample, "joint-increment-size")
        assert joint.dim == 2
        assert joint.integral() == pytest.approx(1.0, rel=1e-6)

    def test_empty_selection_errors(self):
        sample = simulate_tree(age_model(), VT(3.0), RngStream(16))
        with pytest.raises(ValueError):
            empirical_density(sample, "lifetimes")


class TestCorrelationSignatures:
    def test_age_trigger_uncorrelated_lifetime_birth_size(self):
        # kappa = ln 2 keeps the log-size walk drift-free over long lineages
        sample = simulate_forest(age_model(kappa=np.log(2.0)), U1(4999), seed=17,
                                 n_trees=2)
        ok = np.isfinite(sample.lifetime) & np.isfinite(sample.size_birth)
        c = np.corrcoef(sample.lifetime[ok], sample.size_birth[ok])[0, 1]
        assert abs(c) < 0.1

    def test_increment_trigger_uncorrelated_birth_size_increment(self):
        sample = simulate_forest(adder_model(), U1(4999), seed=18, n_trees=2)
        c = np.corrcoef(sample.birth_sizes[: 10_000], sample.increments[: 10_000])[0, 1]
        assert abs(c) < 0.1

    def test_size_trigger_negative_lifetime_birth_size(self):
        sample = simulate_forest(size_model(), U1(4999), seed=19, n_trees=2)
        c = np.corrcoef(sample.lifetimes[: 10_000], sample.birth_sizes[: 10_000])[0, 1]
        assert c < -0.3


class TestSelectionBias:
    def test_u2_lifetimes_follow_tilted_density(self):
        # oracle: f2(a) = 2 e^{-lambda a} f1(a) with f1 = e^{-a}, lambda = 1
        sample = simulate_forest(age_model(), U2(10.0), seed=20, n_trees=5)
        z = sample.lifetimes
        assert z.size > 100_000
        res = stats.kstest(z, lambda a: 1.0 - np.exp(-2.0 * a))
        assert res.statistic < 0.05
