"""Selection-condition error estimators and the distribution cycle loop."""

import math

import numpy as np
import pytest
from scipy.integrate import quad

from crucial.numerics import SeededRng
from crucial.sampler import (
    ErrorReport,
    LossPopulation,
    Ordering,
    PopulationKind,
    SelectionCondition,
    SelectionMode,
    analytic_expected_errors,
    compare_conditions,
    distribution_cycle_sim,
    mc_expected_errors,
    ordering_check,
)


def norm_pdf(x, mu, sigma):
    z = (x - mu) / sigma
    return math.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


def half_pdf(x, mu, sigma):
    if x < mu:
        return 0.0
    return 2.0 * norm_pdf(x, mu, sigma)


def tilted_moment(pdf, rate, power, lo, hi):
    """E[l^power] under density proportional to exp(-rate*l)*pdf(l), by quadrature."""
    z = quad(lambda x: math.exp(-rate * x) * pdf(x), lo, hi, limit=200)[0]
    m = quad(lambda x: (x ** power) * math.exp(-rate * x) * pdf(x), lo, hi, limit=200)[0]
    return m / z


class TestLossPopulation:
    def test_moments_normal(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=1.3, sigma=0.4)
        assert pop.population_mean() == pytest.approx(1.3)
        assert pop.population_var() == pytest.approx(0.16)

    def test_moments_half_normal(self):
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.2, sigma=0.5)
        assert pop.population_mean() == pytest.approx(0.2 + 0.5 * math.sqrt(2.0 / math.pi), rel=1e-12)
        assert pop.population_var() == pytest.approx(0.25 * (1.0 - 2.0 / math.pi), rel=1e-12)
        # cross-check against quadrature of the folded density
        m1 = quad(lambda x: x * half_pdf(x, 0.2, 0.5), 0.2, 10.0)[0]
        assert pop.population_mean() == pytest.approx(m1, rel=1e-9)

    def test_validation(self):
        with pytest.raises(ValueError):
            LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=0.0)
        with pytest.raises(ValueError):
            LossPopulation(PopulationKind.NORMAL, mu=math.nan, sigma=1.0)

    def test_half_normal_draws_respect_floor(self):
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.7, sigma=0.3)
        x = pop.draw(5000, SeededRng(4).generator)
        assert x.shape == (5000,)
        assert np.all(x >= 0.7)

    def test_quantile_round_trip(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.5, sigma=2.0)
        assert pop.quantile(np.array([0.5]))[0] == pytest.approx(0.5, abs=1e-12)
        hp = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=1.0)
        # median of |N(0,1)| is the 75% point of N(0,1)
        assert hp.quantile(np.array([0.5]))[0] == pytest.approx(0.6744897501960817, abs=1e-12)
        assert np.all(hp.quantile(np.linspace(0.001, 0.999, 99)) >= 0.0)

    def test_tilted_quantile_mean_normal(self):
        # tilting a normal by exp(-rate*l) shifts the mean to mu - rate*sigma^2
        pop = LossPopulation(PopulationKind.NORMAL, mu=1.0, sigma=0.5)
        u = (np.arange(200001) + 0.5) / 200001
        mean = float(np.mean(pop.tilted_quantile(u, 2.0)))
        assert mean == pytest.approx(1.0 - 2.0 * 0.25, abs=1e-3)

    def test_tilted_quantile_mean_half_normal_vs_quadrature(self):
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=0.5)
        truth = tilted_moment(lambda x: half_pdf(x, 0.0, 0.5), 1.0, 1, 0.0, 8.0)
        assert truth == pytest.approx(0.3205388851840324, abs=1e-12)
        u = (np.arange(200001) + 0.5) / 200001
        mean = float(np.mean(pop.tilted_quantile(u, 1.0)))
        assert mean == pytest.approx(truth, abs=1e-3)

    def test_log_tilt_ratio_matches_quadrature_normalizer(self):
        for kind, pdf in (
            (PopulationKind.NORMAL, lambda x: norm_pdf(x, 0.3, 0.6)),
            (PopulationKind.HALF_NORMAL, lambda x: half_pdf(x, 0.3, 0.6)),
        ):
            pop = LossPopulation(kind, mu=0.3, sigma=0.6)
            rate = 1.5
            lo = -8.0 if kind is PopulationKind.NORMAL else 0.3
            z = quad(lambda x: math.exp(-rate * x) * pdf(x), lo, 10.0, limit=200)[0]
            for l in (0.35, 0.9, 1.7):
                expect = math.log(math.exp(-rate * l) * pdf(l) / z / pdf(l))
                got = float(pop.log_tilt_ratio(np.array([l]), rate)[0])
                assert got == pytest.approx(expect, rel=1e-9)


class TestAnalytic:
    def test_normal_closed_form(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=0.5)
        e_u, e_p, diamond = analytic_expected_errors(pop, 1.0)
        assert e_u == pytest.approx(0.25, abs=1e-15)
        assert e_p == pytest.approx(0.3125, abs=1e-15)
        assert diamond is None

    def test_normal_closed_form_vs_quadrature(self):
        mu, sigma, rate = 0.4, 1.5, 0.8
        pop = LossPopulation(PopulationKind.NORMAL, mu=mu, sigma=sigma)
        e_u, e_p, _ = analytic_expected_errors(pop, rate)
        pdf = lambda x: norm_pdf(x, mu, sigma)
        m2 = tilted_moment(pdf, rate, 2, mu - 12 * sigma, mu + 12 * sigma)
        m1 = tilted_moment(pdf, rate, 1, mu - 12 * sigma, mu + 12 * sigma)
        truth = m2 - 2.0 * mu * m1 + mu * mu
        assert e_p == pytest.approx(truth, rel=1e-9)
        assert e_u == pytest.approx(sigma * sigma, rel=1e-12)

    def test_half_normal_pinned_values(self):
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=0.5)
        e_u, e_p, diamond = analytic_expected_errors(pop, 1.0)
        assert e_u == pytest.approx(0.09084505690810465, abs=1e-15)
        assert e_p == pytest.approx(0.12495882967507027, abs=1e-14)
        assert diamond == pytest.approx(0.5705388851840324, abs=1e-14)

    def test_half_normal_diamond_is_the_tilted_mean_shift(self):
        # the erfc term satisfies E_tilted[l] = mu_gauss - rate*sigma^2 + diamond
        sigma, rate = 0.5, 1.0
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=sigma)
        _, _, diamond = analytic_expected_errors(pop, rate)
        truth = tilted_moment(lambda x: half_pdf(x, 0.0, sigma), rate, 1, 0.0, 8.0)
        assert -rate * sigma * sigma + diamond == pytest.approx(truth, rel=1e-12)

    def test_half_normal_formula_is_transcribed_not_rederived(self):
        # quadrature ground truth for E_P disagrees with the transcribed
        # closed form; the package keeps the closed form verbatim and lets
        # the MC estimator adjudicate.
        sigma, rate = 0.5, 1.0
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=sigma)
        _, e_p, _ = analytic_expected_errors(pop, rate)
        pdf = lambda x: half_pdf(x, 0.0, sigma)
        center = pop.population_mean()
        m2 = tilted_moment(pdf, rate, 2, 0.0, 8.0)
        m1 = tilted_moment(pdf, rate, 1, 0.0, 8.0)
        truth = m2 - 2.0 * center * m1 + center * center
        assert truth == pytest.approx(0.07326719417058561, abs=1e-12)
        assert abs(e_p - truth) > 0.04  # materially different, not a rounding gap

    def test_ordering_normal_always_uniform(self):
        for sigma in (0.1, 0.5, 1.0, 2.0):
            for rate in (0.5, 1.0, 2.0):
                pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=sigma)
                assert ordering_check(pop, rate) is Ordering.U_BEATS_P

    def test_ordering_half_normal_transcribed_direction(self):
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=0.5)
        assert ordering_check(pop, 1.0) is Ordering.U_BEATS_P

    def test_rate_validation(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=1.0)
        with pytest.raises(ValueError):
            analytic_expected_errors(pop, 0.0)
        with pytest.raises(ValueError):
            SelectionCondition(SelectionMode.EXPONENTIAL, rate=-1.0)


class TestMonteCarlo:
    def test_normal_hits_both_closed_forms(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=0.5)
        rep = compare_conditions(pop, 1.0, 200_000, SeededRng(0))
        assert abs(rep.mc_eu - 0.25) <= 3.0 * rep.mc_eu_stderr
        assert abs(rep.mc_ep - 0.3125) <= 3.0 * rep.mc_ep_stderr
        assert 0.0 < rep.mc_eu_stderr < 0.01
        assert 0.0 < rep.mc_ep_stderr < 0.01

    def test_normal_survives_heavy_tilt_corner(self):
        # rate*sigma = 4 is where naive importance weighting collapses
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=2.0)
        rep = compare_conditions(pop, 2.0, 200_000, SeededRng(0))
        assert abs(rep.mc_ep - (4.0 * 16.0 + 4.0)) <= 3.0 * rep.mc_ep_stderr

    def test_half_normal_tracks_quadrature_truth(self):
        # the estimator follows the true tilted error, not the transcribed form
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=0.5)
        rep = compare_conditions(pop, 1.0, 400_000, SeededRng(1))
        truth = 0.07326719417058561
        assert abs(rep.mc_ep - truth) <= 4.0 * rep.mc_ep_stderr
        assert abs(rep.mc_ep - rep.analytic_ep) > 10.0 * rep.mc_ep_stderr

    def test_half_normal_empirical_ordering_flips(self):
        # transcribed closed forms order E_U < E_P; the measured errors
        # order the other way, which is the disagreement the report surfaces
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.0, sigma=0.5)
        rep = compare_conditions(pop, 1.0, 400_000, SeededRng(1))
        assert rep.analytic_eu < rep.analytic_ep
        assert rep.mc_ep + 3.0 * rep.mc_ep_stderr < rep.mc_eu - 3.0 * rep.mc_eu_stderr

    def test_worker_count_is_invisible(self):
        pop = LossPopulation(PopulationKind.HALF_NORMAL, mu=0.1, sigma=0.7)
        a = compare_conditions(pop, 1.5, 50_000, SeededRng(7), workers=1)
        b = compare_conditions(pop, 1.5, 50_000, SeededRng(7), workers=4)
        assert (a.mc_eu, a.mc_eu_stderr, a.mc_ep, a.mc_ep_stderr) == (
            b.mc_eu, b.mc_eu_stderr, b.mc_ep, b.mc_ep_stderr)

    def test_same_seed_reproduces_and_seeds_differ(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=1.0)
        cond = SelectionCondition(SelectionMode.EXPONENTIAL, rate=1.0)
        a = mc_expected_errors(pop, cond, 10_000, SeededRng(5))
        b = mc_expected_errors(pop, cond, 10_000, SeededRng(5))
        c = mc_expected_errors(pop, cond, 10_000, SeededRng(6))
        assert a.mc_ep == b.mc_ep and a.mc_ep_stderr == b.mc_ep_stderr
        assert a.mc_ep != c.mc_ep

    def test_error_shrinks_with_n(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=1.0)
        cond = SelectionCondition(SelectionMode.EXPONENTIAL, rate=1.0)
        truth = 2.0  # rate^2 sigma^4 + sigma^2
        small = mc_expected_errors(pop, cond, 4_000, SeededRng(11))
        big = mc_expected_errors(pop, cond, 256_000, SeededRng(11))
        assert big.mc_ep_stderr < 0.25 * small.mc_ep_stderr
        assert abs(big.mc_ep - truth) < 0.01

    def test_uniform_report_leaves_ep_unset(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=1.0)
        rep = mc_expected_errors(
            pop, SelectionCondition(SelectionMode.UNIFORM), 10_000, SeededRng(2))
        assert isinstance(rep, ErrorReport)
        assert rep.mc_eu is not None and rep.mc_ep is None
        assert rep.n_samples == 10_000 and rep.seed == 2

    def test_n_validation(self):
        pop = LossPopulation(PopulationKind.NORMAL, mu=0.0, sigma=1.0)
        with pytest.raises(ValueError):
            mc_expected_errors(pop, SelectionCondition(SelectionMode.UNIFORM), 0, SeededRng(0))


class TestCycleSim:
    def test_entry_count_includes_initial_population(self):
        out = distribution_cycle_sim(500, 12, SeededRng(3))
        assert len(out) == 13
        assert len(distribution_cycle_sim(500, 0, SeededRng(3))) == 1

    def test_uniform_selection_drifts_skew_positive(self):
        out = distribution_cycle_sim(4000, 60, SeededRng(0), schedule="uniform")
        assert out[-1].skewness > 0.5

    def test_exponential_selection_pulls_skew_down(self):
        out = distribution_cycle_sim(4000, 10, SeededRng(0),
                                     schedule="exponential", init="half_normal")
        sk = [s.skewness for s in out]
        assert sk[0] > 0.5
        assert min(sk[:11]) < 0.2
        assert sk[10] < sk[0]

    def test_alternating_schedule_oscillates(self):
        out = distribution_cycle_sim(4000, 100, SeededRng(0), schedule="alternating")
        sk = np.array([s.skewness for s in out])
        flips = int(np.sum(np.sign(sk[1:]) != np.sign(sk[:-1])))
        assert flips >= 10

    def test_validation(self):
        with pytest.raises(ValueError):
            distribution_cycle_sim(0, 5, SeededRng(0))
        with pytest.raises(ValueError):
            distribution_cycle_sim(10, -1, SeededRng(0))
        with pytest.raises(ValueError):
            distribution_cycle_sim(10, 5, SeededRng(0), schedule="bogus")
        with pytest.raises(ValueError):
            distribution_cycle_sim(10, 5, SeededRng(0), init="bogus")
