import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from distmle.errors import DomainError, MomentRangeError
from distmle.expfam import (
    FullExpFamily,
    SampleSet,
    inverse_moment_map,
    kl_divergence,
    log_density,
    mle_full,
    moment_map,
    sample_full,
    sample_loglik,
    suff_stat_mean,
    unit_gaussian,
    zero_mean_gaussian,
)

VAR = zero_mean_gaussian()
BIV = unit_gaussian(2)


def numeric_family():
    """The variance family with every closed form stripped, to exercise the fallbacks."""
    return FullExpFamily(
        name="variance_numeric",
        stat_dim=1,
        data_dim=1,
        suff_stat=VAR.suff_stat,
        log_partition=VAR.log_partition,
        domain=VAR.domain,
        reference_point=np.array([-0.5]),
    )


def numeric_bivariate():
    return FullExpFamily(
        name="biv_numeric",
        stat_dim=2,
        data_dim=2,
        suff_stat=BIV.suff_stat,
        log_partition=BIV.log_partition,
        domain=BIV.domain,
        base_measure=BIV.base_measure,
    )


class TestLogDensity:
    def test_standard_normal_at_zero(self):
        assert log_density(VAR, [-0.5], 0.0) == pytest.approx(-0.5 * math.log(2 * math.pi), abs=1e-14)

    def test_standard_normal_at_one(self):
        assert log_density(VAR, [-0.5], 1.0) == pytest.approx(-0.5 - 0.5 * math.log(2 * math.pi), abs=1e-14)

    def test_variance_two_matches_scipy(self):
        assert log_density(VAR, [-0.25], 0.0) == pytest.approx(stats.norm(0, math.sqrt(2)).logpdf(0.0), abs=1e-14)

    def test_vectorised_points(self):
        x = np.linspace(-3, 3, 7)
        got = log_density(VAR, [-0.3], x)
        assert got.shape == (7,)
        np.testing.assert_allclose(got, stats.norm(0, math.sqrt(1 / 0.6)).logpdf(x), atol=1e-13)

    def test_bivariate_matches_scipy(self):
        x = np.array([[0.3, -1.0], [2.0, 0.5]])
        ref = stats.multivariate_normal([3.0, -1.0], np.eye(2)).logpdf(x)
        np.testing.assert_allclose(log_density(BIV, [3.0, -1.0], x), ref, atol=1e-13)

    def test_domain_violation(self):
        with pytest.raises(DomainError):
            log_density(VAR, [0.5], 0.0)


class TestMomentMap:
    def test_unit_variance(self):
        assert moment_map(VAR, [-0.5])[0] == 1.0

    def test_variance_two(self):
        assert moment_map(VAR, [-0.25])[0] == pytest.approx(2.0, abs=1e-15)

    def test_bivariate_mean(self):
        np.testing.assert_array_equal(moment_map(BIV, [3.0, -1.0]), [3.0, -1.0])

    def test_domain_violation(self):
        with pytest.raises(DomainError):
            moment_map(VAR, [0.0])

    @pytest.mark.parametrize("theta", np.linspace(-5, -0.05, 50))
    def test_gradient_identity(self, theta):
        h = 1e-5 * abs(theta)
        fd = (VAR.log_partition([theta + h]) - VAR.log_partition([theta - h])) / (2 * h)
        assert moment_map(VAR, [theta])[0] == pytest.approx(fd, rel=1e-6)

    def test_numeric_fallback_matches_closed_form(self):
        fam = numeric_family()
        for t in (-2.0, -0.5, -0.1):
            assert moment_map(fam, [t])[0] == pytest.approx(-0.5 / t, rel=1e-8)


class TestInverseMomentMap:
    def test_unit(self):
        assert inverse_moment_map(VAR, [1.0])[0] == -0.5

    def test_two(self):
        assert inverse_moment_map(VAR, [2.0])[0] == pytest.approx(-0.25, abs=1e-15)

    @pytest.mark.parametrize("mu", [0.0, -1.0, math.nan, math.inf])
    def test_range_error(self, mu):
        with pytest.raises(MomentRangeError):
            inverse_moment_map(VAR, [mu])

    @pytest.mark.parametrize("theta", np.linspace(-5, -0.05, 50))
    def test_round_trip(self, theta):
        assert inverse_moment_map(VAR, moment_map(VAR, [theta]))[0] == pytest.approx(theta, abs=1e-9)

    @pytest.mark.parametrize("mu", [0.01, 0.5, 1.0, 3.0, 40.0])
    def test_newton_fallback(self, mu):
        theta = inverse_moment_map(numeric_family(), [mu])
        assert theta[0] == pytest.approx(-0.5 / mu, rel=1e-8)

    def test_newton_fallback_bivariate(self):
        theta = inverse_moment_map(numeric_bivariate(), [1.5, -2.0])
        np.testing.assert_allclose(theta, [1.5, -2.0], atol=1e-9)

    def test_numeric_out_of_range(self):
        with pytest.raises(MomentRangeError):
            inverse_moment_map(numeric_family(), [-1.0])


class TestParameterizations:
    @pytest.mark.parametrize("label", ["variance", "std", "precision"])
    def test_round_trip_grid(self, label):
        chart = VAR.parameterization(label)
        vals = np.linspace(0.05, 20, 50)
        back = np.array([chart.from_natural(chart.to_natural(v)) for v in vals])
        np.testing.assert_allclose(back, vals, rtol=1e-13)

    def test_charts_agree_on_the_model(self):
        # sigma^2 = 4 in every chart
        nat = [VAR.parameterization(l).to_natural(v) for l, v in (("variance", 4.0), ("std", 2.0), ("precision", 0.25))]
        np.testing.assert_allclose(nat, -0.125, rtol=1e-15)

    def test_unknown_chart(self):
        with pytest.raises(KeyError):
            VAR.parameterization("log-variance")


class TestSuffStatAndMle:
    def test_mean_of_squares(self):
        assert suff_stat_mean(VAR, SampleSet([1.0, -1.0]))[0] == 1.0

    def test_zero_and_two(self):
        assert suff_stat_mean(VAR, SampleSet([0.0, 2.0]))[0] == 2.0

    def test_bivariate_means(self):
        np.testing.assert_array_equal(suff_stat_mean(BIV, SampleSet([[0, 0], [2, 4]])), [1.0, 2.0])

    def test_empty_sample_rejected(self):
        with pytest.raises(ValueError):
            SampleSet(np.empty((0, 1)))

    def test_mle_unit(self):
        theta = mle_full(VAR, SampleSet([1.0, -1.0, 1.0, -1.0]))
        assert -0.5 / theta[0] == 1.0

    def test_mle_two(self):
        theta = mle_full(VAR, SampleSet([0.0, 2.0]))
        assert -0.5 / theta[0] == pytest.approx(2.0, abs=1e-15)

    def test_mle_single_bivariate(self):
        np.testing.assert_array_equal(mle_full(BIV, SampleSet([[1.0, 1.0]])), [1.0, 1.0])

    def test_mle_zero_data_raises(self):
        with pytest.raises(MomentRangeError):
            mle_full(VAR, SampleSet([0.0, 0.0]))

    def test_mle_beats_random_points_and_is_stationary(self):
        s = sample_full(VAR, [-0.3], 200, 4)
        theta = mle_full(VAR, s)
        best = sample_loglik(VAR, theta, s)
        rng = np.random.default_rng(0)
        for t in -rng.uniform(0.01, 5, 100):
            assert sample_loglik(VAR, [t], s) <= best
        # score: sum phi - n mu(theta)
        grad = float(np.sum(s.points**2) - len(s) * moment_map(VAR, theta)[0])
        assert abs(grad) < 1e-8


class TestSampling:
    def test_second_moment(self):
        s = sample_full(VAR, [-0.5], 100_000, 1)
        assert abs(np.mean(s.points**2) - 1) < 4 * math.sqrt(2) / math.sqrt(1e5)

    def test_determinism(self):
        a = sample_full(VAR, [-0.5], 50, 9)
        b = sample_full(VAR, [-0.5], 50, 9)
        np.testing.assert_array_equal(a.points, b.points)

    def test_bivariate_mean(self):
        s = sample_full(BIV, [0.0, 0.0], 100_000, 2)
        assert np.all(np.abs(s.points.mean(axis=0)) < 0.02)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            sample_full(VAR, [-0.5], 0, 1)

    def test_domain(self):
        with pytest.raises(DomainError):
            sample_full(VAR, [1.0], 5, 1)


class TestKL:
    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.1, 10), st.floats(0.1, 10))
    def test_matches_gaussian_formula(self, s1, s2):
        ref = 0.5 * (s1 / s2 - 1 - math.log(s1 / s2))
        got = kl_divergence(VAR, [-0.5 / s1], [-0.5 / s2])
        assert got == pytest.approx(ref, rel=1e-9, abs=1e-14)

    def test_bivariate_is_half_squared_distance(self):
        assert kl_divergence(BIV, [0, 0], [3, 4]) == pytest.approx(12.5)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=30).filter(lambda v: np.mean(np.square(v)) > 1e-300))
def test_mle_round_trip_property(values):
    s = SampleSet(values)
    theta = mle_full(VAR, s)
    assert moment_map(VAR, theta)[0] == pytest.approx(np.mean(np.square(values)), rel=1e-12)
