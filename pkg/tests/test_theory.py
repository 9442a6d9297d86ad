import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special, stats

from distmle import kernels
from distmle.curved import ChartModel, CurvedModel, EllipseModel, LinearEmbeddingModel, curvature_scalar, fisher_info
from distmle.errors import RankDeficiencyError
from distmle.expfam import FullExpFamily, unit_gaussian, zero_mean_gaussian
from distmle.theory import (
    WishartSpec,
    beta_linear,
    predict_asymptotics,
    projection_matrices,
    sample_wishart,
    wishart_mc_estimate,
    wishart_moments,
)

ELL = EllipseModel(1.0, 5.0)
VAR = zero_mean_gaussian()


def correlated_gaussian(C):
    """Gaussian with fixed covariance C: log Z = theta' C theta / 2, no closed-form hooks."""
    C = np.asarray(C, dtype=float)
    return FullExpFamily(
        name="corr", stat_dim=C.shape[0], data_dim=C.shape[0],
        suff_stat=lambda x: x, log_partition=lambda t: 0.5 * float(t @ C @ t), domain=lambda t: True,
    )


def twisted_curve(C):
    return CurvedModel(
        correlated_gaussian(C), 1,
        eta=lambda t: np.array([math.cos(t[0]), 2 * math.sin(t[0]), t[0] ** 2]),
        eta_dot=lambda t: np.array([[-math.sin(t[0])], [2 * math.cos(t[0])], [2 * t[0]]]),
        eta_ddot=lambda t: [np.array([[-math.cos(t[0])], [-2 * math.sin(t[0])], [2.0]])],
        lower=[-3.0], upper=[3.0],
    )


class TestProjection:
    def test_ellipse_at_zero(self):
        pp = projection_matrices(ELL, [0.0])
        np.testing.assert_allclose(pp.p_star, np.diag([0.0, 1.0]), atol=1e-15)
        np.testing.assert_allclose(pp.n_star, np.diag([1.0, 0.0]), atol=1e-15)

    def test_full_rank_linear(self):
        m = LinearEmbeddingModel(unit_gaussian(2), np.array([[1.0, 2.0], [0.0, 1.0]]))
        pp = projection_matrices(m, [0.1, 0.2])
        np.testing.assert_allclose(pp.p_star, np.eye(2), atol=1e-12)
        np.testing.assert_allclose(pp.n_star, 0.0, atol=1e-12)

    def test_circle_fixes_tangent(self):
        m = EllipseModel(1, 1)
        pp = projection_matrices(m, [math.pi / 4])
        ed = m.eta_dot([math.pi / 4])
        np.testing.assert_allclose(pp.p_star @ ed, ed, atol=1e-10)
        u = np.array([-1.0, 1.0]) / math.sqrt(2)
        np.testing.assert_allclose(pp.p_star, np.outer(u, u), atol=1e-12)

    @pytest.mark.parametrize("theta", [-2.0, -0.4, 0.0, 1.1, 2.5])
    def test_invariants_with_nonidentity_sigma(self, theta):
        C = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, -0.2], [0.1, -0.2, 0.5]])
        m = twisted_curve(C)
        pp = projection_matrices(m, [theta])
        S = m.sigma([theta])
        np.testing.assert_allclose(S, C, atol=1e-6)
        ed = m.eta_dot([theta])
        np.testing.assert_allclose(pp.p_star + pp.n_star, np.eye(3), atol=1e-10)
        np.testing.assert_allclose(pp.p_star @ pp.p_star, pp.p_star, atol=1e-8)
        np.testing.assert_allclose(pp.n_star @ S @ ed, 0.0, atol=1e-8)
        np.testing.assert_allclose(pp.n_star.T, np.linalg.solve(S, pp.n_star @ S), atol=1e-8)

    def test_rank_deficiency(self):
        with pytest.raises(RankDeficiencyError):
            projection_matrices(LinearEmbeddingModel(unit_gaussian(2), np.zeros((2, 1))), [0.0])


class TestBeta:
    def test_ellipse_closed_form(self):
        # I^-2 (eta_ddot . eta_dot + E[l''']/2), with E[l'''] = 3/2 (b^2 - a^2) sin 2t
        assert beta_linear(ELL, [math.pi / 4]) == pytest.approx(6 / 169, rel=1e-12)

    def test_circle_rotation_invariant(self):
        m = EllipseModel(2.0, 2.0)
        vals = [beta_linear(m, [t]) for t in np.linspace(-3, 3, 25)]
        np.testing.assert_allclose(vals, vals[0], atol=1e-8)

    def test_natural_variance_chart_nonzero(self):
        b = beta_linear(ChartModel(VAR, VAR.parameterization("natural")), [-0.5])
        assert abs(b) > 0.5

    @pytest.mark.parametrize("chart,value,ratio_fn", [
        # exact finite-sample means of each local estimate, with s ~ sigma^2 chi2_m / m
        ("natural", -0.5, lambda m: m / (m - 2)),
        ("precision", 1.0, lambda m: m / (m - 2)),
        ("variance", 1.0, lambda m: 1.0),
        ("std", 1.0, lambda m: math.sqrt(2 / m) * math.exp(special.gammaln((m + 1) / 2) - special.gammaln(m / 2))),
    ])
    def test_variance_charts_against_exact_bias(self, chart, value, ratio_fn):
        d, n = 10, 100_000
        m = n // d
        exact_bias = value * (ratio_fn(m) - ratio_fn(n))
        beta = beta_linear(ChartModel(VAR, VAR.parameterization(chart)), [value])
        assert (d - 1) * beta / n == pytest.approx(exact_bias, rel=2e-3, abs=1e-12)

    def test_reports_error_estimate(self):
        beta, err = beta_linear(ChartModel(VAR, VAR.parameterization("std")), [1.0], return_error=True)
        assert beta == pytest.approx(-0.25, abs=1e-8)
        assert 0 <= err < 1e-6

    def test_requires_scalar_model(self):
        m = LinearEmbeddingModel(unit_gaussian(2), np.eye(2))
        with pytest.raises(ValueError):
            beta_linear(m, [0.0, 0.0])

    def test_bias_slope_matches_simulation(self):
        # fitted coefficient of (d - 1)/n in E[linear - mle] over three sample sizes
        d, trials = 10, 1500
        rng = np.random.default_rng(12)
        center = ELL.eta([math.pi / 4])
        xs, ys = [], []
        for n in (500, 1000, 2000):
            diffs = []
            for _ in range(trials):
                # local means are sufficient: draw them directly
                eps = rng.standard_normal((d, 2)) / math.sqrt(n / d)
                mus = np.vstack([center + eps, center + eps.mean(axis=0)])
                th = kernels.ellipse_argmax(mus, 1.0, 5.0)[0]
                diffs.append(th[:d].mean() - th[d])
            xs.append((d - 1) / n)
            ys.append(np.mean(diffs))
        slope = np.dot(xs, ys) / np.dot(xs, xs)
        assert slope == pytest.approx(6 / 169, rel=0.25)


class TestPredict:
    def test_kl_example(self):
        p = predict_asymptotics(0.011374, 13.0, 0.0, 1000, 10)
        assert p.mse_vs_mle == pytest.approx(9e-6 * 0.011374 / 13, rel=1e-12)
        assert p.mse_vs_mle == pytest.approx(7.87e-9, rel=1e-3)
        assert p.bias_vs_mle == 0.0

    def test_single_machine(self):
        p = predict_asymptotics(0.5, 2.0, 0.3, 100, 1)
        assert p.bias_vs_mle == p.mse_vs_mle == p.mse_excess_vs_true == p.lower_bound == 0.0

    def test_flat_family(self):
        assert predict_asymptotics(0.0, 3.0, 0.0, 50, 10).mse_vs_mle == 0.0

    def test_linear_terms(self):
        p = predict_asymptotics(0.01, 13.0, 0.05, 1000, 10)
        assert p.bias_vs_mle == pytest.approx(9 * 0.05 / 1000)
        assert p.mse_vs_mle == pytest.approx(9e-6 * (0.01 / 13 + 11 * 0.0025))
        assert p.mse_excess_vs_true == pytest.approx(9e-6 * (0.01 / 13 + 2 * 0.0025))

    @pytest.mark.parametrize("fisher", [0.0, -1.0])
    def test_bad_fisher(self, fisher):
        with pytest.raises(ValueError):
            predict_asymptotics(0.1, fisher, 0.0, 10, 2)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0, 10), st.floats(1e-3, 100), st.floats(-5, 5), st.integers(1, 10**6), st.integers(2, 100))
    def test_lower_bound(self, g2, fisher, beta, n, d):
        p = predict_asymptotics(g2, fisher, beta, n, d)
        bound = (d - 1) * g2 / fisher / n**2
        assert p.lower_bound == pytest.approx(bound)
        assert p.mse_vs_mle >= bound * (1 - 1e-12)
        excess = (d - 1) * (d + 1) * beta**2 / n**2
        assert p.mse_vs_mle - bound == pytest.approx(excess, rel=1e-9, abs=1e-12 * bound)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 10), st.floats(1e-3, 100), st.floats(-5, 5), st.integers(1, 10**4))
    def test_increasing_in_d(self, g2, fisher, beta, n):
        vals = [predict_asymptotics(g2, fisher, beta, n, d).mse_vs_mle for d in range(1, 30)]
        assert all(b > a for a, b in zip(vals, vals[1:]))


class TestWishart:
    def test_identity_example(self):
        e1, e2, e3 = wishart_moments(WishartSpec(np.eye(2), 3), np.eye(2), np.eye(2))
        assert e1 == 6.0
        assert e2 == 2 * 3 * 2 + 9 * 4 == 48.0
        assert e3 == e2

    def test_zero_matrix(self):
        assert wishart_moments(WishartSpec(np.eye(2), 3), np.zeros((2, 2))) == (0.0, 0.0, 0.0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            wishart_moments(WishartSpec(np.eye(2), 3), np.eye(3))

    @pytest.mark.parametrize("sigma", [[[1.0, 2.0], [2.0, 1.0]], [[1.0, 0.0], [1.0, 1.0]]])
    def test_spec_validation(self, sigma):
        with pytest.raises(ValueError):
            WishartSpec(np.array(sigma), 2)

    def test_bad_dof(self):
        with pytest.raises(ValueError):
            WishartSpec(np.eye(2), 0)

    def test_mc_identity(self):
        mean, mean_sq, (se, se_sq) = wishart_mc_estimate(WishartSpec(np.eye(2), 3), np.eye(2), 100_000, 1)
        assert abs(mean - 6) < 3 * se
        assert abs(mean_sq - 48) < 4 * se_sq

    def test_mc_scalar(self):
        mean, _, (se, _) = wishart_mc_estimate(WishartSpec([[4.0]], 1), np.eye(1), 100_000, 2)
        assert abs(mean - 4) < 3 * se

    def test_mc_deterministic(self):
        spec = WishartSpec(np.eye(2), 2)
        assert wishart_mc_estimate(spec, np.eye(2), 1000, 5) == wishart_mc_estimate(spec, np.eye(2), 1000, 5)

    def test_mc_chunking_invariance(self):
        spec = WishartSpec(np.eye(2), 2)
        a = wishart_mc_estimate(spec, np.eye(2), 5000, 5, chunk=1000)
        b = wishart_mc_estimate(spec, np.eye(2), 5000, 5, chunk=1000)
        assert a == b

    def test_samples_match_scipy_wishart(self):
        sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
        spec = WishartSpec(sigma, 4)
        W = sample_wishart(spec, 40_000, np.random.default_rng(0))
        ref = stats.wishart(df=4, scale=sigma)
        np.testing.assert_allclose(W.mean(axis=0), ref.mean(), rtol=0.02)
        np.testing.assert_allclose(W[:, 0, 0].var(), ref.var()[0, 0], rtol=0.05)

    def test_cross_moment_by_mc(self):
        rng = np.random.default_rng(4)
        sigma = np.array([[1.5, -0.3], [-0.3, 0.7]])
        A = np.array([[1.0, 0.2], [0.2, -0.5]])
        B = np.array([[0.3, 0.0], [0.0, 2.0]])
        spec = WishartSpec(sigma, 5)
        W = sample_wishart(spec, 200_000, rng)
        prod = np.einsum("ij,sji->s", A, W) * np.einsum("ij,sji->s", B, W)
        se = prod.std() / math.sqrt(prod.size)
        assert abs(prod.mean() - wishart_moments(spec, A, B)[2]) < 4 * se


def test_kl_gap_trace_functional():
    """n (theta_kl - theta_mle) I^2 behaves like tr(G W) with W the scaled scatter of local means.

    ``W = (n/d) sum_k (mu_k - mu_bar)(mu_k - mu_bar)'`` is Wishart(I, d - 1) for Gaussian data,
    and ``G = (N' eta_ddot eta_dot' + eta_dot eta_ddot' N) / 2``.
    """
    t0, d, n = math.pi / 4, 10, 20_000
    ed = ELL.eta_dot([t0])[:, 0]
    edd = ELL.eta_ddot([t0])[0][:, 0]
    I = float(ed @ ed)
    N = projection_matrices(ELL, [t0]).n_star
    G = 0.5 * (np.outer(N.T @ edd, ed) + np.outer(ed, N.T @ edd))
    spec = WishartSpec(np.eye(2), d - 1)
    e_sq = wishart_moments(spec, G)[1]
    # E (tr G W)^2 / I^4 is the asymptotic n^2 E (theta_kl - theta_mle)^2 = (d - 1) gamma^2 / I
    assert e_sq / I**4 == pytest.approx((d - 1) * curvature_scalar(ELL, [t0]) ** 2 / I, rel=1e-12)
    # synthetic Wisharts against simulated estimators, pathwise
    rng = np.random.default_rng(8)
    center = ELL.eta([t0])
    gaps, funcs = [], []
    for _ in range(2000):
        eps = rng.standard_normal((d, 2)) / math.sqrt(n / d)
        mus = center + eps
        th = kernels.ellipse_argmax(np.vstack([mus, mus.mean(axis=0)]), 1.0, 5.0)[0]
        eta_bar = np.mean([ELL.eta([t]) for t in th[:d]], axis=0)
        kl = kernels.ellipse_argmax(eta_bar[None], 1.0, 5.0)[0][0]
        dev = eps - eps.mean(axis=0)
        W = (n / d) * dev.T @ dev
        gaps.append(n * (kl - th[d]) * I**2)
        funcs.append(np.trace(G @ W))
    gaps, funcs = np.array(gaps), np.array(funcs)
    assert np.corrcoef(gaps, funcs)[0, 1] > 0.95
    ms = np.mean(funcs**2)
    se = np.std(funcs**2) / math.sqrt(funcs.size)
    assert abs(ms - e_sq) < 4 * se
