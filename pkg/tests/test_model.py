import math
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import cumulative_trapezoid

from eivigp.kernel import Grid, KernelParams, ParameterDomainError, QuadratureRule, rate_cov, rate_cov_matrix
from eivigp.model import (
    GiaParams,
    LatentState,
    ObservationRecord,
    Priors,
    TimeAxis,
    apply_gia,
    grid_factor,
    h_values,
    log_prior,
    loglik_eiv,
    loglik_eiv_grad,
    loglik_sigp,
)

AXIS = TimeAxis(origin=0.0, scale=1000.0)


def state(w, rho=0.2, alpha=0.0, tau2=0.01, chis=(), kappa=2.0, upsilon2=4.0):
    return LatentState(alpha=alpha, tau2=tau2, kernel=KernelParams(rho, kappa, upsilon2),
                       chis=np.asarray(chis, dtype=float), w_m=np.asarray(w, dtype=float))


class TestRecords:
    def test_invalid_records(self):
        with pytest.raises(ParameterDomainError):
            ObservationRecord(level=0.1, level_sd=0.0, age=1900)
        with pytest.raises(ParameterDomainError):
            ObservationRecord(level=0.1, level_sd=0.01, age=1900, age_sd=-1)
        with pytest.raises(ParameterDomainError):
            ObservationRecord(level=float("nan"), level_sd=0.01, age=1900)

    def test_priors_defaults_and_domain(self):
        p = Priors()
        assert p.rho == (2.0, 8.0) and p.tau2 == (0.1, 10.0) and p.upsilon2 == (80.0, 20.0)
        assert p.alpha_sd == 100.0
        with pytest.raises(ParameterDomainError):
            Priors(tau2=(0.0, 1.0))

    def test_time_axis_round_trip(self):
        ax = TimeAxis(origin=-100.0, scale=1000.0)
        years = np.array([-100.0, 900.0, 2000.0])
        np.testing.assert_allclose(ax.to_internal(years), [0.0, 1.0, 2.1])
        np.testing.assert_allclose(ax.to_years(ax.to_internal(years)), years)


class TestGia:
    def test_exact_age_example(self):
        c = apply_gia(ObservationRecord(level=-1.2, level_sd=0.05, age=1010.0), GiaParams(1.0, 2010.0))
        assert c.level == pytest.approx(-0.2, abs=1e-12)
        assert c.age == 1010.0
        np.testing.assert_allclose(c.cov_obs, [[0.0, 0.0], [0.0, 0.0025]], atol=1e-15)

    def test_age_error_example(self):
        c = apply_gia(ObservationRecord(level=0.0, level_sd=0.05, age=1500.0, age_sd=50.0), GiaParams(1.0, 2010.0))
        np.testing.assert_allclose(c.cov_obs, [[2500.0, -2.5], [-2.5, 0.005]], rtol=1e-12)

    @given(level=st.floats(-5, 5), sd=st.floats(0.001, 1), age=st.floats(-500, 2000), age_sd=st.floats(0, 100))
    def test_zero_gamma_is_identity(self, level, sd, age, age_sd):
        c = apply_gia(ObservationRecord(level, sd, age, age_sd), GiaParams(0.0, 2010.0))
        assert c.level == level and c.age == age
        np.testing.assert_allclose(c.cov_obs, np.diag([age_sd**2, sd**2]))

    def test_older_raised_more(self):
        g = GiaParams(0.9, 2010.0)
        old = apply_gia(ObservationRecord(0.0, 0.05, 500.0), g)
        young = apply_gia(ObservationRecord(0.0, 0.05, 1800.0), g)
        assert old.level > young.level > 0

    def test_covariance_off_diagonal(self):
        c = apply_gia(ObservationRecord(0.0, 0.05, 1000.0, 30.0), GiaParams(1.3, 2010.0))
        assert c.cov_obs[0, 1] == c.cov_obs[1, 0] == pytest.approx(-(1.3 / 1000) * 900.0)


class TestHValues:
    grid = Grid.uniform(0.0, 2.0, 50)
    quad = QuadratureRule(30)

    def test_zero_rate(self):
        h = h_values(state(np.zeros(50)), [0.0, 0.5, 1.7], self.grid, self.quad)
        np.testing.assert_array_equal(h, 0.0)

    def test_origin_is_zero(self, rng):
        assert h_values(state(rng.standard_normal(50)), [0.0], self.grid, self.quad)[0] == 0.0

    def test_constant_rate_integrates_linearly(self):
        t = np.linspace(0.05, 2.0, 40)
        h = h_values(state(np.full(50, 1.5)), t, self.grid, self.quad)
        np.testing.assert_allclose(h, 1.5 * t, rtol=5e-3)
        assert h_values(state(np.full(50, 1.5)), [1.0], self.grid, self.quad)[0] == pytest.approx(1.5, rel=5e-3)

    def test_outside_span_rejected(self):
        with pytest.raises(ParameterDomainError):
            h_values(state(np.zeros(50)), [2.5], self.grid, self.quad)

    def test_gp_draw_matches_dense_integration(self, rng):
        grid = Grid.uniform(0.0, 1.0, 10)
        kp = KernelParams(0.2, 2.0, 4.0)
        c = rate_cov_matrix(kp, grid, jitter=1e-10)
        w = 2.0 * np.linalg.cholesky(c) @ rng.standard_normal(10)
        # oracle: krige the draw onto a fine grid and integrate with the trapezoid rule
        fine = np.linspace(0.0, 1.0, 20001)
        path = rate_cov(kp, fine[:, None] - grid.nodes[None, :]) @ np.linalg.solve(c, w)
        oracle = cumulative_trapezoid(path, fine, initial=0.0)
        t = np.array([0.1, 0.37, 0.6, 0.95])
        h = h_values(state(w, rho=0.2), t, grid, self.quad)
        np.testing.assert_allclose(h, np.interp(t, fine, oracle), rtol=1e-2, atol=1e-3 * np.abs(oracle).max())


def _records(rng, n, age_sd=0.0):
    ages = np.sort(rng.uniform(100, 1900, n))
    return [ObservationRecord(level=float(rng.normal(0, 0.2)), level_sd=float(rng.uniform(0.02, 0.08)),
                              age=float(a), age_sd=age_sd if np.isscalar(age_sd) else float(age_sd[i]))
            for i, a in enumerate(ages)]


class TestLikelihoods:
    grid = Grid.uniform(0.0, 2.0, 20)
    quad = QuadratureRule(30)

    def test_sigp_standard_normal_point(self):
        rec = [apply_gia(ObservationRecord(level=0.3, level_sd=0.6, age=500.0))]
        s = state(np.zeros(20), alpha=0.3, tau2=0.64)
        assert loglik_sigp(s, rec, self.grid, self.quad, AXIS) == pytest.approx(-0.5 * math.log(2 * math.pi),
                                                                               rel=1e-14)

    def test_sigp_flattens_with_large_tau2(self):
        recs = [[apply_gia(ObservationRecord(level=y, level_sd=0.05, age=500.0))] for y in (0.0, 1.0)]
        gaps = []
        for tau2 in (0.01, 1.0, 100.0, 1e4):
            s = state(np.zeros(20), tau2=tau2)
            gaps.append(abs(loglik_sigp(s, recs[0], self.grid, self.quad, AXIS)
                            - loglik_sigp(s, recs[1], self.grid, self.quad, AXIS)))
        assert np.all(np.diff(gaps) < 0)
        assert gaps[-1] < 1e-4

    def test_sigp_matches_scalar_loop(self, rng):
        data = [apply_gia(r) for r in _records(rng, 5)]
        s = state(rng.standard_normal(20), alpha=0.1, tau2=0.003)
        ages = np.array([d.age for d in data])
        h = h_values(s, AXIS.to_internal(ages), self.grid, self.quad)
        oracle = 0.0
        for d, hi in zip(data, h):
            oracle += stats.norm.logpdf(d.level, loc=s.alpha + hi, scale=math.sqrt(d.cov_obs[1, 1] + s.tau2))
        assert loglik_sigp(s, data, self.grid, self.quad, AXIS) == pytest.approx(oracle, rel=1e-12)

    def test_sigp_rejects_age_errors(self, rng):
        data = [apply_gia(r) for r in _records(rng, 3, age_sd=10.0)]
        with pytest.raises(ParameterDomainError):
            loglik_sigp(state(np.zeros(20)), data, self.grid, self.quad, AXIS)

    def test_eiv_exact_ages_agree_with_sigp(self, rng):
        data = [apply_gia(r) for r in _records(rng, 8)]
        s = state(rng.standard_normal(20), alpha=-0.2, tau2=0.002, chis=AXIS.to_internal([d.age for d in data]))
        a = loglik_eiv(s, data, self.grid, self.quad, AXIS)
        b = loglik_sigp(s, data, self.grid, self.quad, AXIS)
        assert a == pytest.approx(b, rel=1e-9)

    def test_eiv_single_record_at_mean(self):
        rec = ObservationRecord(level=0.0, level_sd=0.05, age=1000.0, age_sd=20.0)
        d = apply_gia(rec, GiaParams(0.8, 2010.0))
        s = state(np.zeros(20), alpha=d.level, tau2=0.001, chis=[1.0])
        cov = d.cov_obs + np.diag([0.0, 0.001])
        expected = -math.log(2 * math.pi) - 0.5 * math.log(np.linalg.det(cov))
        assert loglik_eiv(s, [d], self.grid, self.quad, AXIS) == pytest.approx(expected, rel=1e-12)

    def test_eiv_matches_multivariate_normal(self, rng):
        recs = _records(rng, 10, age_sd=rng.uniform(5, 40, 10))
        gias = [GiaParams(g, 2010.0) for g in rng.uniform(0, 1.5, 10)]
        data = [apply_gia(r, g) for r, g in zip(recs, gias)]
        chis = AXIS.to_internal([r.age for r in recs]) + rng.normal(0, 0.01, 10)
        s = state(rng.standard_normal(20), alpha=0.05, tau2=0.004, chis=chis, rho=0.3)
        h = h_values(s, chis, self.grid, self.quad)
        oracle = 0.0
        for d, c, hi in zip(data, chis, h):
            cov = d.cov_obs + np.diag([0.0, s.tau2])
            oracle += stats.multivariate_normal(mean=[AXIS.to_years(c), s.alpha + hi], cov=cov).logpdf(d.mean_obs)
        assert loglik_eiv(s, data, self.grid, self.quad, AXIS) == pytest.approx(oracle, rel=1e-10)

    def test_eiv_permutation_invariant(self, rng):
        recs = _records(rng, 7, age_sd=15.0)
        data = [apply_gia(r, GiaParams(0.9)) for r in recs]
        chis = AXIS.to_internal([r.age for r in recs])
        s = state(rng.standard_normal(20), chis=chis)
        perm = rng.permutation(7)
        sp = state(s.w_m, chis=chis[perm])
        a = loglik_eiv(s, data, self.grid, self.quad, AXIS)
        b = loglik_eiv(sp, [data[i] for i in perm], self.grid, self.quad, AXIS)
        assert a == pytest.approx(b, rel=1e-13)

    def test_eiv_is_quadratic_in_alpha(self, rng):
        recs = _records(rng, 6, age_sd=10.0)
        data = [apply_gia(r) for r in recs]
        chis = AXIS.to_internal([r.age for r in recs])
        w = rng.standard_normal(20)

        def ll(a):
            return loglik_eiv(state(w, alpha=a, chis=chis), data, self.grid, self.quad, AXIS)

        xs = np.array([-1.0, 0.0, 1.0])
        coef = np.polyfit(xs, [ll(x) for x in xs], 2)
        assert coef[0] < 0
        assert np.polyval(coef, 2.7) == pytest.approx(ll(2.7), rel=1e-9)

    def test_gradient_matches_finite_differences(self, rng):
        recs = _records(rng, 9, age_sd=np.where(rng.uniform(size=9) < 0.5, 0.0, 20.0))
        data = [apply_gia(r, GiaParams(0.9)) for r in recs]
        chis = AXIS.to_internal([r.age for r in recs]) + 0.005
        w = rng.standard_normal(20)
        s = state(w, alpha=0.1, tau2=0.003, chis=chis)
        da, dw = loglik_eiv_grad(s, data, self.grid, self.quad, AXIS)
        eps = 1e-5

        def ll(a, ww):
            return loglik_eiv(state(ww, alpha=a, tau2=0.003, chis=chis), data, self.grid, self.quad, AXIS)

        fd_a = (ll(0.1 + eps, w) - ll(0.1 - eps, w)) / (2 * eps)
        assert da == pytest.approx(fd_a, rel=1e-5)
        fd_w = np.empty(20)
        for j in range(20):
            e = np.zeros(20)
            e[j] = eps
            fd_w[j] = (ll(0.1, w + e) - ll(0.1, w - e)) / (2 * eps)
        np.testing.assert_allclose(dw, fd_w, rtol=1e-5, atol=1e-5 * np.abs(fd_w).max())


class TestLogPrior:
    grid = Grid.uniform(0.0, 2.0, 8)

    def _parts(self, rho=0.2, tau2=0.05, ups2=3.0, alpha=1.5, w=None, chis=()):
        kp = KernelParams(rho, 2.0, ups2)
        factor = grid_factor(kp, self.grid)
        w = np.zeros(8) if w is None else w
        return LatentState(alpha, tau2, kp, np.asarray(chis, float), w), factor

    def test_rho_contribution(self):
        pri = Priors()
        s1, f1 = self._parts(rho=0.2)
        s2, f2 = self._parts(rho=0.3)
        # the rho term is the only part that changes besides the w term, which is zero here apart from log det
        d = log_prior(s1, pri, f1) - log_prior(s2, pri, f2)
        logdet = lambda f: np.sum(np.log(np.diag(f)))
        expected = stats.beta(2, 8).logpdf(0.2) - stats.beta(2, 8).logpdf(0.3) - (logdet(f1) - logdet(f2))
        assert d == pytest.approx(expected, rel=1e-10)
        assert stats.beta(2, 8).pdf(0.2) == pytest.approx(3.0199, rel=1e-4)

    def test_full_sum_against_scipy(self, rng):
        pri = Priors()
        w = rng.standard_normal(8)
        s, f = self._parts(w=w, chis=[0.3, 1.2])
        c = rate_cov_matrix(s.kernel, self.grid, jitter=1e-10)
        expected = (stats.beta(2, 8).logpdf(0.2) + stats.gamma(0.1, scale=0.1).logpdf(0.05)
                    + stats.gamma(80, scale=1 / 20).logpdf(3.0) + stats.norm(0, 100).logpdf(1.5)
                    + stats.multivariate_normal(np.zeros(8), 3.0 * c).logpdf(w) - 2 * math.log(2.0))
        assert log_prior(s, pri, f, self.grid) == pytest.approx(expected, rel=1e-9)

    def test_zero_w_term(self):
        s, f = self._parts(w=np.zeros(8), alpha=0.0)
        pri = Priors()
        c = rate_cov_matrix(s.kernel, self.grid, jitter=1e-10)
        rest = (stats.beta(2, 8).logpdf(0.2) + stats.gamma(0.1, scale=0.1).logpdf(0.05)
                + stats.gamma(80, scale=1 / 20).logpdf(3.0) + stats.norm(0, 100).logpdf(0.0))
        mvn = -0.5 * np.linalg.slogdet(2 * math.pi * 3.0 * c)[1]
        assert log_prior(s, pri, f) - rest == pytest.approx(mvn, rel=1e-9)

    def test_out_of_support(self):
        _, f = self._parts()
        pri = Priors()
        bad_kernel = SimpleNamespace(rho=1.0, kappa=2.0, upsilon2=3.0)
        assert log_prior(LatentState(0.0, 0.05, bad_kernel, np.zeros(0), np.zeros(8)), pri, f) == -np.inf
        good = KernelParams(0.2, 2.0, 3.0)
        assert log_prior(LatentState(0.0, -1.0, good, np.zeros(0), np.zeros(8)), pri, f) == -np.inf
        s, f = self._parts(chis=[2.5])
        assert log_prior(s, pri, f, self.grid) == -np.inf
