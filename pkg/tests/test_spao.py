"""T/psi diagnostics, density lower bound, rate and tail statistics."""

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import ndtri

import setvalued_id as sv
from setvalued_id.spao import (build_spao_trace, fit_loglog_slope,
                               psi_recursion_residual, regime_label)

from conftest import PAPER_INIT, paper_plan, paper_policy

# mpmath oracle: Gaussian pdf at |C| + M ||theta|| = 3 with sigma = 5
GAUSS5_PDF_3 = 0.066644920578359927131


def make_trace(phi, s, system):
    ks = np.arange(1, phi.shape[0] + 1)
    pe = sv.PECertificate(window=system.dim, excitation_level=1.0,
                          regressor_bound=float(np.max(np.linalg.norm(phi, axis=1))),
                          valid=True, worst_window_start=1)
    y = phi @ system.theta
    return sv.RunTrace(ks=ks, phi=phi, y=y, s=np.asarray(s), system=system,
                       pe=pe, inputs=np.zeros(phi.shape[0] + 1))


class TestComputeT:
    def test_mean_replay_gives_zero(self, paper_system):
        trace = sv.simulate_run(paper_system, paper_plan(500), 500, noise_seed=3)
        f_true = paper_system.noise.cdf(1.0 - trace.phi @ paper_system.theta)
        zero_trace = sv.RunTrace(ks=trace.ks, phi=trace.phi, y=trace.y, s=f_true,
                                 system=paper_system, pe=trace.pe, inputs=trace.inputs)
        t = sv.compute_T(zero_trace, 20.0, paper_system.theta)
        assert np.max(np.abs(t)) == 0.0

    def test_single_step_value(self):
        """k=1, beta=20, phi=(2,-1), F_1=0.8, s_1=1 -> T_1 = (-8, 4)."""
        x80 = 5.0 * ndtri(0.8)  # F(C - phi'theta) = 0.8 with theta = 0, C = x80
        system = sv.SystemModel(theta=[0.0, 0.0], thresholds=[x80],
                                noise=sv.NoiseModel.gaussian(25.0))
        trace = make_trace(np.array([[2.0, -1.0]]), np.array([1]), system)
        t = sv.compute_T(trace, 20.0, system.theta)
        assert np.allclose(t[0], [-8.0, 4.0], atol=1e-12)

    def test_variance_matches_bernoulli_oracle(self, paper_system):
        """Ensemble variance of T_k = (beta^2/k^2) sum phi^2 F(1-F), per component."""
        runs, k = 400, 300
        plan = paper_plan(k)
        u = sv.gen_inputs(plan)
        phi = sv.build_regressors(u, 2)
        f = paper_system.noise.cdf(1.0 - phi @ paper_system.theta)
        rng = np.random.default_rng(77)
        t_samples = np.empty((runs, 2))
        for r in range(runs):
            s = (rng.uniform(size=k) <= f).astype(float)
            inc = 20.0 * phi * (f - s)[:, None]
            t_samples[r] = inc.sum(axis=0) / k
        oracle = (20.0**2 / k**2) * np.sum(phi**2 * (f * (1 - f))[:, None], axis=0)
        se = oracle * np.sqrt(2.0 / (runs - 1))
        assert np.all(np.abs(np.var(t_samples, axis=0, ddof=1) - oracle) <= 3 * se)

    def test_lln_decay_surrogate_across_seeds(self, paper_system):
        """||T_k|| k^0.4 must not grow with k: late-window max stays below the
        early-window max (k^eps T_k -> 0 for eps < 1/2), for 20 noise seeds."""
        length = 100_000
        u = sv.gen_inputs(paper_plan(length))
        phi = sv.build_regressors(u, 2)
        ks = np.arange(1, length + 1)
        f = paper_system.noise.cdf(1.0 - phi @ paper_system.theta)
        y_clean = phi @ paper_system.theta
        early = (ks >= 1_000) & (ks < 10_000)
        late = ks >= 10_000
        for seed in range(20):
            d = paper_system.noise.sample(np.random.default_rng(seed), length)
            s = (y_clean + d <= 1.0).astype(float)
            t = np.cumsum(20.0 * phi * (f - s)[:, None], axis=0) / ks[:, None]
            stat = np.linalg.norm(t, axis=1) * ks**0.4
            assert np.max(stat[late]) <= 1.5 * np.max(stat[early])
            assert np.max(stat[early | late]) < 50.0

    def test_multi_threshold_rejected(self):
        system = sv.SystemModel(theta=[1.0], thresholds=[0.0, 1.0],
                                noise=sv.NoiseModel.gaussian(1.0))
        trace = make_trace(np.ones((3, 1)), np.zeros(3), system)
        with pytest.raises(sv.ConfigError, match="binary"):
            sv.compute_T(trace, 1.0, system.theta)


class TestComputePsi:
    def test_zero_t_path(self):
        theta_hats = np.array([[1.0, 2.0], [0.5, 1.5]])
        psi = sv.compute_psi(theta_hats, np.zeros((2, 2)), np.array([1.0, 1.0]))
        assert np.array_equal(psi, theta_hats - [1.0, 1.0])

    def test_zero_case(self):
        theta = np.array([3.0, -1.0])
        psi = sv.compute_psi(np.tile(theta, (4, 1)), np.zeros((4, 2)), theta)
        assert np.all(psi == 0.0)

    def test_misaligned_shapes_rejected(self):
        with pytest.raises(sv.ShapeError):
            sv.compute_psi(np.zeros((3, 2)), np.zeros((4, 2)), np.zeros(2))

    def test_recursion_residual_on_reference_run(self, paper_system):
        """Definitional psi satisfies the recursion to round-off over K=1e4."""
        trace = sv.simulate_run(paper_system, paper_plan(10_000), 10_000, noise_seed=7)
        traj = sv.run_estimator(trace, paper_policy(), PAPER_INIT)
        diag = build_spao_trace(trace, traj.ks, traj.theta_hat, 20.0)
        psi_def = sv.compute_psi(traj.theta_hat, diag.t_series, paper_system.theta)
        residual = psi_recursion_residual(trace, traj.ks, psi_def, diag.t_series, 20.0)
        assert residual <= 1e-9 * (1.0 + np.max(np.linalg.norm(psi_def, axis=1)))

    def test_decomposition_identity_every_run(self, paper_system):
        for seed in (1, 2, 3):
            trace = sv.simulate_run(paper_system, paper_plan(3000), 3000,
                                    noise_seed=seed)
            traj = sv.run_estimator(trace, paper_policy(), PAPER_INIT)
            diag = build_spao_trace(trace, traj.ks, traj.theta_hat, 20.0)
            assert float(np.max(diag.decomposition_gap())) <= 1e-10


class TestSpaoGeneralized:
    def test_specializes_to_compute_t(self, paper_system):
        trace = sv.simulate_run(paper_system, paper_plan(800), 800, noise_seed=5)
        traj = sv.run_estimator(trace, paper_policy(), PAPER_INIT)
        t_ref = sv.compute_T(trace, 20.0, paper_system.theta)
        ks = trace.ks.astype(float)
        theta_hats = np.vstack([np.tile(PAPER_INIT, (19, 1)), traj.theta_hat])
        t_gen, psi_gen = sv.spao_generalized(
            rhos=1.0 / ks, vs=20.0 * trace.phi,
            cs=np.full(len(trace), 1.0), ss=trace.s.astype(float),
            phis=trace.phi, theta_hats=theta_hats, theta=paper_system.theta,
            noise=paper_system.noise)
        assert np.allclose(t_gen, t_ref, atol=1e-13)
        assert np.allclose(psi_gen, theta_hats - paper_system.theta - t_ref, atol=1e-13)

    def test_exact_observations_give_zero_t(self):
        noise = sv.NoiseModel.gaussian(1.0)
        phis = np.ones((10, 1))
        cs = np.linspace(-1, 1, 10)
        ss = noise.cdf(cs - 1.0)
        t, _ = sv.spao_generalized(np.ones(10), np.ones((10, 1)), cs, ss, phis,
                                   np.ones((10, 1)), np.array([1.0]), noise)
        assert np.max(np.abs(t)) == 0.0

    def test_matrix_step_sizes_match_scalar_multiples(self):
        noise = sv.NoiseModel.gaussian(1.0)
        k, n = 6, 2
        rng = np.random.default_rng(0)
        scal = 1.0 / np.arange(1, k + 1)
        rhos = np.stack([np.eye(n) * r for r in scal])
        vs = rng.normal(size=(k, n))
        phis = rng.normal(size=(k, n))
        ss = rng.integers(0, 2, size=k).astype(float)
        args = (vs, np.zeros(k), ss, phis, np.zeros((k, n)), np.zeros(n), noise)
        out_mat, _ = sv.spao_generalized(rhos, *args)
        out_scal, _ = sv.spao_generalized(scal, *args)
        assert np.allclose(out_mat, out_scal, atol=1e-14)

    def test_mixed_rho_shapes_rejected(self):
        noise = sv.NoiseModel.gaussian(1.0)
        with pytest.raises(sv.ShapeError, match="step sizes"):
            sv.spao_generalized(np.ones((4, 3)), np.ones((4, 2)), np.zeros(4),
                                np.zeros(4), np.ones((4, 2)), np.zeros((4, 2)),
                                np.zeros(2), noise)

    def test_clt_decay_of_constant_gain_average(self):
        """Constant v, rho = 1/k, iid Bernoulli s: E||T_k|| decays like k^(-1/2)."""
        noise = sv.NoiseModel.gaussian(1.0)
        k, runs = 4000, 60
        rng = np.random.default_rng(42)
        cs = np.zeros(k)
        phis = np.zeros((k, 1))
        f = noise.cdf(0.0)  # 0.5
        grid = np.unique(np.round(10 ** np.linspace(1, np.log10(k), 25)).astype(int))
        norms = np.zeros((runs, grid.size))
        for r in range(runs):
            ss = (rng.uniform(size=k) <= f).astype(float)
            t, _ = sv.spao_generalized(1.0 / np.arange(1, k + 1), np.ones((k, 1)),
                                       cs, ss, phis, np.zeros((k, 1)),
                                       np.zeros(1), noise)
            norms[r] = np.abs(t[grid - 1, 0])
        slope = fit_loglog_slope(grid, norms.mean(axis=0), (10, k))
        assert -0.62 <= slope <= -0.38


class TestLowerDensityBound:
    def test_gaussian_reference_value(self):
        noise = sv.NoiseModel.gaussian(25.0)
        out = sv.lower_density_bound(noise, c=1.0, m_bound=2.0, theta_norm=1.0)
        assert out == pytest.approx(GAUSS5_PDF_3, abs=1e-14)

    def test_degenerate_interval(self):
        noise = sv.NoiseModel.gaussian(25.0)
        out = sv.lower_density_bound(noise, c=-2.0, m_bound=0.0, theta_norm=123.0)
        assert out == pytest.approx(noise.pdf(2.0), abs=1e-14)

    @given(st.floats(0, 5), st.floats(0, 5))
    def test_monotone_nonincreasing(self, x1, x2):
        noise = sv.NoiseModel.gaussian(9.0)
        lo, hi = sorted((x1, x2))
        assert sv.lower_density_bound(noise, 1.0, 1.0, 1.0, lo) >= \
            sv.lower_density_bound(noise, 1.0, 1.0, 1.0, hi)

    def test_tabulated_interval_minimum(self):
        table = sv.NoiseModel.tabulated([-3.0, -1.0, 0.0, 1.0, 3.0],
                                        [0.0, 0.2, 0.5, 0.8, 1.0])
        # interval [-0.5, 0.5] stays in the two central segments (slope 0.3)
        assert sv.lower_density_bound(table, 0.0, 1.0, 0.5) == pytest.approx(0.3)
        # endpoint exactly on the knot at 1: right-limit pulls in the 0.1 segment
        assert sv.lower_density_bound(table, 0.0, 1.0, 1.0) == pytest.approx(0.1)
        # interval beyond the support -> 0
        assert sv.lower_density_bound(table, 0.0, 1.0, 4.0) == 0.0


class TestRateCoefficient:
    def test_boundary_case(self):
        out = sv.rate_coefficient(20.0, 1.0, 0.025)
        assert out.eta == pytest.approx(0.5, abs=1e-15)
        assert out.regime == "= 1/2"

    def test_fast_regime(self):
        out = sv.rate_coefficient(20.0, 1.0, 0.0666)
        assert out.eta == pytest.approx(1.332)
        assert out.regime == "> 1/2"

    def test_zero_factor(self):
        assert sv.rate_coefficient(0.0, 1.0, 0.5).eta == 0.0
        assert regime_label(0.0) == "< 1/2"


class TestRateDiagnostics:
    def test_exact_power_laws(self):
        ks = np.arange(3, 2000)
        report = sv.rate_diagnostics(ks, (7.5 / ks)[None, :], slope_window=(10, 2000))
        assert report.ms_slope == pytest.approx(-1.0, abs=1e-6)
        report = sv.rate_diagnostics(ks, (3.0 / np.sqrt(ks))[None, :],
                                     slope_window=(10, 2000))
        assert report.ms_slope == pytest.approx(-0.5, abs=1e-6)

    def test_as_series_normalization(self):
        ks = np.array([2, 3, 10, 100] + list(range(101, 111)))
        err = np.ones((1, ks.size))
        report = sv.rate_diagnostics(ks, err, slope_window=(2, 110))
        assert report.ks[0] == 3  # ln ln k needs k >= 3
        assert 2 not in report.ks
        assert report.as_series[0, 1] == pytest.approx(10 / np.log(np.log(10)))
        assert report.mean_k_err_sq[2] == pytest.approx(100.0)

    def test_small_window_rejected(self):
        ks = np.arange(3, 400)
        with pytest.raises(sv.StatisticsError, match="slope window"):
            sv.rate_diagnostics(ks, np.ones((1, ks.size)), slope_window=(395, 400))


class TestTailEstimate:
    def test_trivial_bounds(self):
        ks = np.arange(1, 101)
        err = np.abs(np.random.default_rng(1).normal(size=(40, 100)))
        prob, lo, hi = sv.tail_estimate(ks, err, 10, 0.0)
        assert prob == 1.0 and hi == 1.0
        prob, lo, hi = sv.tail_estimate(ks, err, 10, 1e12)
        assert prob == 0.0 and lo == 0.0

    def test_needs_thirty_runs(self):
        with pytest.raises(sv.StatisticsError, match="30"):
            sv.tail_estimate(np.arange(10), np.ones((5, 10)), 2, 1.0)

    def test_monotone_in_k_for_decaying_traces(self):
        ks = np.arange(1, 201)
        rng = np.random.default_rng(3)
        err = rng.uniform(0.5, 1.5, size=(50, 200)) * (20.0 / ks)
        early = sv.tail_estimate(ks, err, 5, 1.0)[0]
        late = sv.tail_estimate(ks, err, 150, 1.0)[0]
        assert late < early

    def test_wilson_interval_brackets(self):
        lo, hi = sv.wilson_interval(30, 100)
        assert 0.0 <= lo <= 0.3 <= hi <= 1.0
        lo, hi = sv.wilson_interval(0, 50)
        assert lo == 0.0 and hi < 0.1
