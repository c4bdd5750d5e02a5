"""Input generation, regressors, sensor, PE certification, trace plumbing."""

import numpy as np
import pytest

import setvalued_id as sv
from setvalued_id.simulate import eig_min_symmetric, load_trace_csv

from conftest import paper_plan


def test_gen_inputs_zero_dither_cycles_pattern():
    plan = paper_plan(8, dither=0.0)
    u = sv.gen_inputs(plan)
    assert np.array_equal(u, [-1, 2, 0, -1, 2, 0, -1, 2, 0])


def test_gen_inputs_dither_bound_and_determinism():
    plan = paper_plan(2000, dither=0.1)
    u = sv.gen_inputs(plan)
    pattern = np.array([-1.0, 2.0, 0.0])[np.arange(u.size) % 3]
    assert np.max(np.abs(u - pattern)) <= 0.1
    assert np.array_equal(u, sv.gen_inputs(plan))


def test_gen_inputs_explicit_passthrough_and_length_check():
    plan = sv.InputPlan(kind="explicit", base_pattern=[5.0, 6.0, 7.0], length=2)
    assert np.array_equal(sv.gen_inputs(plan), [5, 6, 7])
    short = sv.InputPlan(kind="explicit", base_pattern=[5.0, 6.0], length=2)
    with pytest.raises(sv.ConfigError, match="explicit"):
        sv.gen_inputs(short)


def test_gen_inputs_iid_uniform_bounds():
    plan = sv.InputPlan(kind="iid_uniform", base_pattern=[2.0],
                        dither_halfwidth=0.5, length=500, seed=3)
    u = sv.gen_inputs(plan)
    assert np.all(np.abs(u - 2.0) <= 0.5)
    assert np.std(u) > 0.1


def test_build_regressors_reference_structure():
    phi = sv.build_regressors(np.array([-1.0, 2.0, 0.0]), 2)
    assert np.array_equal(phi, [[2, -1], [0, 2]])


def test_build_regressors_memory_one_is_identity():
    u = np.array([0.5, -2.0, 3.0])
    assert np.array_equal(sv.build_regressors(u, 1), [[-2.0], [3.0]])


def test_build_regressors_constant_input():
    phi = sv.build_regressors(np.full(6, 2.5), 2)
    assert np.all(phi == 2.5)


def test_observe_examples(paper_system):
    y, s = sv.observe(paper_system, np.array([2.0, -1.0]), 0.0)
    assert (y, s) == (7.0, 0)
    y, s = sv.observe(paper_system, np.array([2.0, -1.0]), -6.0)
    assert (y, s) == (1.0, 1)  # boundary y <= C is inclusive


def test_observe_multi_threshold():
    system = sv.SystemModel(theta=[1.0], thresholds=[0.0, 2.0],
                            noise=sv.NoiseModel.gaussian(1.0))
    y, s = sv.observe(system, np.array([1.0]), 0.0)
    assert (y, s) == (1.0, 1)
    assert sv.observe(system, np.array([-1.0]), 0.0)[1] == 2
    assert sv.observe(system, np.array([9.0]), 0.0)[1] == 0


class TestPeCheck:
    def test_reference_inputs_zero_dither(self):
        """delta = 1, M = sqrt(5) for the undithered cyclic inputs, window 3."""
        u = sv.gen_inputs(paper_plan(3000, dither=0.0))
        phi = sv.build_regressors(u, 2)
        cert = sv.pe_check(phi, 3)
        assert cert.valid
        assert cert.window == 3
        assert cert.excitation_level == pytest.approx(1.0, abs=1e-12)
        assert cert.regressor_bound == pytest.approx(np.sqrt(5.0), abs=1e-12)

    def test_alternating_basis_vectors(self):
        phi = np.array([[1.0, 0.0], [0.0, 1.0]] * 4)
        cert = sv.pe_check(phi, 2)
        assert cert.excitation_level == pytest.approx(0.5, abs=1e-15)

    def test_all_zero_regressors_invalid(self):
        cert = sv.pe_check(np.zeros((10, 2)), 2)
        assert not cert.valid
        assert cert.excitation_level == 0.0

    def test_window_below_dimension_rejected(self):
        with pytest.raises(sv.ConfigError, match="pe.window"):
            sv.pe_check(np.ones((10, 2)), 1)

    def test_dithered_reference_bracket_and_oracle(self):
        """10^4 windows: delta in [0.8, 1.2] and equal to the brute-force eigen oracle."""
        u = sv.gen_inputs(paper_plan(10_000))
        phi = sv.build_regressors(u, 2)
        cert = sv.pe_check(phi, 3)
        assert cert.valid
        assert 0.8 <= cert.excitation_level <= 1.2
        grams = np.stack([phi[k:k + 3].T @ phi[k:k + 3] / 3.0
                          for k in range(phi.shape[0] - 2)])
        oracle = np.linalg.eigvalsh(grams)[:, 0]
        assert cert.excitation_level == pytest.approx(float(oracle.min()), abs=1e-12)
        assert cert.worst_window_start == int(np.argmin(oracle)) + 1

    def test_jacobi_against_eigvalsh(self):
        rng = np.random.default_rng(11)
        for n in (3, 4, 6):
            for _ in range(20):
                a = rng.normal(size=(n, n))
                mat = a @ a.T
                assert eig_min_symmetric(mat) == pytest.approx(
                    float(np.linalg.eigvalsh(mat)[0]), abs=1e-10 * max(1, np.abs(mat).max()))

    def test_higher_dimensional_window(self):
        u = sv.gen_inputs(sv.InputPlan(kind="iid_uniform", base_pattern=[0.0],
                                       dither_halfwidth=1.0, length=200, seed=9))
        phi = sv.build_regressors(u, 3)
        cert = sv.pe_check(phi, 5)
        grams = np.stack([phi[k:k + 5].T @ phi[k:k + 5] / 5.0
                          for k in range(phi.shape[0] - 4)])
        oracle = float(np.linalg.eigvalsh(grams)[:, 0].min())
        assert cert.excitation_level == pytest.approx(oracle, abs=1e-10)


class TestSimulateRun:
    def test_deterministic_given_seeds(self, paper_system):
        a = sv.simulate_run(paper_system, paper_plan(500), 500, noise_seed=4)
        b = sv.simulate_run(paper_system, paper_plan(500), 500, noise_seed=4)
        assert np.array_equal(a.y, b.y) and np.array_equal(a.s, b.s)

    def test_trace_consistency_recheck(self, paper_system):
        trace = sv.simulate_run(paper_system, paper_plan(2000), 2000, noise_seed=8)
        trace.check_consistency()
        assert trace.ks[0] == 1 and np.all(np.diff(trace.ks) == 1)
        assert set(np.unique(trace.s)) <= {0, 1}

    def test_negligible_noise_reproduces_sign_pattern(self):
        """With vanishing noise, s follows the sign of C - phi'theta exactly."""
        system = sv.SystemModel(theta=[3.0, -1.0], thresholds=[1.0],
                                noise=sv.NoiseModel.gaussian(1e-24))
        trace = sv.simulate_run(system, paper_plan(300, dither=0.0), 300, noise_seed=1)
        clean = trace.phi @ system.theta
        assert np.array_equal(trace.s, (clean <= 1.0).astype(int))
        # one period of the cycle: y0 = 7, -2, -3 -> s = 0, 1, 1
        assert np.array_equal(trace.s[:3], [0, 1, 1])

    def test_mean_of_s_matches_cdf(self):
        """1e5 replays of a fixed regressor: mean s = F(C - phi'theta) to 3 SE."""
        system = sv.SystemModel(theta=[3.0, -1.0], thresholds=[1.0],
                                noise=sv.NoiseModel.gaussian(25.0))
        plan = sv.InputPlan(kind="explicit", base_pattern=np.ones(100_002),
                            length=100_001)
        trace = sv.simulate_run(system, plan, 100_001, noise_seed=13, pe_window=2)
        f = system.noise.cdf(1.0 - 2.0)  # phi = (1, 1), phi'theta = 2
        se = np.sqrt(f * (1 - f) / len(trace))
        assert abs(np.mean(trace.s) - f) <= 3 * se

    def test_csv_round_trip(self, paper_system, tmp_path):
        trace = sv.simulate_run(paper_system, paper_plan(50), 50, noise_seed=2)
        path = tmp_path / "trace.csv"
        trace.to_csv(path)
        ks, phi, y, s = load_trace_csv(path)
        assert np.array_equal(ks, trace.ks)
        assert np.array_equal(phi, trace.phi)
        assert np.array_equal(y, trace.y)
        assert np.array_equal(s, trace.s)
