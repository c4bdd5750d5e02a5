"""Monte Carlo harness, Cramer-Rao lower bound, and periodic-input baseline.

Replications share one input/dither realization (the reference experiment
repeats "the same inputs") while noise streams differ; per-run seeds are
spawned deterministically from the master seed, so an ensemble is a pure
function of its configuration.
"""

from __future__ import annotations

import csv
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, InversionError, SingularityError
from .estimate import HARMONIC, FoldResult, StepPolicy, fold_ensemble
from .model import NoiseModel, PECertificate, SystemModel
from .simulate import InputPlan, build_regressors, gen_inputs, pe_check
from .spao import RateReport, lower_density_bound, rate_coefficient, rate_diagnostics


class CrlbResult(NamedTuple):
    matrix: np.ndarray
    trace: float
    k_trace: float   # (number of observations) * trace


def crlb(phi: np.ndarray, theta: np.ndarray, noise: NoiseModel,
         thresholds: np.ndarray) -> CrlbResult:
    """Cramer-Rao lower bound for theta from binary observations.

    Inverse of sum_i f_i^2 / (F_i (1 - F_i)) phi_i phi_i' evaluated at the
    true theta (oracle bound).
    """
    thresholds = np.atleast_1d(np.asarray(thresholds, dtype=float))
    if thresholds.size != 1:
        raise ConfigError("crlb is defined for the binary (single threshold) case")
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    theta = np.asarray(theta, dtype=float)
    big_k, n = phi.shape
    xs = float(thresholds[0]) - phi @ theta
    f = noise.pdf(xs)
    big_f = noise.cdf(xs)
    bern = big_f * (1.0 - big_f)
    # a numerically saturated sensor carries no information at that step
    w = np.divide(f * f, bern, out=np.zeros_like(bern), where=bern > 0)
    info = (phi * w[:, None]).T @ phi
    rank = int(np.linalg.matrix_rank(info))
    if rank < n:
        raise SingularityError(
            f"information matrix has rank {rank} < {n}; add regressors", rank=rank)
    cov = np.linalg.inv(info)
    tr = float(np.trace(cov))
    return CrlbResult(matrix=cov, trace=tr, k_trace=big_k * tr)


def invert_cdf(noise: NoiseModel, p: float, tol: float = 1e-12) -> float:
    """F^{-1}(p) by bisection on the CDF; works for every noise family."""
    if not 0.0 < p < 1.0:
        raise InversionError(f"cannot invert the CDF at {p}; need p in (0, 1)")
    if noise.table_x is not None:
        lo, hi = float(noise.table_x[0]), float(noise.table_x[-1])
    else:
        span = max(1.0, np.sqrt(noise.variance))
        lo, hi = -span, span
        while noise.cdf(lo) > p:
            lo *= 2.0
        while noise.cdf(hi) < p:
            hi *= 2.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if noise.cdf(mid) < p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def empirical_from_phase_means(phase_means: np.ndarray, phase_regressors: np.ndarray,
                               c: float, noise: NoiseModel) -> np.ndarray:
    """Invert phase-averaged observations and solve the linear system.

    ybar_j = C - F^{-1}(mean of s over phase j); returns the least-squares
    solution of Phi theta = ybar.
    """
    phase_means = np.asarray(phase_means, dtype=float)
    phase_regressors = np.atleast_2d(np.asarray(phase_regressors, dtype=float))
    p, n = phase_regressors.shape
    if phase_means.shape != (p,):
        raise ConfigError("one phase mean per phase regressor is required")
    rank = int(np.linalg.matrix_rank(phase_regressors))
    if rank < n:
        raise SingularityError(
            f"phase regressors have rank {rank} < {n}", rank=rank)
    if np.any(phase_means <= 0.0) or np.any(phase_means >= 1.0):
        raise InversionError("a phase average hit 0 or 1; the CDF inverse is unbounded")
    ybar = np.array([c - invert_cdf(noise, m) for m in phase_means])
    theta_hat, *_ = np.linalg.lstsq(phase_regressors, ybar, rcond=None)
    return theta_hat


def empirical_measurement_baseline(trace, period: int,
                                   phase_regressors: np.ndarray) -> np.ndarray:
    """Phase-averaging baseline for exactly periodic inputs.

    Groups observations by k mod period, checks the regressors really repeat,
    averages s per phase, and recovers theta by CDF inversion plus a linear
    solve. Consistent (and asymptotically efficient) for periodic inputs.
    """
    phase_regressors = np.atleast_2d(np.asarray(phase_regressors, dtype=float))
    if period < 1 or phase_regressors.shape[0] != period:
        raise ConfigError("phase regressors must hold one row per phase")
    phases = np.asarray(trace.ks) % period
    means = np.empty(period)
    for j in range(period):
        sel = phases == j
        if not np.any(sel):
            raise ConfigError(f"phase {j} never occurs in the trace")
        if not np.allclose(trace.phi[sel], phase_regressors[j], atol=1e-9):
            raise ConfigError("trace regressors are not exactly periodic with this period")
        means[j] = float(np.mean(trace.s[sel]))
    c = float(trace.system.thresholds[0])
    return empirical_from_phase_means(means, phase_regressors, c, trace.system.noise)


# -- Monte Carlo harness -------------------------------------------------------

def thin_grid(k0: int, horizon: int, ratio: float = 1.1, cap: int = 500) -> np.ndarray:
    """Geometric k grid from k0 to the horizon, plus every power of 10 inside.

    Keeps figure fidelity without horizon-sized memory; capped at ``cap``
    points by widening the ratio.
    """
    if horizon < k0:
        raise ConfigError("horizon must be >= k0")
    if ratio <= 1.0:
        raise ConfigError("grid ratio must be > 1")
    n_geo = int(np.ceil(np.log(horizon / k0) / np.log(ratio))) + 1 if horizon > k0 else 1
    if n_geo > cap:
        ratio = (horizon / k0) ** (1.0 / (cap - 1))
        n_geo = cap
    ks = np.unique(np.round(k0 * ratio ** np.arange(n_geo)).astype(np.int64))
    decades = 10 ** np.arange(0, int(np.log10(horizon)) + 1)
    decades = decades[(decades >= k0) & (decades <= horizon)]
    ks = np.unique(np.concatenate([ks, decades, [k0, horizon]]))
    return ks[(ks >= k0) & (ks <= horizon)]


@dataclass(eq=False)
class ExperimentConfig:
    """Everything a reproducible ensemble needs."""

    system: SystemModel
    plan: InputPlan
    policy: StepPolicy
    theta_hat_init: np.ndarray
    horizon: int
    runs: int
    master_seed: int
    pe_window: int | None = None
    grid_ratio: float = 1.1
    grid_cap: int = 500
    jobs: int = 1
    trace_runs: int = 1
    tail_m_prime: float = 1.0

    def __post_init__(self):
        self.theta_hat_init = np.asarray(self.theta_hat_init, dtype=float)
        if self.runs < 1:
            raise ConfigError("mc.runs must be >= 1")
        if self.horizon < self.policy.k0:
            raise ConfigError("sim.length must be >= est.k0")
        if self.jobs < 1:
            raise ConfigError("mc.jobs must be >= 1")
        self.trace_runs = min(self.trace_runs, self.runs)


@dataclass(eq=False)
class EnsembleResult:
    """Aggregates of one Monte Carlo experiment on the thinned k grid."""

    grid: np.ndarray
    mean_err_sq: np.ndarray
    err_sq_runs: np.ndarray
    t_runs: np.ndarray | None
    final_errors: np.ndarray
    trajectories: np.ndarray | None
    rate_report: RateReport
    crlb_trace: float
    k_crlb_trace: float
    pe: PECertificate
    full_ks: np.ndarray | None
    err_sq_runs_full: np.ndarray | None
    elapsed_seconds: float


def monte_carlo(config: ExperimentConfig,
                record_full_err: bool = False) -> EnsembleResult:
    """Run R replications with shared inputs and per-run noise streams."""
    t_start = time.perf_counter()
    system, plan, policy = config.system, config.plan, config.policy
    horizon, runs = config.horizon, config.runs
    plan_k = plan if plan.length >= horizon else \
        InputPlan(plan.kind, plan.base_pattern, plan.dither_halfwidth, horizon, plan.seed)
    u = gen_inputs(plan_k)[:horizon + 1]
    phi = build_regressors(u, system.regressor_memory)
    kmin = max(1, system.regressor_memory - 1)
    ks = np.arange(kmin, horizon + 1)
    pe_window = config.pe_window
    if pe_window is None:
        pe_window = max(system.dim,
                        plan.base_pattern.size if plan.kind == "cyclic_dither" else system.dim)
    pe = pe_check(phi, pe_window)

    y_clean = phi @ system.theta
    children = np.random.SeedSequence(config.master_seed).spawn(runs)
    labels = [f"{i} (child {i} of mc.seed={config.master_seed})" for i in range(runs)]
    s_mat = np.empty((runs, ks.size), dtype=np.int8)
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        d = system.noise.sample(rng, ks.size)
        y = y_clean + d
        s_mat[i] = np.sum(y[:, None] <= system.thresholds[None, :], axis=1)

    grid = thin_grid(policy.k0, horizon, config.grid_ratio, config.grid_cap)
    want_t = policy.kind == HARMONIC and system.binary
    beta_t = policy.beta if want_t else None

    def fold_rows(lo: int, hi: int, use_grid) -> FoldResult:
        n_traj = max(0, min(hi, config.trace_runs) - lo) if lo < config.trace_runs else 0
        return fold_ensemble(
            ks, phi, s_mat[lo:hi], policy, config.theta_hat_init,
            system.thresholds, system.noise, theta_true=system.theta,
            beta_for_t=beta_t, grid=use_grid, traj_runs=n_traj, pe=pe,
            run_labels=labels[lo:hi])

    bounds = np.linspace(0, runs, min(config.jobs, runs) + 1).astype(int)
    chunks = [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    if len(chunks) == 1:
        results = [fold_rows(*chunks[0], grid)]
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            results = list(pool.map(lambda ab: fold_rows(*ab, grid), chunks))

    est_ks = results[0].est_ks
    err_sq_runs = np.concatenate([r.err_sq for r in results], axis=0)
    t_runs = np.concatenate([r.t_series for r in results], axis=0) if want_t else None
    theta_final = np.concatenate([r.theta_final for r in results], axis=0)
    trajectories = None
    if config.trace_runs:
        parts = [r.traj for r in results if r.traj is not None and r.traj.size]
        trajectories = np.concatenate(parts, axis=0) if parts else None

    full_ks = err_full = None
    if record_full_err:
        full = fold_rows(0, runs, None)
        full_ks, err_full = full.est_ks, full.err_sq

    f_lower = float("nan")
    eta = float("nan")
    if system.binary:
        f_lower = lower_density_bound(
            system.noise, float(system.thresholds[0]), pe.regressor_bound,
            float(np.linalg.norm(system.theta)))
        if policy.kind == HARMONIC:
            eta = rate_coefficient(policy.beta, pe.excitation_level, f_lower).eta
    tail_specs = ()
    if runs >= 30:
        tail_specs = tuple((int(k), config.tail_m_prime)
                           for k in est_ks[np.isin(est_ks, 10 ** np.arange(1, 7))])
    report = rate_diagnostics(est_ks, err_sq_runs, eta=eta, f_lower=f_lower,
                              tail_specs=tail_specs)

    bound = crlb(phi, system.theta, system.noise, system.thresholds) \
        if system.binary else CrlbResult(np.full((system.dim,) * 2, np.nan), np.nan, np.nan)
    diff = theta_final - system.theta
    return EnsembleResult(
        grid=est_ks, mean_err_sq=np.mean(err_sq_runs, axis=0),
        err_sq_runs=err_sq_runs, t_runs=t_runs,
        final_errors=np.sqrt(np.sum(diff * diff, axis=1)),
        trajectories=trajectories, rate_report=report,
        crlb_trace=bound.trace, k_crlb_trace=bound.k_trace, pe=pe,
        full_ks=full_ks, err_sq_runs_full=err_full,
        elapsed_seconds=time.perf_counter() - t_start)


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_ensemble_csv(result: EnsembleResult, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "mean_err_sq", "k_mean_err_sq"])
        for i, k in enumerate(result.grid):
            w.writerow([int(k), _fmt(result.mean_err_sq[i]),
                        _fmt(k * result.mean_err_sq[i])])


def write_summary(result: EnsembleResult, path):
    """Human-readable experiment summary (no timestamps: outputs stay idempotent)."""
    rep = result.rate_report
    lines = [
        f"eta = {rep.eta:.12g}",
        f"regime = {rep.regime}",
        f"f_lower = {rep.f_lower:.12g}",
        f"ms_slope = {rep.ms_slope:.12g} over k in "
        f"[{rep.slope_window[0]:g}, {rep.slope_window[1]:g}]",
        f"crlb_trace = {result.crlb_trace:.12g}",
        f"k_crlb_trace = {result.k_crlb_trace:.12g}",
        f"pe: window={result.pe.window} delta={result.pe.excitation_level:.12g} "
        f"M={result.pe.regressor_bound:.12g} valid={result.pe.valid}",
    ]
    for k, mp, prob, lo, hi in rep.tail_points:
        lines.append(f"tail k={k} M'={mp:g}: p={prob:.6g} wilson=[{lo:.6g}, {hi:.6g}]")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
