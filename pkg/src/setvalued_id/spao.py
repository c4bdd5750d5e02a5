"""Averaged-observation diagnostics for the SA identifier.

T_k averages the observation-noise increments beta phi_i (F_i - s_i); the
auxiliary process psi_k = theta_err_k - T_k obeys a deterministic-looking
recursion driven only by T. Keeping both lets the test suite check the
estimator, the averaging, and the recursion against each other. The density
lower bound f_lower and the coefficient eta = beta * delta * f_lower place a
run in its convergence-rate regime.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigError, ShapeError, StatisticsError
from .model import NoiseModel
from .simulate import RunTrace


# -- density lower bound and rate coefficient --------------------------------

def lower_density_bound(noise: NoiseModel, c: float, m_bound: float,
                        theta_norm: float, x: float = 0.0) -> float:
    """inf of the noise density over [c - z, c + z] with z -> (M*theta_norm + x)+.

    For the symmetric unimodal built-in families this is f(|c| + z). For
    tabulated noise the infimum runs over every density segment whose closure
    meets the interval (the right-limit convention), and is 0 as soon as the
    interval leaves the table support.
    """
    if m_bound < 0 or theta_norm < 0 or x < 0:
        raise ConfigError("lower_density_bound needs M, theta_norm, x >= 0")
    z = m_bound * theta_norm + x
    if noise.symmetric_unimodal:
        return float(noise.pdf(abs(c) + z))
    lo, hi = c - z, c + z
    xs, fs = noise.table_x, noise.table_f
    if lo < xs[0] or hi > xs[-1]:
        return 0.0
    slopes = np.diff(fs) / np.diff(xs)
    # side='left'/'right' pulls in both neighbours when an endpoint sits on a knot
    i0 = max(np.searchsorted(xs, lo, side="left") - 1, 0)
    i1 = min(int(np.searchsorted(xs, hi, side="right")), slopes.size)
    return float(np.min(slopes[i0:i1]))


def _lower_density_bound_vec(noise: NoiseModel, c: float, m_bound: float,
                             theta_norms: np.ndarray) -> np.ndarray:
    """Vectorized lower_density_bound over theta_norm (adaptive step sizes)."""
    if noise.symmetric_unimodal:
        return noise.pdf(abs(c) + m_bound * np.asarray(theta_norms, dtype=float))
    return np.array([lower_density_bound(noise, c, m_bound, t) for t in theta_norms])


class RateCoefficient(NamedTuple):
    eta: float
    regime: str


def regime_label(eta: float, tol: float = 1e-12) -> str:
    if abs(eta - 0.5) <= tol:
        return "= 1/2"
    return "> 1/2" if eta > 0.5 else "< 1/2"


def rate_coefficient(beta: float, delta: float, f_lower: float) -> RateCoefficient:
    """eta = beta * delta * f_lower plus its rate-regime label."""
    if beta < 0 or delta < 0 or f_lower < 0:
        raise ConfigError("rate coefficient factors must be >= 0")
    eta = beta * delta * f_lower
    return RateCoefficient(eta, regime_label(eta))


# -- T and psi ---------------------------------------------------------------

def compute_T(trace: RunTrace, beta: float, theta: np.ndarray) -> np.ndarray:
    """T_k = (1/k) sum_{i<=k} beta phi_i (F_i - s_i) along the trace (binary case)."""
    if not trace.system.binary:
        raise ConfigError("compute_T is defined for the binary (single threshold) case")
    theta = np.asarray(theta, dtype=float)
    c = float(trace.system.thresholds[0])
    f_true = trace.system.noise.cdf(c - trace.phi @ theta)
    increments = beta * trace.phi * (f_true - trace.s)[:, None]
    return np.cumsum(increments, axis=0) / trace.ks[:, None]


def compute_psi(theta_hats: np.ndarray, t_series: np.ndarray,
                theta: np.ndarray) -> np.ndarray:
    """psi_k = (theta_hat_k - theta) - T_k for aligned series."""
    theta_hats = np.asarray(theta_hats, dtype=float)
    t_series = np.asarray(t_series, dtype=float)
    if theta_hats.shape != t_series.shape:
        raise ShapeError(
            f"estimates {theta_hats.shape} and T {t_series.shape} are misaligned")
    return theta_hats - np.asarray(theta, dtype=float) - t_series


def psi_recursion_residual(trace: RunTrace, ks: np.ndarray, psi: np.ndarray,
                           t_series: np.ndarray, beta: float) -> float:
    """Max norm of the psi-recursion defect, recomputed step by step.

    psi_k should equal psi_{k-1} + (beta phi_k / k) (F(C - phi'theta
    - phi'psi_{k-1} - phi'T_{k-1}) - F_k) + T_{k-1}/k on every update step;
    the return value is the largest deviation found.
    """
    system = trace.system
    c = float(system.thresholds[0])
    theta = system.theta
    noise = system.noise
    offset = int(ks[0] - trace.ks[0])
    worst = 0.0
    for j in range(1, ks.size):
        k = int(ks[j])
        phi_k = trace.phi[offset + j]
        f_k = noise.cdf(c - phi_k @ theta)
        f_shift = noise.cdf(c - phi_k @ theta - phi_k @ psi[j - 1] - phi_k @ t_series[j - 1])
        rhs = psi[j - 1] + (beta / k) * phi_k * (f_shift - f_k) + t_series[j - 1] / k
        worst = max(worst, float(np.linalg.norm(psi[j] - rhs)))
    return worst


@dataclass(eq=False)
class SpaoTrace:
    """T, psi, and theta_err aligned on the estimator's k range.

    psi is integrated through its own recursion (anchored at the first k), so
    theta_err = psi + T is a genuine cross-check of three code paths rather
    than an identity by construction.
    """

    ks: np.ndarray
    t_series: np.ndarray
    psi: np.ndarray
    theta_err: np.ndarray

    def decomposition_gap(self) -> np.ndarray:
        """||theta_err - psi - T|| / (1 + ||theta_err||) per step."""
        gap = np.linalg.norm(self.theta_err - self.psi - self.t_series, axis=1)
        return gap / (1.0 + np.linalg.norm(self.theta_err, axis=1))


def build_spao_trace(trace: RunTrace, est_ks: np.ndarray, theta_hats: np.ndarray,
                     beta: float) -> SpaoTrace:
    """Assemble the SPAO diagnostic series for an estimator trajectory."""
    system = trace.system
    theta = system.theta
    t_full = compute_T(trace, beta, theta)
    offset = int(est_ks[0] - trace.ks[0])
    if offset < 0 or est_ks[-1] > trace.ks[-1]:
        raise ShapeError("estimator ks are not contained in the trace ks")
    t_aligned = t_full[offset:offset + est_ks.size]
    theta_err = theta_hats - theta
    c = float(system.thresholds[0])
    noise = system.noise
    psi = np.empty_like(theta_err)
    psi[0] = theta_err[0] - t_aligned[0]
    for j in range(1, est_ks.size):
        k = int(est_ks[j])
        phi_k = trace.phi[offset + j]
        f_k = noise.cdf(c - phi_k @ theta)
        f_shift = noise.cdf(c - phi_k @ theta - phi_k @ psi[j - 1]
                            - phi_k @ t_aligned[j - 1])
        psi[j] = psi[j - 1] + (beta / k) * phi_k * (f_shift - f_k) + t_aligned[j - 1] / k
    return SpaoTrace(ks=np.asarray(est_ks), t_series=t_aligned, psi=psi,
                     theta_err=theta_err)


def spao_generalized(rhos, vs, cs, ss, phis, theta_hats, theta,
                     noise: NoiseModel) -> tuple[np.ndarray, np.ndarray]:
    """T and psi for any recursive set-valued algorithm with supplied traces.

    T_k = rho_k * sum_{i<=k} v_i (F(C_i - phi_i'theta) - s_i); step sizes may
    be scalars (K,) or square matrices (K, n, n), never a mixture.
    """
    vs = np.asarray(vs, dtype=float)
    cs = np.asarray(cs, dtype=float)
    ss = np.asarray(ss, dtype=float)
    phis = np.asarray(phis, dtype=float)
    theta_hats = np.asarray(theta_hats, dtype=float)
    theta = np.asarray(theta, dtype=float)
    big_k, n = vs.shape if vs.ndim == 2 else (vs.shape[0], 0)
    if n == 0 or phis.shape != (big_k, n) or theta_hats.shape != (big_k, n):
        raise ShapeError("v, phi, theta_hat must all be (K, n) arrays")
    if cs.shape != (big_k,) or ss.shape != (big_k,):
        raise ShapeError("C and s must be (K,) arrays")
    rhos = np.asarray(rhos, dtype=float)
    f_true = noise.cdf(cs - np.sum(phis * theta, axis=1))
    inner = np.cumsum(vs * (f_true - ss)[:, None], axis=0)
    if rhos.shape == (big_k,):
        t_series = rhos[:, None] * inner
    elif rhos.shape == (big_k, n, n):
        t_series = np.einsum("kij,kj->ki", rhos, inner)
    else:
        raise ShapeError(
            f"step sizes must be (K,) scalars or (K, n, n) matrices, got {rhos.shape}")
    return t_series, theta_hats - theta - t_series


# -- rate and tail diagnostics ------------------------------------------------

def wilson_interval(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n < 1:
        raise StatisticsError("Wilson interval needs n >= 1")
    p = successes / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def tail_estimate(ks: np.ndarray, err_sq_runs: np.ndarray, k: int,
                  m_prime: float) -> tuple[float, float, float]:
    """Fraction of runs with sup_{j >= k (up to the horizon)} err_sq >= M'.

    Finite-horizon surrogate of the error distribution tail; returns
    (probability, wilson_lo, wilson_hi).
    """
    ks = np.asarray(ks)
    err_sq_runs = np.atleast_2d(np.asarray(err_sq_runs, dtype=float))
    runs = err_sq_runs.shape[0]
    if runs < 30:
        raise StatisticsError(f"tail_estimate needs >= 30 runs for reporting, got {runs}")
    mask = ks >= k
    if not np.any(mask):
        raise StatisticsError(f"k={k} is beyond the recorded range (max {ks.max()})")
    sup = np.max(err_sq_runs[:, mask], axis=1)
    hits = int(np.sum(sup >= m_prime))
    lo, hi = wilson_interval(hits, runs)
    return hits / runs, lo, hi


@dataclass(eq=False)
class RateReport:
    """Empirical rate diagnostics over an ensemble of error trajectories."""

    ks: np.ndarray                 # grid with k >= 3 (ln ln k defined)
    as_series: np.ndarray          # (R, m): k err_sq / ln ln k per run
    mean_k_err_sq: np.ndarray      # (m,): ensemble mean of k err_sq
    ms_slope: float
    slope_window: tuple[float, float]
    eta: float
    f_lower: float
    regime: str
    tail_points: tuple = ()


def fit_loglog_slope(ks: np.ndarray, values: np.ndarray,
                     window: tuple[float, float]) -> float:
    """Least-squares slope of log(values) against log(k) inside the window."""
    ks = np.asarray(ks, dtype=float)
    values = np.asarray(values, dtype=float)
    sel = (ks >= window[0]) & (ks <= window[1]) & (values > 0)
    if int(np.sum(sel)) < 10:
        raise StatisticsError(
            f"slope window [{window[0]:g}, {window[1]:g}] holds fewer than 10 points")
    coeffs = np.polyfit(np.log(ks[sel]), np.log(values[sel]), 1)
    return float(coeffs[0])


def rate_diagnostics(ks: np.ndarray, err_sq_runs: np.ndarray, *,
                     slope_window: tuple[float, float] | None = None,
                     eta: float = math.nan, f_lower: float = math.nan,
                     tail_specs: tuple = ()) -> RateReport:
    """Build a RateReport from per-run squared-error series on a common k grid."""
    ks = np.asarray(ks)
    err_sq_runs = np.atleast_2d(np.asarray(err_sq_runs, dtype=float))
    if err_sq_runs.shape[1] != ks.size:
        raise ShapeError("err_sq_runs columns must match the k grid")
    if slope_window is None:
        slope_window = (max(3.0, float(ks[-1]) / 100.0), float(ks[-1]))
    mean_err = np.mean(err_sq_runs, axis=0)
    ms_slope = fit_loglog_slope(ks, mean_err, slope_window)
    keep = ks >= 3
    ks3 = ks[keep]
    lnln = np.log(np.log(ks3))
    as_series = ks3 * err_sq_runs[:, keep] / lnln
    mean_k_err_sq = ks3 * mean_err[keep]
    tail_points = tuple(
        (int(k), float(mp)) + tail_estimate(ks, err_sq_runs, k, mp)
        for k, mp in tail_specs)
    return RateReport(ks=ks3, as_series=as_series, mean_k_err_sq=mean_k_err_sq,
                      ms_slope=ms_slope, slope_window=slope_window,
                      eta=eta, f_lower=f_lower, regime=regime_label(eta)
                      if math.isfinite(eta) else "n/a",
                      tail_points=tail_points)


def summary_record(report: RateReport) -> dict:
    return {"eta": report.eta, "f_lower": report.f_lower,
            "ms_slope": report.ms_slope, "regime": report.regime}


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def export_rate_report(report: RateReport, path):
    """CSV `k,as_series,mean_k_err_sq`; the a.s. column is the first run's."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "as_series", "mean_k_err_sq"])
        for i, k in enumerate(report.ks):
            w.writerow([int(k), _fmt(report.as_series[0, i]),
                        _fmt(report.mean_k_err_sq[i])])


def write_spao_csv(spao: SpaoTrace, path):
    n = spao.t_series.shape[1]
    header = (["k"] + [f"t_{j + 1}" for j in range(n)]
              + [f"psi_{j + 1}" for j in range(n)]
              + [f"theta_err_{j + 1}" for j in range(n)])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(spao.ks.size):
            w.writerow([int(spao.ks[i])] + [_fmt(v) for v in spao.t_series[i]]
                       + [_fmt(v) for v in spao.psi[i]]
                       + [_fmt(v) for v in spao.theta_err[i]])
