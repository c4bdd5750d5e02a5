"""Recursive SA identifier driven by set-valued observations.

The update is theta_hat_k = theta_hat_{k-1} + rho_k phi_k (Fhat_k - s_k) with
Fhat_k = sum_j F(C_j - phi_k' theta_hat_{k-1}); no projection, truncation, or
clipping anywhere. A warm start k0 anchors theta_hat_{k0} at the initial
value and ignores observations with k <= k0 entirely.

``fold_ensemble`` advances many independent replications in lockstep with
vectorized arithmetic identical to ``sa_step``; both paths are cross-checked
in the tests.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, NumericalFault, RateDegenerateError, ShapeError
from .model import NoiseModel, PECertificate
from .simulate import RunTrace
from .spao import _lower_density_bound_vec, lower_density_bound

HARMONIC = "harmonic"
NORMALIZED = "normalized"
ADAPTIVE_BETA = "adaptive_beta"

_POLICY_KINDS = (HARMONIC, NORMALIZED, ADAPTIVE_BETA)

_FAULT_CHECK_STRIDE = 256


@dataclass(frozen=True)
class StepPolicy:
    """Step-size rule rho_k.

    harmonic:      rho_k = beta / k
    normalized:    rho_k = clamp(beta, [beta_lo, beta_hi]) / (1 + sum ||phi_i||^2)
    adaptive_beta: rho_k = beta_k / k, beta_k = safety_margin / (2 delta
                   f_lower(M ||theta_hat_{k-1}||)), with M and delta taken
                   from the run's PE certificate.
    """

    kind: str = HARMONIC
    beta: float = 1.0
    beta_lo: float = 0.0
    beta_hi: float = float("inf")
    safety_margin: float = 1.1
    k0: int = 1

    def __post_init__(self):
        if self.kind not in _POLICY_KINDS:
            raise ConfigError(f"unknown step policy {self.kind!r}")
        if self.k0 < 1:
            raise ConfigError("est.k0 must be >= 1")
        if self.kind == HARMONIC and not 0 < self.beta < float("inf"):
            raise ConfigError("est.beta must be positive and finite")
        if self.kind == NORMALIZED:
            if not (0 < self.beta_lo <= self.beta_hi < float("inf")):
                raise ConfigError("normalized policy needs 0 < beta_lo <= beta_hi < inf")
        if self.kind == ADAPTIVE_BETA and self.safety_margin <= 1:
            raise ConfigError("est.margin must be > 1")


@dataclass(eq=False)
class EstimatorState:
    """Single-owner estimator state; k is the index of theta_hat."""

    theta_hat: np.ndarray
    k: int
    policy: StepPolicy
    thresholds: np.ndarray
    noise: NoiseModel
    normalizer: float = 0.0
    pe: PECertificate | None = None

    def __post_init__(self):
        self.theta_hat = np.asarray(self.theta_hat, dtype=float)
        self.thresholds = np.asarray(self.thresholds, dtype=float)
        if self.k < self.policy.k0:
            raise ConfigError("estimator state index below the warm start k0")


def step_size(policy: StepPolicy, k: int, phi_k: np.ndarray,
              state: EstimatorState) -> float:
    """rho_k for the update at index k (does not mutate the state)."""
    if k < policy.k0:
        raise ConfigError(f"step index {k} below warm start {policy.k0}")
    if policy.kind == HARMONIC:
        return policy.beta / k
    if policy.kind == NORMALIZED:
        beta_k = min(max(policy.beta, policy.beta_lo), policy.beta_hi)
        acc = state.normalizer + float(np.dot(phi_k, phi_k))
        return beta_k / (1.0 + acc)
    if state.pe is None:
        raise ConfigError("adaptive_beta needs a PE certificate on the estimator state")
    c = float(state.thresholds[0])
    f_hat = lower_density_bound(state.noise, c, state.pe.regressor_bound,
                                float(np.linalg.norm(state.theta_hat)))
    if f_hat <= 0.0:
        raise RateDegenerateError(
            "density lower bound is 0 at the current estimate radius; "
            "adaptive beta is unbounded")
    beta_k = policy.safety_margin / (2.0 * state.pe.excitation_level * f_hat)
    return beta_k / k


def expected_output(thresholds: np.ndarray, phi: np.ndarray,
                    theta_hat: np.ndarray, noise: NoiseModel) -> float:
    """E[s | theta = theta_hat] = sum_j F(C_j - phi' theta_hat); in [0, q]."""
    thresholds = np.asarray(thresholds, dtype=float)
    inner = float(np.dot(phi, theta_hat))
    return float(np.sum(noise.cdf(thresholds - inner)))


def sa_step(state: EstimatorState, phi_k: np.ndarray, s_k) -> EstimatorState:
    """One SA update consuming (phi_k, s_k) at k = state.k + 1."""
    q = state.thresholds.size
    if not 0.0 <= float(s_k) <= q:
        raise ConfigError(f"observation s={s_k} outside [0, {q}]")
    phi_k = np.asarray(phi_k, dtype=float)
    k = state.k + 1
    rho = step_size(state.policy, k, phi_k, state)
    f_hat = expected_output(state.thresholds, phi_k, state.theta_hat, state.noise)
    theta_new = state.theta_hat + (rho * (f_hat - float(s_k))) * phi_k
    if not np.all(np.isfinite(theta_new)):
        raise NumericalFault(f"non-finite estimate after update at k={k}")
    normalizer = state.normalizer
    if state.policy.kind == NORMALIZED:
        normalizer += float(np.dot(phi_k, phi_k))
    return replace(state, theta_hat=theta_new, k=k, normalizer=normalizer)


@dataclass(eq=False)
class EstimateTrajectory:
    """Recorded estimates theta_hat_k for k = k0..K (row 0 is the initial value)."""

    ks: np.ndarray
    theta_hat: np.ndarray
    err_sq: np.ndarray | None = None

    def to_csv(self, path):
        write_estimates_csv(self, path)


@dataclass(eq=False)
class FoldResult:
    """Per-run series recorded by fold_ensemble on its k grid."""

    est_ks: np.ndarray
    err_sq: np.ndarray | None       # (R, m)
    traj: np.ndarray | None         # (traj_runs, m, n)
    t_series: np.ndarray | None     # (R, m, n)
    theta_final: np.ndarray         # (R, n)


def fold_ensemble(ks: np.ndarray, phi: np.ndarray, s_mat: np.ndarray,
                  policy: StepPolicy, theta_init: np.ndarray,
                  thresholds: np.ndarray, noise: NoiseModel, *,
                  theta_true: np.ndarray | None = None,
                  beta_for_t: float | None = None,
                  grid: np.ndarray | None = None,
                  traj_runs: int = 0,
                  pe: PECertificate | None = None,
                  run_labels=None) -> FoldResult:
    """Advance R estimator replications over a shared regressor sequence.

    s_mat is (R, K) aligned with ks/phi; values may be non-integer in [0, q]
    for deterministic mean replays. Estimates are recorded at every k in
    ``grid`` (default: all k in [k0, K]); T averages are recorded when
    ``beta_for_t`` is given (binary case only).
    """
    ks = np.asarray(ks)
    phi = np.asarray(phi, dtype=float)
    s_mat = np.atleast_2d(np.asarray(s_mat, dtype=float))
    thresholds = np.asarray(thresholds, dtype=float)
    big_k, n = phi.shape
    runs = s_mat.shape[0]
    if s_mat.shape[1] != big_k or ks.size != big_k:
        raise ShapeError("s matrix and regressors are misaligned")
    q = thresholds.size
    if not np.all((s_mat >= 0) & (s_mat <= q)):
        raise ConfigError(f"observations outside [0, {q}]")
    k0 = policy.k0
    if not ks[0] <= k0 <= ks[-1]:
        raise ConfigError(f"warm start k0={k0} outside trace range [{ks[0]}, {ks[-1]}]")
    if policy.kind == ADAPTIVE_BETA and pe is None:
        raise ConfigError("adaptive_beta needs the trace PE certificate")

    theta_init = np.asarray(theta_init, dtype=float)
    th = np.tile(theta_init, (runs, 1)) if theta_init.ndim == 1 else theta_init.copy()
    if th.shape != (runs, n):
        raise ShapeError(f"initial estimates must broadcast to ({runs}, {n})")

    if grid is None:
        rec_ks = ks[ks >= k0]
    else:
        rec_ks = np.asarray(sorted(set(int(g) for g in grid if k0 <= g <= ks[-1])))
        if rec_ks.size == 0 or rec_ks[0] != k0:
            rec_ks = np.concatenate([[k0], rec_ks[rec_ks > k0]])
    rec_pos = {int(k): i for i, k in enumerate(rec_ks)}
    m = rec_ks.size

    want_err = theta_true is not None
    err_sq = np.empty((runs, m)) if want_err else None
    traj = np.empty((traj_runs, m, n)) if traj_runs else None
    want_t = beta_for_t is not None
    if want_t and q != 1:
        raise ConfigError("T averaging is defined for the binary case")
    if want_t and theta_true is None:
        raise ConfigError("T averaging needs the true theta")
    t_cum = np.zeros((runs, n)) if want_t else None
    t_series = np.empty((runs, m, n)) if want_t else None
    if want_t or want_err:
        theta_true = np.asarray(theta_true, dtype=float)
    f_true = noise.cdf(thresholds[0] - phi @ theta_true) if want_t else None

    beta_norm = min(max(policy.beta, policy.beta_lo), policy.beta_hi)
    c0 = float(thresholds[0])
    normalizer = 0.0

    def record(pos: int):
        if want_err:
            diff = th - theta_true
            err_sq[:, pos] = np.sum(diff * diff, axis=1)
        if traj is not None:
            traj[:, pos, :] = th[:traj_runs]
        if want_t:
            t_series[:, pos, :] = t_cum / k

    for i in range(big_k):
        k = int(ks[i])
        pk = phi[i]
        if want_t:
            t_cum += (beta_for_t * (f_true[i] - s_mat[:, i]))[:, None] * pk[None, :]
        if k > k0:
            inner = th @ pk
            if q == 1:
                f_hat = noise.cdf(c0 - inner)
            else:
                f_hat = np.zeros(runs)
                for cj in thresholds:
                    f_hat += noise.cdf(cj - inner)
            if policy.kind == HARMONIC:
                rho = policy.beta / k
            elif policy.kind == NORMALIZED:
                normalizer += float(np.dot(pk, pk))
                rho = beta_norm / (1.0 + normalizer)
            else:
                f_lo = _lower_density_bound_vec(
                    noise, c0, pe.regressor_bound, np.sqrt(np.sum(th * th, axis=1)))
                if np.any(f_lo <= 0.0):
                    bad = int(np.argmax(f_lo <= 0.0))
                    raise RateDegenerateError(
                        f"density lower bound 0 at k={k} in run "
                        f"{_label(run_labels, bad)}")
                rho = policy.safety_margin / (2.0 * pe.excitation_level * f_lo) / k
            th += (rho * (f_hat - s_mat[:, i]))[:, None] * pk[None, :]
            if (k - k0) % _FAULT_CHECK_STRIDE == 0 and not np.all(np.isfinite(th)):
                _raise_fault(th, k, run_labels)
        pos = rec_pos.get(k)
        if pos is not None:
            record(pos)
    if not np.all(np.isfinite(th)):
        _raise_fault(th, int(ks[-1]), run_labels)
    return FoldResult(est_ks=rec_ks, err_sq=err_sq, traj=traj,
                      t_series=t_series, theta_final=th)


def _label(run_labels, idx: int) -> str:
    if run_labels is not None:
        return str(run_labels[idx])
    return f"#{idx}"


def _raise_fault(th: np.ndarray, k: int, run_labels):
    bad = int(np.argmax(~np.all(np.isfinite(th), axis=1)))
    raise NumericalFault(
        f"non-finite estimate by k={k} in run {_label(run_labels, bad)}")


def run_estimator(trace: RunTrace, policy: StepPolicy,
                  theta_hat_init: np.ndarray,
                  s_values: np.ndarray | None = None) -> EstimateTrajectory:
    """Fold the SA update over one trace; records theta_hat_k for k = k0..K.

    ``s_values`` overrides the trace observations (deterministic mean
    replays); the true theta from the trace's system supplies err_sq.
    """
    if len(trace) == 0:
        raise ConfigError("trace is empty")
    theta_hat_init = np.asarray(theta_hat_init, dtype=float)
    if theta_hat_init.shape != (trace.system.dim,):
        raise ShapeError(f"theta_hat_init must have shape ({trace.system.dim},)")
    s_row = trace.s if s_values is None else np.asarray(s_values, dtype=float)
    if s_row.shape != trace.ks.shape:
        raise ShapeError("s override must align with the trace")
    res = fold_ensemble(trace.ks, trace.phi, s_row[None, :], policy,
                        theta_hat_init, trace.system.thresholds,
                        trace.system.noise, theta_true=trace.system.theta,
                        traj_runs=1, pe=trace.pe)
    return EstimateTrajectory(ks=res.est_ks, theta_hat=res.traj[0],
                              err_sq=res.err_sq[0])


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_estimates_csv(traj: EstimateTrajectory, path):
    n = traj.theta_hat.shape[1]
    header = ["k"] + [f"theta_hat_{j + 1}" for j in range(n)]
    if traj.err_sq is not None:
        header.append("err_sq")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(traj.ks.size):
            row = [int(traj.ks[i])] + [_fmt(v) for v in traj.theta_hat[i]]
            if traj.err_sq is not None:
                row.append(_fmt(traj.err_sq[i]))
            w.writerow(row)
