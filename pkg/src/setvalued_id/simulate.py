"""Input plans, regressor construction, threshold sensor, and PE certification.

Inputs are indexed from 0 and regressors from k = 1 so that the delay-line
regressor phi_k = (u_k, ..., u_{k-nbar+1}) is fully defined at k = 1 for
memory nbar <= 2 (the reference experiment uses nbar = 2). For deeper
memories the first defined index is nbar - 1.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ShapeError
from .model import NoiseModel, PECertificate, SystemModel

CYCLIC_DITHER = "cyclic_dither"
IID_UNIFORM = "iid_uniform"
EXPLICIT = "explicit"

_KINDS = (CYCLIC_DITHER, IID_UNIFORM, EXPLICIT)


@dataclass(frozen=True, eq=False)
class InputPlan:
    """Rule producing the input sequence u_0..u_length.

    cyclic_dither: u_j = base_pattern[j mod p] + e_j, e_j ~ U[-h, h].
    iid_uniform:   u_j = base_pattern[0] + e_j (pattern may be empty -> 0).
    explicit:      base_pattern holds the whole sequence; dither ignored.
    """

    kind: str
    base_pattern: np.ndarray = field(default_factory=lambda: np.zeros(0))
    dither_halfwidth: float = 0.0
    length: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ConfigError(f"unknown input kind {self.kind!r}")
        object.__setattr__(self, "base_pattern",
                           np.atleast_1d(np.asarray(self.base_pattern, dtype=float)))
        if self.dither_halfwidth < 0:
            raise ConfigError("input.dither must be >= 0")
        if self.length < 1:
            raise ConfigError("input plan length must be >= 1")
        if self.kind == CYCLIC_DITHER and self.base_pattern.size < 1:
            raise ConfigError("cyclic_dither needs a non-empty input.pattern")


def gen_inputs(plan: InputPlan) -> np.ndarray:
    """Generate u_0..u_length (length+1 values), deterministic in plan.seed."""
    m = plan.length + 1
    rng = np.random.default_rng(plan.seed)
    if plan.kind == EXPLICIT:
        if plan.base_pattern.size < m:
            raise ConfigError(
                f"explicit input sequence has {plan.base_pattern.size} values, needs {m}")
        return plan.base_pattern[:m].copy()
    dither = rng.uniform(-plan.dither_halfwidth, plan.dither_halfwidth, m) \
        if plan.dither_halfwidth > 0 else np.zeros(m)
    if plan.kind == CYCLIC_DITHER:
        base = plan.base_pattern[np.arange(m) % plan.base_pattern.size]
    else:  # iid_uniform
        base = plan.base_pattern[0] if plan.base_pattern.size else 0.0
    return base + dither


def build_regressors(u: np.ndarray, nbar: int) -> np.ndarray:
    """Delay-line regressors phi_k = (u_k, u_{k-1}, ..., u_{k-nbar+1}).

    ``u`` carries indices 0..K; the returned array holds phi_k for
    k = max(1, nbar-1)..K, row 0 being the first defined regressor.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 1:
        raise ShapeError("input sequence must be one-dimensional")
    if nbar < 1:
        raise ConfigError("regressor memory must be >= 1")
    kmax = u.size - 1
    kmin = max(1, nbar - 1)
    if kmax < kmin:
        raise ConfigError(f"input sequence too short for memory {nbar}")
    ks = np.arange(kmin, kmax + 1)
    cols = [u[ks - j] for j in range(nbar)]
    return np.stack(cols, axis=1)


def observe(system: SystemModel, phi: np.ndarray, d: float):
    """One sensor observation: y = phi' theta + d, s = sum_j 1{y <= C_j}."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (system.dim,):
        raise ShapeError(f"phi must have shape ({system.dim},), got {phi.shape}")
    y = float(phi @ system.theta + d)
    s = int(np.sum(y <= system.thresholds))
    return y, s


def _eig_min_2x2(a, b, c):
    """Smallest eigenvalue of [[a, b], [b, c]]; vectorized."""
    half_diff = 0.5 * (a - c)
    return 0.5 * (a + c) - np.sqrt(half_diff * half_diff + b * b)


def eig_min_symmetric(mat: np.ndarray, tol: float = 1e-12) -> float:
    """Smallest eigenvalue of a symmetric matrix via cyclic Jacobi rotations.

    Kept dependency-free on purpose: the test suite checks it against a
    general-purpose eigendecomposition, so the two routes stay independent.
    """
    a = np.array(mat, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n):
        raise ShapeError("matrix must be square")
    if n == 1:
        return float(a[0, 0])
    if n == 2:
        return float(_eig_min_2x2(a[0, 0], 0.5 * (a[0, 1] + a[1, 0]), a[1, 1]))
    scale = max(float(np.abs(a).max()), 1.0)
    for _ in range(100):
        off = np.sqrt(np.sum(np.tril(a, -1) ** 2))
        if off <= tol * scale:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                if abs(a[p, q]) <= 1e-300:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * a[p, q])
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau)) if tau != 0 else 1.0
                cth = 1.0 / np.sqrt(1.0 + t * t)
                sth = t * cth
                rot = np.eye(n)
                rot[p, p] = rot[q, q] = cth
                rot[p, q] = sth
                rot[q, p] = -sth
                a = rot.T @ a @ rot
    return float(np.min(np.diag(a)))


def pe_check(phi: np.ndarray, window: int) -> PECertificate:
    """Certify uniform persistent excitation over every observed window.

    excitation_level = min over window starts k of the smallest eigenvalue of
    (1/N) sum_{i=k}^{k+N-1} phi_i phi_i', regressor_bound = max ||phi_k||.
    """
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2:
        raise ShapeError("phi must be a (K, n) array")
    big_k, n = phi.shape
    if window < n:
        raise ConfigError(f"pe.window must be >= regressor dimension {n}, got {window}")
    if big_k < window:
        raise ConfigError(f"need at least {window} regressors, got {big_k}")
    outer = phi[:, :, None] * phi[:, None, :]
    # Sum of N shifted views: short direct sums avoid the cancellation a
    # running cumulative sum would accumulate over long horizons.
    nwin = big_k - window + 1
    gram = outer[:nwin].copy()
    for j in range(1, window):
        gram += outer[j:j + nwin]
    gram /= window
    if n == 2:
        lam = _eig_min_2x2(gram[:, 0, 0], gram[:, 0, 1], gram[:, 1, 1])
    else:
        lam = np.array([eig_min_symmetric(g) for g in gram])
    worst = int(np.argmin(lam))
    delta = float(lam[worst])
    bound = float(np.sqrt(np.max(np.sum(phi * phi, axis=1))))
    return PECertificate(window=window, excitation_level=delta, regressor_bound=bound,
                         valid=delta > 0.0, worst_window_start=worst + 1)


@dataclass(eq=False)
class RunTrace:
    """Per-step record of one simulated run: k, phi_k, y_k, s_k.

    ``ks`` starts at 1 (or nbar-1 for deep regressor memories); ``inputs``
    keeps the raw u sequence so periodic baselines can recover phases.
    """

    ks: np.ndarray
    phi: np.ndarray
    y: np.ndarray
    s: np.ndarray
    system: SystemModel
    pe: PECertificate
    inputs: np.ndarray

    def __len__(self) -> int:
        return self.ks.size

    def check_consistency(self):
        """Re-derive s from y and thresholds; raises on any mismatch."""
        expect = np.sum(self.y[:, None] <= self.system.thresholds[None, :], axis=1)
        if not np.array_equal(expect, self.s):
            raise ShapeError("trace s column inconsistent with y and thresholds")

    def to_csv(self, path):
        write_trace_csv(self, path)


def simulate_run(system: SystemModel, plan: InputPlan, length: int,
                 noise_seed: int | np.random.SeedSequence = 0,
                 pe_window: int | None = None) -> RunTrace:
    """Simulate ``length`` sensor observations; deterministic given both seeds."""
    if length < 1:
        raise ConfigError("sim.length must be >= 1")
    plan_k = plan if plan.length >= length else \
        InputPlan(plan.kind, plan.base_pattern, plan.dither_halfwidth, length, plan.seed)
    u = gen_inputs(plan_k)[:length + 1]
    phi = build_regressors(u, system.regressor_memory)
    kmin = max(1, system.regressor_memory - 1)
    ks = np.arange(kmin, length + 1)
    rng = np.random.default_rng(noise_seed)
    d = system.noise.sample(rng, ks.size)
    y = phi @ system.theta + d
    s = np.sum(y[:, None] <= system.thresholds[None, :], axis=1).astype(np.int64)
    if pe_window is None:
        pe_window = max(system.dim,
                        plan.base_pattern.size if plan.kind == CYCLIC_DITHER else system.dim)
    pe = pe_check(phi, pe_window)
    return RunTrace(ks=ks, phi=phi, y=y, s=s, system=system, pe=pe, inputs=u)


# -- CSV export (17 significant digits so reloads are bit-faithful) ---------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def write_trace_csv(trace: RunTrace, path):
    n = trace.phi.shape[1]
    header = ["k"] + [f"phi_{j + 1}" for j in range(n)] + ["y", "s"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i in range(len(trace)):
            w.writerow([int(trace.ks[i])] + [_fmt(v) for v in trace.phi[i]]
                       + [_fmt(trace.y[i]), int(trace.s[i])])


def load_trace_csv(path):
    """Read back a trace CSV; returns (ks, phi, y, s) arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ConfigError(f"{path} is empty")
    header = rows[0]
    n = sum(1 for name in header if name.startswith("phi_"))
    if header[:1] != ["k"] or n == 0 or header[1 + n:] != ["y", "s"]:
        raise ConfigError(f"{path} does not match the trace schema k,phi_*,y,s")
    body = np.array([[float(v) for v in row] for row in rows[1:]])
    if body.size == 0:
        raise ConfigError(f"{path} has no data rows")
    return (body[:, 0].astype(np.int64), body[:, 1:1 + n],
            body[:, 1 + n], body[:, 2 + n].astype(np.int64))
