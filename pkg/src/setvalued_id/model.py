"""Domain types shared by simulator, estimator, and diagnostics.

The sensor noise d_k is an i.i.d. zero-mean sequence with known distribution
F and density f. Built-in families are Gaussian, Laplacian, and Student-t
(dof > 2 so the variance exists); a tabulated family interpolates a
user-supplied CDF table, which covers dithered sensors without adding new
analytic families.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, stdtr

from .errors import ConfigError, TableDomainError

GAUSSIAN = "gaussian"
LAPLACIAN = "laplacian"
STUDENT_T = "student_t"
CUSTOM = "custom"

_FAMILIES = (GAUSSIAN, LAPLACIAN, STUDENT_T, CUSTOM)

_SQRT2PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Noise distribution: CDF, density, sampler, and declared variance.

    ``params`` is family specific:
      gaussian   -> (sigma,)          standard deviation
      laplacian  -> (b,)              scale, variance = 2 b^2
      student_t  -> (dof, scale)      dof > 2, variance = scale^2 dof/(dof-2)
      custom     -> ()                table stored separately
    """

    family: str
    params: tuple[float, ...]
    variance: float
    table_x: np.ndarray | None = field(default=None, repr=False)
    table_f: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ConfigError(f"unknown noise family {self.family!r}")
        if not (self.variance >= 0.0) or not math.isfinite(self.variance):
            raise ConfigError(f"noise variance must be finite and >= 0, got {self.variance}")

    # -- constructors ------------------------------------------------------

    @classmethod
    def gaussian(cls, sigma2: float) -> "NoiseModel":
        if sigma2 <= 0:
            raise ConfigError(f"noise.sigma2 must be > 0, got {sigma2}")
        return cls(GAUSSIAN, (math.sqrt(sigma2),), float(sigma2))

    @classmethod
    def laplacian(cls, sigma2: float) -> "NoiseModel":
        if sigma2 <= 0:
            raise ConfigError(f"noise.sigma2 must be > 0, got {sigma2}")
        b = math.sqrt(sigma2 / 2.0)
        return cls(LAPLACIAN, (b,), float(sigma2))

    @classmethod
    def student_t(cls, dof: float, scale: float = 1.0) -> "NoiseModel":
        # dof > 2 keeps the variance finite, which the estimator analysis needs.
        if dof <= 2:
            raise ConfigError(f"noise.dof must be > 2 so the variance exists, got {dof}")
        if scale <= 0:
            raise ConfigError(f"student_t scale must be > 0, got {scale}")
        return cls(STUDENT_T, (float(dof), float(scale)), scale * scale * dof / (dof - 2.0))

    @classmethod
    def tabulated(cls, x: np.ndarray, f_values: np.ndarray) -> "NoiseModel":
        """Monotone piecewise-linear CDF through (x, F) pairs.

        The density is the per-segment slope. Tables with a zero-slope
        interior segment are rejected: the density must stay positive on
        every bounded interval inside the table domain.
        """
        x = np.asarray(x, dtype=float)
        fv = np.asarray(f_values, dtype=float)
        if x.ndim != 1 or x.shape != fv.shape or x.size < 2:
            raise ConfigError("noise table needs two equal-length columns with >= 2 rows")
        if np.any(np.diff(x) <= 0):
            raise ConfigError("noise table x column must be strictly increasing")
        if abs(fv[0]) > 1e-12 or abs(fv[-1] - 1.0) > 1e-12:
            raise ConfigError("noise table F column must run from 0 to 1")
        slopes = np.diff(fv) / np.diff(x)
        if np.any(slopes <= 0):
            raise ConfigError("noise table has a zero-density interior segment; rejected")
        # Moments of the piecewise-linear CDF (uniform density per segment).
        x0, x1 = x[:-1], x[1:]
        mean = float(np.sum(slopes * (x1**2 - x0**2) / 2.0))
        if abs(mean) > 1e-8 * max(1.0, float(np.max(np.abs(x)))):
            raise ConfigError(f"noise table mean must be 0, got {mean:g}")
        m2 = float(np.sum(slopes * (x1**3 - x0**3) / 3.0))
        return cls(CUSTOM, (), m2 - mean * mean, table_x=x, table_f=fv)

    @classmethod
    def from_table_csv(cls, path: str) -> "NoiseModel":
        data = np.loadtxt(path, delimiter=",", ndmin=2)
        if data.shape[1] != 2:
            raise ConfigError(f"noise table {path} must have two columns x,F")
        return cls.tabulated(data[:, 0], data[:, 1])

    # -- distribution functions --------------------------------------------

    def cdf(self, x):
        """F(x); vectorized over x."""
        x = np.asarray(x, dtype=float)
        if self.family == GAUSSIAN:
            out = ndtr(x / self.params[0])
        elif self.family == LAPLACIAN:
            b = self.params[0]
            out = np.where(x < 0, 0.5 * np.exp(np.minimum(x, 0.0) / b),
                           1.0 - 0.5 * np.exp(-np.maximum(x, 0.0) / b))
        elif self.family == STUDENT_T:
            dof, scale = self.params
            out = stdtr(dof, x / scale)
        else:
            self._check_domain(x)
            out = np.interp(x, self.table_x, self.table_f)
        return out if out.ndim else float(out)

    def pdf(self, x):
        """f(x); vectorized over x."""
        x = np.asarray(x, dtype=float)
        if self.family == GAUSSIAN:
            s = self.params[0]
            out = np.exp(-0.5 * (x / s) ** 2) / (s * _SQRT2PI)
        elif self.family == LAPLACIAN:
            b = self.params[0]
            out = np.exp(-np.abs(x) / b) / (2.0 * b)
        elif self.family == STUDENT_T:
            dof, scale = self.params
            z = x / scale
            norm = math.exp(math.lgamma((dof + 1) / 2) - math.lgamma(dof / 2)) \
                / math.sqrt(dof * math.pi)
            out = norm * (1.0 + z * z / dof) ** (-(dof + 1) / 2) / scale
        else:
            self._check_domain(x)
            slopes = np.diff(self.table_f) / np.diff(self.table_x)
            idx = np.clip(np.searchsorted(self.table_x, x, side="right") - 1, 0, slopes.size - 1)
            out = slopes[idx]
        return out if out.ndim else float(out)

    def sample(self, rng: np.random.Generator, size=None):
        """Draw i.i.d. noise; deterministic given the generator state."""
        if self.family == GAUSSIAN:
            return rng.normal(0.0, self.params[0], size)
        if self.family == LAPLACIAN:
            return rng.laplace(0.0, self.params[0], size)
        if self.family == STUDENT_T:
            dof, scale = self.params
            return scale * rng.standard_t(dof, size)
        u = rng.uniform(0.0, 1.0, size)
        return np.interp(u, self.table_f, self.table_x)

    def _check_domain(self, x):
        lo, hi = self.table_x[0], self.table_x[-1]
        bad = (np.asarray(x) < lo) | (np.asarray(x) > hi)
        if np.any(bad):
            raise TableDomainError(
                f"x outside tabulated noise domain [{lo:g}, {hi:g}]")

    @property
    def symmetric_unimodal(self) -> bool:
        """True for families whose density peaks at 0 and is even."""
        return self.family in (GAUSSIAN, LAPLACIAN, STUDENT_T)


def noise_cdf(model: NoiseModel, x):
    """Distribution function F(x) of the sensor noise."""
    return model.cdf(x)


def noise_pdf(model: NoiseModel, x):
    """Density f(x) of the sensor noise."""
    return model.pdf(x)


def noise_sample(model: NoiseModel, rng: np.random.Generator, size=None):
    """Sample the sensor noise from a caller-owned generator."""
    return model.sample(rng, size)


@dataclass(frozen=True, eq=False)
class SystemModel:
    """MA system y_k = phi_k' theta + d_k observed through threshold sensor(s).

    The sensor reports s_k = sum_j 1{y_k <= C_j}; the binary case is a single
    threshold C with s_k = 1{y_k <= C} (boundary inclusive).
    """

    theta: np.ndarray
    thresholds: np.ndarray
    noise: NoiseModel
    regressor_memory: int = 0  # n-bar; defaults to n

    def __post_init__(self):
        theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        thresholds = np.atleast_1d(np.asarray(self.thresholds, dtype=float))
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "thresholds", thresholds)
        if theta.ndim != 1 or theta.size < 1:
            raise ConfigError("system.theta must be a vector with n >= 1")
        if thresholds.ndim != 1 or thresholds.size < 1:
            raise ConfigError("system.thresholds must hold at least one threshold")
        if np.any(np.diff(thresholds) <= 0):
            raise ConfigError("system.thresholds must be strictly ascending")
        if self.regressor_memory == 0:
            object.__setattr__(self, "regressor_memory", theta.size)
        if self.regressor_memory < 1:
            raise ConfigError("regressor memory must be >= 1")

    @property
    def dim(self) -> int:
        return self.theta.size

    @property
    def num_thresholds(self) -> int:
        return self.thresholds.size

    @property
    def binary(self) -> bool:
        return self.thresholds.size == 1


@dataclass(frozen=True)
class PECertificate:
    """Finite-horizon persistent-excitation certificate.

    ``excitation_level`` is the minimum over all observed length-N windows of
    the smallest eigenvalue of the window-averaged Gram matrix, and
    ``regressor_bound`` is the largest regressor norm. Valid means the level
    is strictly positive. The certificate only speaks for the windows it saw.
    """

    window: int
    excitation_level: float
    regressor_bound: float
    valid: bool
    worst_window_start: int
