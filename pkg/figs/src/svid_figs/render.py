"""Regenerate the study figures from harness CSV logs.

Three figure kinds, one per exported schema:

  convergence  <- estimate trajectory CSV  (k, theta_hat_1..theta_hat_n[, err_sq])
  as_rate      <- rate report CSV          (k, as_series, mean_k_err_sq)
  ms_rate      <- ensemble CSV             (k, mean_err_sq, k_mean_err_sq)

Rendering is plotting only: every statistic is read from the CSV as-is, and
input files are never written to.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

CONVERGENCE = "convergence"
AS_RATE = "as_rate"
MS_RATE = "ms_rate"

KINDS = (CONVERGENCE, AS_RATE, MS_RATE)

# reference-study true parameter values drawn as horizontal guides
TRUE_VALUES = (3.0, -1.0)


class SchemaError(Exception):
    """Input CSV does not match the documented export schema."""


@dataclass(frozen=True)
class FigureSpec:
    kind: str
    input_path: str
    output_path: str

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"unknown figure kind {self.kind!r}; expected one of {KINDS}")


@dataclass(eq=False)
class RenderResult:
    output_path: str
    series: dict = field(default_factory=dict)


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or not rows[0]:
        raise SchemaError(f"{path} is empty; expected a header row and data")
    header = rows[0]
    if len(rows) < 2:
        raise SchemaError(f"{path} has a header but no data rows")
    try:
        body = np.array([[float(v) for v in row] for row in rows[1:]])
    except ValueError as exc:
        raise SchemaError(f"{path}: non-numeric cell ({exc})") from exc
    if body.shape[1] != len(header):
        raise SchemaError(f"{path}: ragged rows do not match header {header}")
    return header, body


def _column(header, body, name, path) -> np.ndarray:
    if name not in header:
        raise SchemaError(f"{path}: missing column {name!r}; header is {header}")
    return body[:, header.index(name)]


def _check_k(k: np.ndarray, path):
    if np.any(np.diff(k) <= 0):
        raise SchemaError(f"{path}: k column must be strictly increasing")


def render(spec: FigureSpec) -> RenderResult:
    """Render one figure; returns the output path and the plotted series."""
    header, body = _read_csv(spec.input_path)
    k = _column(header, body, "k", spec.input_path)
    _check_k(k, spec.input_path)
    fig, ax = plt.subplots(figsize=(7, 5))
    series = {"k": k}
    try:
        if spec.kind == CONVERGENCE:
            names = [h for h in header if h.startswith("theta_hat_")]
            if not names:
                raise SchemaError(
                    f"{spec.input_path}: missing theta_hat_* columns; header is {header}")
            for name in names:
                values = _column(header, body, name, spec.input_path)
                series[name] = values
                ax.plot(k, values, label=name)
            for value in TRUE_VALUES:
                ax.axhline(value, color="k", linestyle="--", linewidth=0.8)
            ax.set_ylabel("estimate")
            ax.set_title("Estimate trajectories")
        elif spec.kind == AS_RATE:
            values = _column(header, body, "as_series", spec.input_path)
            series["as_series"] = values
            ax.plot(k, values)
            ax.set_xscale("log")
            ax.set_ylabel("k ||error||^2 / ln ln k")
            ax.set_title("Almost-sure rate trajectory")
        else:
            values = _column(header, body, "k_mean_err_sq", spec.input_path)
            series["k_mean_err_sq"] = values
            ax.plot(k, values)
            ax.set_xscale("log")
            ax.set_ylabel("k * mean ||error||^2")
            ax.set_title("Mean-square rate (ensemble)")
        ax.set_xlabel("k")
        ax.grid(True, alpha=0.4)
        if spec.kind == CONVERGENCE:
            ax.legend()
        fig.savefig(spec.output_path, bbox_inches="tight", dpi=150)
    finally:
        plt.close(fig)
    return RenderResult(output_path=str(spec.output_path), series=series)
