"""Command-line front end.

Commands: simulate, identify, spao, rates, crlb, mc, pecheck. Experiments are
described by a flat `key = value` config file with dotted key paths; flags
override config scalars, and `--paper-v` loads the embedded reference-study
preset (theta = (3, -1), C = 1, Gaussian sigma^2 = 25, beta = 20, k0 = 20,
initial estimate (1, 1), 200 replications).

Exit codes: 0 success, 2 configuration error, 3 numerical fault.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, estimate, simulate, spao
from .errors import ConfigError, NumericalFault, SetValuedIdError
from .model import NoiseModel, SystemModel

# key -> (type, validator, description); registry order is emit order
_KEYS = {
    "system.theta": ("vector", None, "true parameter vector"),
    "system.thresholds": ("vector", None, "ascending sensor thresholds"),
    "noise.family": ("choice:gaussian,laplacian,student_t,custom", None, "noise family"),
    "noise.sigma2": ("float", lambda v: v > 0, "noise variance (gaussian/laplacian)"),
    "noise.dof": ("float", lambda v: v > 2, "student_t degrees of freedom"),
    "noise.table_path": ("str", None, "two-column CSV x,F for custom noise"),
    "input.kind": ("choice:cyclic_dither,iid_uniform,explicit", None, "input rule"),
    "input.pattern": ("vector", None, "base pattern / explicit sequence"),
    "input.dither": ("float", lambda v: v >= 0, "dither half-width"),
    "input.seed": ("int", None, "input/dither seed (shared across runs)"),
    "sim.length": ("int", lambda v: v >= 1, "horizon K"),
    "pe.window": ("int", lambda v: v >= 1, "PE window N"),
    "est.policy": ("choice:harmonic,normalized,adaptive_beta", None, "step policy"),
    "est.beta": ("float", lambda v: v > 0, "step coefficient beta"),
    "est.beta_lo": ("float", lambda v: v > 0, "normalized policy lower beta"),
    "est.beta_hi": ("float", lambda v: v > 0, "normalized policy upper beta"),
    "est.margin": ("float", lambda v: v > 1, "adaptive beta safety margin"),
    "est.k0": ("int", lambda v: v >= 1, "warm start index"),
    "est.init": ("vector", None, "initial estimate"),
    "mc.runs": ("int", lambda v: v >= 1, "replication count R"),
    "mc.seed": ("int", None, "master seed for noise streams"),
    "mc.trace_runs": ("int", lambda v: v >= 0, "trajectories exported by mc"),
    "mc.jobs": ("int", lambda v: v >= 1, "concurrent replication cap"),
    "rates.tail_mprime": ("float", lambda v: v > 0, "tail threshold M'"),
    "out.dir": ("str", None, "output directory"),
}

PAPER_V = {
    "system.theta": (3.0, -1.0),
    "system.thresholds": (1.0,),
    "noise.family": "gaussian",
    "noise.sigma2": 25.0,
    "input.kind": "cyclic_dither",
    "input.pattern": (-1.0, 2.0, 0.0),
    "input.dither": 0.1,
    "input.seed": 20230,
    "sim.length": 100000,
    "pe.window": 3,
    "est.policy": "harmonic",
    "est.beta": 20.0,
    "est.k0": 20,
    "est.init": (1.0, 1.0),
    "mc.runs": 200,
    "mc.seed": 5,
    "mc.trace_runs": 1,
    "mc.jobs": 1,
    "rates.tail_mprime": 1.0,
    "out.dir": "out",
}

COMMANDS = ("simulate", "identify", "spao", "rates", "crlb", "mc", "pecheck")


def _parse_value(key: str, raw: str):
    kind = _KEYS[key][0]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "vector":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip())
        if kind.startswith("choice:"):
            options = kind.split(":", 1)[1].split(",")
            if raw not in options:
                raise ConfigError(
                    f"config key {key}: {raw!r} is not one of {options}")
            return raw
        return raw
    except ValueError as exc:
        raise ConfigError(f"config key {key}: cannot parse {raw!r} as {kind}") from exc


def _validate(key: str, value):
    check = _KEYS[key][1]
    if check is not None:
        scalars = value if isinstance(value, tuple) else (value,)
        for v in scalars:
            if not check(v):
                raise ConfigError(f"config key {key}: value {v!r} out of range")


class CliConfig:
    """Flat dotted-key configuration tree with a fixed key registry."""

    def __init__(self, values: dict | None = None):
        self.values = {}
        for key, value in (values or {}).items():
            self.set(key, value)

    def set(self, key: str, value):
        if key not in _KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        _validate(key, value)
        self.values[key] = value

    def get(self, key: str, default=None):
        return self.values.get(key, default)

    def require(self, key: str):
        if key not in self.values:
            raise ConfigError(f"missing config key {key!r}")
        return self.values[key]

    @classmethod
    def parse(cls, text: str) -> "CliConfig":
        cfg = cls()
        for lineno, line in enumerate(text.splitlines(), 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(f"config line {lineno}: expected key = value")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _KEYS:
                raise ConfigError(f"config line {lineno}: unknown config key {key!r}")
            cfg.set(key, _parse_value(key, raw))
        return cfg

    @classmethod
    def load(cls, path) -> "CliConfig":
        return cls.parse(Path(path).read_text())

    def emit(self) -> str:
        lines = []
        for key in _KEYS:
            if key not in self.values:
                continue
            value = self.values[key]
            if isinstance(value, tuple):
                text = ",".join(format(v, ".17g") for v in value)
            elif isinstance(value, float):
                text = format(value, ".17g")
            else:
                text = str(value)
            lines.append(f"{key} = {text}")
        return "\n".join(lines) + "\n"


# -- config -> domain objects -------------------------------------------------

def build_noise(cfg: CliConfig) -> NoiseModel:
    family = cfg.require("noise.family")
    if family == "gaussian":
        return NoiseModel.gaussian(cfg.require("noise.sigma2"))
    if family == "laplacian":
        return NoiseModel.laplacian(cfg.require("noise.sigma2"))
    if family == "student_t":
        return NoiseModel.student_t(cfg.require("noise.dof"))
    return NoiseModel.from_table_csv(cfg.require("noise.table_path"))


def build_system(cfg: CliConfig) -> SystemModel:
    return SystemModel(theta=np.array(cfg.require("system.theta")),
                       thresholds=np.array(cfg.require("system.thresholds")),
                       noise=build_noise(cfg))


def build_plan(cfg: CliConfig) -> simulate.InputPlan:
    return simulate.InputPlan(
        kind=cfg.get("input.kind", "cyclic_dither"),
        base_pattern=np.array(cfg.get("input.pattern", ())),
        dither_halfwidth=cfg.get("input.dither", 0.0),
        length=cfg.require("sim.length"),
        seed=cfg.get("input.seed", 0))


def build_policy(cfg: CliConfig) -> estimate.StepPolicy:
    kind = cfg.get("est.policy", "harmonic")
    return estimate.StepPolicy(
        kind=kind,
        beta=cfg.get("est.beta", 1.0),
        beta_lo=cfg.get("est.beta_lo", cfg.get("est.beta", 1.0)),
        beta_hi=cfg.get("est.beta_hi", cfg.get("est.beta", 1.0)),
        safety_margin=cfg.get("est.margin", 1.1),
        k0=cfg.get("est.k0", 1))


def build_experiment(cfg: CliConfig) -> bench.ExperimentConfig:
    return bench.ExperimentConfig(
        system=build_system(cfg),
        plan=build_plan(cfg),
        policy=build_policy(cfg),
        theta_hat_init=np.array(cfg.require("est.init")),
        horizon=cfg.require("sim.length"),
        runs=cfg.get("mc.runs", 1),
        master_seed=cfg.get("mc.seed", 0),
        pe_window=cfg.get("pe.window"),
        jobs=cfg.get("mc.jobs", 1),
        trace_runs=cfg.get("mc.trace_runs", 1),
        tail_m_prime=cfg.get("rates.tail_mprime", 1.0))


def _out_dir(cfg: CliConfig) -> Path:
    out = os.environ.get("SETVALUED_ID_OUT") or cfg.get("out.dir", "out")
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _noise_seed(cfg: CliConfig) -> np.random.SeedSequence:
    return np.random.SeedSequence(cfg.get("mc.seed", 0)).spawn(1)[0]


def _single_run(cfg: CliConfig):
    system = build_system(cfg)
    trace = simulate.simulate_run(system, build_plan(cfg), cfg.require("sim.length"),
                                  noise_seed=_noise_seed(cfg),
                                  pe_window=cfg.get("pe.window"))
    return system, trace


# -- commands ------------------------------------------------------------------

def cmd_simulate(cfg: CliConfig) -> int:
    _, trace = _single_run(cfg)
    out = _out_dir(cfg)
    trace.to_csv(out / "trace.csv")
    print(f"wrote {out / 'trace.csv'} ({len(trace)} steps)")
    return 0


def cmd_identify(cfg: CliConfig) -> int:
    _, trace = _single_run(cfg)
    traj = estimate.run_estimator(trace, build_policy(cfg),
                                  np.array(cfg.require("est.init")))
    out = _out_dir(cfg)
    trace.to_csv(out / "trace.csv")
    traj.to_csv(out / "estimates.csv")
    print(f"wrote {out / 'estimates.csv'}; final estimate "
          f"{np.array2string(traj.theta_hat[-1], precision=6)}")
    return 0


def cmd_spao(cfg: CliConfig) -> int:
    _, trace = _single_run(cfg)
    policy = build_policy(cfg)
    if policy.kind != "harmonic":
        raise ConfigError("spao diagnostics need est.policy = harmonic")
    traj = estimate.run_estimator(trace, policy, np.array(cfg.require("est.init")))
    diag = spao.build_spao_trace(trace, traj.ks, traj.theta_hat, policy.beta)
    out = _out_dir(cfg)
    spao.write_spao_csv(diag, out / "spao.csv")
    gap = float(np.max(diag.decomposition_gap()))
    # residual is checked on the definitional psi = theta_err - T so it is
    # independent of the recursion integration inside build_spao_trace
    psi_def = spao.compute_psi(traj.theta_hat, diag.t_series, trace.system.theta)
    residual = spao.psi_recursion_residual(trace, diag.ks, psi_def,
                                           diag.t_series, policy.beta)
    print(f"wrote {out / 'spao.csv'}; max decomposition gap {gap:.3e}, "
          f"max recursion residual {residual:.3e}")
    return 0


def cmd_rates(cfg: CliConfig) -> int:
    result = bench.monte_carlo(build_experiment(cfg))
    out = _out_dir(cfg)
    spao.export_rate_report(result.rate_report, out / "rates.csv")
    summary = spao.summary_record(result.rate_report)
    (out / "rates_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {out / 'rates.csv'}; {json.dumps(summary)}")
    return 0


def cmd_crlb(cfg: CliConfig) -> int:
    system = build_system(cfg)
    u = simulate.gen_inputs(build_plan(cfg))
    phi = simulate.build_regressors(u, system.regressor_memory)
    bound = bench.crlb(phi, system.theta, system.noise, system.thresholds)
    print(f"crlb_trace = {bound.trace:.12g}")
    print(f"k_crlb_trace = {bound.k_trace:.12g}")
    return 0


def cmd_mc(cfg: CliConfig) -> int:
    result = bench.monte_carlo(build_experiment(cfg))
    out = _out_dir(cfg)
    bench.write_ensemble_csv(result, out / "ensemble.csv")
    spao.export_rate_report(result.rate_report, out / "rates.csv")
    bench.write_summary(result, out / "summary.txt")
    if result.trajectories is not None:
        for i in range(result.trajectories.shape[0]):
            traj = estimate.EstimateTrajectory(
                ks=result.grid, theta_hat=result.trajectories[i],
                err_sq=result.err_sq_runs[i])
            traj.to_csv(out / f"trace_run{i}.csv")
    print(f"wrote ensemble of {result.err_sq_runs.shape[0]} runs to {out} "
          f"in {result.elapsed_seconds:.1f}s")
    return 0


def cmd_pecheck(cfg: CliConfig) -> int:
    system = build_system(cfg)
    u = simulate.gen_inputs(build_plan(cfg))
    phi = simulate.build_regressors(u, system.regressor_memory)
    window = cfg.get("pe.window", system.dim)
    cert = simulate.pe_check(phi, window)
    print(f"delta = {cert.excitation_level:.12g}")
    print(f"N = {cert.window}")
    print(f"M = {cert.regressor_bound:.12g}")
    print(f"valid = {cert.valid}")
    print(f"worst_window_start = {cert.worst_window_start}")
    return 0


_DISPATCH = {"simulate": cmd_simulate, "identify": cmd_identify, "spao": cmd_spao,
             "rates": cmd_rates, "crlb": cmd_crlb, "mc": cmd_mc,
             "pecheck": cmd_pecheck}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setvalued-id",
        description="Recursive identification of MA systems under binary sensing")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("config", nargs="?", help="config file (key = value lines)")
    parser.add_argument("--paper-v", action="store_true",
                        help="load the embedded reference-study preset")
    parser.add_argument("--seed", type=int, help="override mc.seed")
    parser.add_argument("--runs", type=int, help="override mc.runs")
    parser.add_argument("--horizon", type=int, help="override sim.length")
    parser.add_argument("--jobs", type=int, help="override mc.jobs")
    parser.add_argument("--emit-config", action="store_true",
                        help="print the effective config and exit")
    return parser


def _effective_config(args) -> CliConfig:
    if args.paper_v and args.config:
        raise ConfigError("give either a config file or --paper-v, not both")
    if args.paper_v:
        cfg = CliConfig(PAPER_V)
    elif args.config:
        cfg = CliConfig.load(args.config)
    else:
        raise ConfigError("a config file or --paper-v is required")
    if args.seed is not None:
        cfg.set("mc.seed", args.seed)
    if args.runs is not None:
        cfg.set("mc.runs", args.runs)
    if args.horizon is not None:
        cfg.set("sim.length", args.horizon)
    if args.jobs is not None:
        cfg.set("mc.jobs", args.jobs)
    return cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _effective_config(args)
        if args.emit_config:
            sys.stdout.write(cfg.emit())
            return 0
        return _DISPATCH[args.command](cfg)
    except NumericalFault as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return 3
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except SetValuedIdError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
