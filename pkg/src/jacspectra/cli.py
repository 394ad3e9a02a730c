"""Command-line driver: reproducible runs from JSON configs.

Every command reads a single JSON config (``--config``), applies dotted
flag overrides (``--solver.step-base 2.0`` targets config["solver"]
["step_base"]), materializes all defaults, runs, writes its CSV/JSON
outputs, and prints the fully resolved provenance document to stdout.

Subcommands: fixed-point, phase-grid, theory-spectrum, simulate, compare,
limit, moments.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .activations import get_activation
from .density import make_lambda_grid, read_csv, read_json, to_singular_domain
from .ensembles import WeightEnsemble
from .errors import JacspectraError
from .limits import BERNOULLI, SMOOTH, bernoulli_density, bernoulli_edges_atoms, smooth_density, smooth_edges
from .master import SolverSettings, density
from .moments import jacobian_moments
from .propagation import (
    NetworkConfig,
    critical_sigma_w,
    double_scaling_qstar,
    fixed_point_is_degenerate,
    phase_grid,
    qstar_fixed_point,
)
from .simulate import EmpiricalSpectrum, empirical_density, ks_distance, run_trials

THREADS_ENV = "JACSPECTRA_THREADS"

_SOLVER_DEFAULTS = {
    "step_base": 1.5,
    "half_steps": 40,
    "newton_tol": 1e-11,
    "newton_max_iter": 100,
    "final_epsilon": 1e-6,
    "quad_nodes": 201,
    "adaptive_epsilon": True,
}

_GRID_DEFAULTS = {"min": 1e-4, "max": None, "points": 600}


def _default_threads() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _deep_update(dst: dict, path: list, value) -> None:
    cur = dst
    for key in path[:-1]:
        cur = cur.setdefault(key, {})
    cur[path[-1]] = value


def _parse_overrides(pairs) -> list:
    """--a.b-c VALUE pairs -> ([a, b_c], parsed value)."""
    out = []
    i = 0
    while i < len(pairs):
        key = pairs[i]
        if not key.startswith("--"):
            raise SystemExit(f"unexpected argument {key!r}")
        if i + 1 >= len(pairs):
            raise SystemExit(f"flag {key!r} needs a value")
        raw = pairs[i + 1]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        path = [p.replace("-", "_") for p in key[2:].split(".")]
        out.append((path, value))
        i += 2
    return out


def _load_config(args, extra) -> dict:
    cfg = {}
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    for path, value in _parse_overrides(extra):
        _deep_update(cfg, path, value)
    return cfg


def _activation_from(cfg: dict):
    spec = cfg.get("activation", {})
    name = spec.get("name", "linear") if isinstance(spec, dict) else str(spec)
    params = spec.get("params", {}) if isinstance(spec, dict) else {}
    return get_activation(name, **params)


def _network_from(cfg: dict) -> NetworkConfig:
    activation = _activation_from(cfg)
    kind = cfg.get("ensemble", {}).get("kind", "orthogonal")
    depth = int(cfg.get("depth", 1))
    sigma_b = float(cfg.get("sigma_b", 0.0))
    qstar = cfg.get("qstar")
    ds = cfg.get("double_scaling")
    crit = cfg.get("critical", False)
    if ds:
        qstar, sigma_w = double_scaling_qstar(activation, depth, float(ds["sigma0_sq"]))
        sigma_b = 0.0
    elif crit:
        sigma_w, qstar = critical_sigma_w(activation, sigma_b)
    else:
        sigma_w = float(cfg.get("sigma_w", 1.0))
    resolved = {
        "activation": {"name": activation.name, "params": dict(activation.params)},
        "ensemble": {"kind": kind},
        "sigma_w": sigma_w,
        "sigma_b": sigma_b,
        "depth": depth,
        "width": cfg.get("width"),
        "qstar": qstar,
    }
    cfg.update(resolved)
    return NetworkConfig(
        activation=activation,
        ensemble=WeightEnsemble(kind, sigma_w),
        sigma_w=sigma_w,
        sigma_b=sigma_b,
        depth=depth,
        width=cfg.get("width"),
        qstar=qstar,
    )


def _solver_from(cfg: dict) -> tuple[SolverSettings, bool]:
    merged = dict(_SOLVER_DEFAULTS)
    merged.update(cfg.get("solver", {}))
    cfg["solver"] = merged
    adaptive = bool(merged["adaptive_epsilon"])
    settings = SolverSettings(
        step_base=float(merged["step_base"]),
        half_steps=int(merged["half_steps"]),
        newton_tol=float(merged["newton_tol"]),
        newton_max_iter=int(merged["newton_max_iter"]),
        final_epsilon=float(merged["final_epsilon"]),
        quad_nodes=int(merged["quad_nodes"]),
    )
    return settings, adaptive


def _grid_from(cfg: dict, lam_max_default: float) -> np.ndarray:
    merged = dict(_GRID_DEFAULTS)
    merged.update(cfg.get("grid", {}))
    if merged["max"] is None:
        merged["max"] = lam_max_default
    cfg["grid"] = merged
    return make_lambda_grid(
        float(merged["max"]), lam_min=float(merged["min"]), n=int(merged["points"])
    )


def _emit(command: str, cfg: dict, outputs: dict, report=None) -> None:
    doc = {
        "command": command,
        "version": __version__,
        "config": cfg,
        "outputs": outputs,
    }
    if report is not None:
        doc["report"] = report
    json.dump(doc, sys.stdout, sort_keys=True, default=str)
    sys.stdout.write("\n")


# ---------------------------------------------------------------------------
# commands


def cmd_fixed_point(args, extra) -> int:
    cfg = _load_config(args, extra)
    activation = _activation_from(cfg)
    sigma_w = float(cfg.get("sigma_w", 1.0))
    sigma_b = float(cfg.get("sigma_b", 0.0))
    degenerate = fixed_point_is_degenerate(activation, sigma_w, sigma_b)
    fp = qstar_fixed_point(activation, sigma_w, sigma_b)
    report = {
        "qstar": 0.0 if degenerate else fp.qstar,
        "chi": fp.chi,
        "iterations": fp.iterations,
        "converged": fp.converged,
        "residual": fp.residual,
        "critical_degenerate": degenerate,
    }
    out = cfg.get("out", {}).get("report_json")
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, sort_keys=True)
    _emit("fixed-point", cfg, {"report_json": out}, report)
    return 0 if (fp.converged or degenerate) else 1


def cmd_phase_grid(args, extra) -> int:
    cfg = _load_config(args, extra)
    activation = _activation_from(cfg)
    sw = cfg.get("sigma_w_range", [0.5, 3.0, 26])
    sb = cfg.get("sigma_b_range", [0.0, 1.0, 11])
    cfg["sigma_w_range"], cfg["sigma_b_range"] = sw, sb
    grid = phase_grid(
        activation,
        np.linspace(float(sw[0]), float(sw[1]), int(sw[2])),
        np.linspace(float(sb[0]), float(sb[1]), int(sb[2])),
    )
    path = cfg.get("out", {}).get("grid_csv", "phase_grid.csv")
    with open(path, "w") as fh:
        fh.write("sigma_w,sigma_b,qstar,chi,converged\n")
        for row in grid.rows():
            fh.write(f"{row[0]!r},{row[1]!r},{row[2]!r},{row[3]!r},{str(row[4]).lower()}\n")
    _emit("phase-grid", cfg, {"grid_csv": path})
    return 0


def cmd_theory_spectrum(args, extra) -> int:
    cfg = _load_config(args, extra)
    config = _network_from(cfg)
    settings, adaptive = _solver_from(cfg)
    ms = jacobian_moments(config)
    lam_max_default = 1.5 * max(4.0 * ms.m2 / max(ms.m1, 1e-12), 4.0 * ms.m1, 1.0)
    grid = _grid_from(cfg, lam_max_default)
    dens = density(config, grid, settings, adaptive_epsilon=adaptive)
    if cfg.get("singular_domain", True):
        dens_out = to_singular_domain(dens)
    else:
        dens_out = dens
    out = cfg.get("out", {})
    csv_path = out.get("density_csv", "theory_spectrum.csv")
    json_path = out.get("density_json")
    dens_out.write_csv(csv_path)
    if json_path:
        dens_out.write_json(json_path)
    n_failed = len(dens.metadata["failed_points"])
    _emit(
        "theory-spectrum",
        cfg,
        {"density_csv": csv_path, "density_json": json_path},
        {
            "failed_points": n_failed,
            "grid_points": int(np.size(grid)),
            "total_mass": dens.metadata["total_mass"],
            "atoms": [list(a) for a in dens_out.atoms],
        },
    )
    return 0 if n_failed <= 0.05 * np.size(grid) else 1


def cmd_simulate(args, extra) -> int:
    cfg = _load_config(args, extra)
    config = _network_from(cfg)
    if config.width is None:
        raise SystemExit("simulate requires config['width']")
    trials = int(cfg.get("trials", 30))
    seed = int(cfg.get("seed", 0))
    cfg["trials"], cfg["seed"] = trials, seed
    spectrum = run_trials(config, trials, seed, threads=args.threads)
    out = cfg.get("out", {})
    csv_path = out.get("spectrum_csv", "spectrum.csv")
    spectrum.write_csv(csv_path)
    sidecar_path = out.get("sidecar_json", csv_path.rsplit(".", 1)[0] + ".json")
    with open(sidecar_path, "w") as fh:
        json.dump(spectrum.sidecar(), fh, sort_keys=True)
    hist_path = out.get("histogram_csv")
    if hist_path:
        empirical_density(spectrum, bins=int(cfg.get("bins", 200))).write_csv(hist_path)
    _emit(
        "simulate",
        cfg,
        {"spectrum_csv": csv_path, "sidecar_json": sidecar_path, "histogram_csv": hist_path},
        {
            "mean_squared": spectrum.mean_squared(),
            "var_squared": spectrum.var_squared(),
            "n_values": int(spectrum.singular_values.size),
        },
    )
    return 0


def _load_spectrum(csv_path: str, sidecar_path: str) -> EmpiricalSpectrum:
    values = []
    with open(csv_path) as fh:
        header = fh.readline().strip()
        if header != "s":
            raise SystemExit(f"unexpected spectrum CSV header {header!r}")
        values = [float(line) for line in fh if line.strip()]
    with open(sidecar_path) as fh:
        side = json.load(fh)
    return EmpiricalSpectrum(
        singular_values=np.array(values),
        width=side["width"],
        depth=side["depth"],
        trials=side["trials"],
        seed=side["seed"],
        config=side["config"],
    )


def cmd_compare(args, extra) -> int:
    cfg = _load_config(args, extra)
    emp = cfg["empirical"]
    spectrum = _load_spectrum(emp["spectrum_csv"], emp["sidecar_json"])
    theory_path = cfg["theory"]["density"]
    if theory_path.endswith(".json"):
        theory = read_json(theory_path)
    else:
        theory = read_csv(theory_path)
    if theory.domain != "singular":
        theory = to_singular_domain(theory)
    ks = ks_distance(spectrum, theory)
    sq = spectrum.squared()
    th_m1 = float(np.trapezoid(theory.rho * theory.grid**2, theory.grid)) + sum(
        m * l * l for l, m in theory.atoms
    )
    report = {
        "ks": ks,
        "empirical_mean_squared": float(np.mean(sq)),
        "empirical_var_squared": float(np.var(sq)),
        "theory_mean_squared": th_m1,
        "mean_squared_delta": float(np.mean(sq)) - th_m1,
    }
    out = cfg.get("out", {}).get("report_json")
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, sort_keys=True)
    _emit("compare", cfg, {"report_json": out}, report)
    return 0


def cmd_limit(args, extra) -> int:
    cfg = _load_config(args, extra)
    klass = cfg.get("class", BERNOULLI)
    s0sq = float(cfg.get("sigma0_sq", 0.25))
    cfg["class"], cfg["sigma0_sq"] = klass, s0sq
    points = int(cfg.get("grid", {}).get("points", 1200))
    if klass == BERNOULLI:
        info = bernoulli_edges_atoms(s0sq)
        lam_hi = max(info["lambda1"], info["lambda2"]) * 1.1
        grid = np.concatenate(
            [np.geomspace(1e-10, info["lambda1"], points // 2), np.linspace(1e-6, lam_hi, points // 2)]
        )
        grid = np.unique(grid)
        dens = bernoulli_density(s0sq, grid, eps=float(cfg.get("readout_epsilon", 1e-9)))
        edges = {k: info[k] for k in ("lambda0", "lambda1", "lambda2")}
    elif klass == SMOOTH:
        lo, hi = smooth_edges(s0sq)
        grid = np.linspace(max(lo * 0.8, 1e-8), hi * 1.05, points)
        dens = smooth_density(s0sq, grid, eps=float(cfg.get("readout_epsilon", 1e-9)))
        edges = {"lambda_minus": lo, "lambda_plus": hi}
    else:
        raise SystemExit(f"unknown limit class {klass!r}")
    dens_s = to_singular_domain(dens)
    out = cfg.get("out", {})
    csv_path = out.get("density_csv", "limit.csv")
    dens_s.write_csv(csv_path)
    json_path = out.get("density_json")
    if json_path:
        dens_s.write_json(json_path)
    _emit(
        "limit",
        cfg,
        {"density_csv": csv_path, "density_json": json_path},
        {"edges": edges, "atoms": [list(a) for a in dens_s.atoms]},
    )
    return 0


def cmd_moments(args, extra) -> int:
    cfg = _load_config(args, extra)
    config = _network_from(cfg)
    summary = jacobian_moments(config)
    report = summary.as_dict()
    out = cfg.get("out", {}).get("report_json")
    if out:
        with open(out, "w") as fh:
            json.dump(report, fh, sort_keys=True)
    _emit("moments", cfg, {"report_json": out}, report)
    return 0


_COMMANDS = {
    "fixed-point": cmd_fixed_point,
    "phase-grid": cmd_phase_grid,
    "theory-spectrum": cmd_theory_spectrum,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "limit": cmd_limit,
    "moments": cmd_moments,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="jacspectra",
        description="Singular-value spectra of deep random-network Jacobians.",
    )
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", help="path to a JSON config document")
    parser.add_argument(
        "--threads",
        type=int,
        default=_default_threads(),
        help=f"worker cap for independent trials (default: ${THREADS_ENV} or cpu count)",
    )
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    try:
        return _COMMANDS[args.command](args, extra)
    except JacspectraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
