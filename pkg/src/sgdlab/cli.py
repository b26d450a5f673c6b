"""Command-line experiment runner.

Usage::

    sgdlab <command> [--config PATH] [--seed N] [--out DIR] [--threads N] [key=value ...]

Commands: spectrum, simulate, fpk, decompose, doublewell, diagnose. The JSON
config is merged over the command defaults, then dotted ``key=value``
overrides are applied (values are parsed as JSON when possible). Every run
writes ``manifest.json`` with the resolved config next to its outputs.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 non-convergence.
"""
from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .datasets import make_tiny_mlp
from .decomposition import decompose_linear, is_hurwitz, ou_stationary_covariance
from .diagnostics import autocorrelation, detect_limit_cycle, increment_fft
from .diffusion import SCHEMES, diffusion_matrix, per_sample_gradients, spectrum_summary
from .errors import ConfigError, ConvergenceError, NumericalError
from .fokker_planck import (DensityGrid, FokkerPlanck, GridSpec, current_and_force, free_energy,
                            potential_from_density, steady_state)
from .models import DoubleWell, QuadraticEnsemble, double_well_field
from .sde import SdeConfig, gradient_norm_series, sde_run, sgd_run

log = logging.getLogger("sgdlab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CONVERGENCE = 0, 2, 3, 4
REPLACED_BLOCKS = ("model", "drift")

DEFAULTS = {
    "spectrum": {
        "model": {"kind": "tiny_mlp", "n": 512, "input_dim": 49, "hidden": 16, "classes": 5},
        "train": {"eta": 0.1, "b": 32, "scheme": "with_replacement", "steps": 2000},
        "checkpoints": [0.2, 0.4, 1.0],
    },
    "simulate": {
        "mode": "sgd",
        "model": {"kind": "tiny_mlp", "n": 512, "input_dim": 49, "hidden": 16, "classes": 5},
        "sgd": {"eta": 0.1, "b": 32, "scheme": "with_replacement", "steps": 2000,
                "record_every": 10},
        "sde": {"beta_inv": 1.0, "dt": 1e-3, "steps": 10000, "noise_mode": "isotropic",
                "diffusion": 1.0, "record_every": 10, "x0": None, "winding_center": None},
    },
    "fpk": {
        "drift": {"kind": "double_well", "lam": 0.0},
        "diffusion": [[1.0, 0.0], [0.0, 1.0]],
        "beta_inv": 1.0,
        "grid": {"nx": 128, "ny": 128, "x_min": -2.5, "x_max": 2.5, "y_min": -2.5, "y_max": 2.5},
        "scheme": "exponential",
        "tol": 1e-9,
        "evolve_steps": 0,
    },
    "decompose": {"F": [[1.0, -1.0], [1.0, 1.0]], "D": [[1.0, 0.0], [0.0, 1.0]], "beta_inv": 1.0},
    "doublewell": {
        "lams": [0.0, 0.5, 1.5],
        "grid": {"nx": 128, "ny": 128, "x_min": -2.5, "x_max": 2.5, "y_min": -2.5, "y_max": 2.5},
        "beta_inv": 1.0, "dt": 1e-4, "cycle_steps": 10_000_000, "record_every": 1000,
        "x0": [1.0, 0.0],
    },
    "diagnose": {"input": None, "burnin": 0, "max_lag": 100, "center": [0.0, 0.0]},
}


# ---------------------------------------------------------------------------
# config handling


def deep_merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[list[str], object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    key, raw = item.split("=", 1)
    if not key:
        raise ConfigError(f"override {item!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(cfg: dict, overrides) -> dict:
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        keys, value = parse_override(item)
        node = cfg
        for k in keys[:-1]:
            if not isinstance(node.get(k), dict):
                node[k] = {}
            node = node[k]
        node[keys[-1]] = value
    return cfg


def resolve_config(command: str, path=None, overrides=(), seed=None) -> dict:
    cfg = copy.deepcopy(DEFAULTS[command])
    if path is not None:
        try:
            user = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ConfigError("config file must hold a JSON object")
        # model and drift blocks are replaced whole, not merged field by field
        for k in REPLACED_BLOCKS:
            if k in user:
                cfg.pop(k, None)
        cfg = deep_merge(cfg, user)
    cfg = apply_overrides(cfg, overrides)
    if seed is not None:
        cfg["seed"] = seed
    cfg.setdefault("seed", 0)
    return cfg


def require(block: dict, key: str, where: str):
    if not isinstance(block, dict) or key not in block or block[key] is None:
        raise ConfigError(f"missing required field '{where}{key}'")
    return block[key]


def build_model(cfg: dict, seed: int):
    model = require(cfg, "model", "")
    kind = require(model, "kind", "model.")
    if kind == "tiny_mlp":
        data = {k: model[k] for k in ("csv", "idx_images", "idx_labels") if k in model}
        return make_tiny_mlp(input_dim=model.get("input_dim", 49), hidden=model.get("hidden", 16),
                             classes=model.get("classes", 5), n=model.get("n", 512), seed=seed,
                             data=data)
    if kind == "quadratic_ensemble":
        if "centers" in model:
            centers = np.asarray(model["centers"], dtype=np.float64)
        else:
            rng = np.random.default_rng(seed)
            centers = rng.standard_normal((int(model.get("n", 8)), int(model.get("d", 2))))
        return QuadraticEnsemble(centers, model.get("curvatures"), seed)
    if kind == "double_well":
        return DoubleWell(lam=float(model.get("lam", 0.0)), seed=seed)
    raise ConfigError(f"unknown model.kind {kind!r}")


def _scheme(block: dict) -> str:
    scheme = block.get("scheme", "with_replacement")
    if scheme not in SCHEMES:
        raise ConfigError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    return scheme


def _initial_weights(model, seed: int):
    if hasattr(model, "init_weights"):
        return model.init_weights(seed)
    if isinstance(model, DoubleWell):
        return np.array([1.0, 0.0])
    return np.zeros(model.dim)


# ---------------------------------------------------------------------------
# commands; each returns the list of files it wrote


def cmd_spectrum(cfg: dict, out: Path) -> list:
    seed = cfg["seed"]
    model = build_model(cfg, seed)
    train = require(cfg, "train", "")
    eta, b, steps = float(train["eta"]), int(train["b"]), int(train["steps"])
    scheme = _scheme(train)
    traj = sgd_run(model, _initial_weights(model, seed), eta, b, scheme, steps, 1, seed)
    if traj.status != "ok":
        raise NumericalError(f"training run {traj.status}")
    files, summaries = [], []
    for frac in cfg.get("checkpoints", [1.0]):
        if not 0 <= frac <= 1:
            raise ConfigError("checkpoints must lie in [0, 1]")
        k = int(round(frac * steps))
        est = diffusion_matrix(per_sample_gradients(model, traj.snapshots[k]), scheme,
                               provenance={"step": k, "fraction": frac})
        tag = f"{int(round(100 * frac)):03d}"
        files.append(io.write_table(out / f"spectrum_{tag}.csv", ["index", "eigenvalue"],
                                    [np.arange(est.dim), est.eigenvalues]))
        summaries.append({"checkpoint": frac, "step": k, **spectrum_summary(est, eta, b)})
    files.append(io.write_json(out / "summary.json", {"checkpoints": summaries}))
    return files


def _drift_from(block: dict):
    kind = require(block, "kind", "drift.")
    if kind == "double_well":
        lam = float(block.get("lam", 0.0))
        return (lambda x: double_well_field(lam, x)[3]), 2
    if kind == "linear":
        F = np.asarray(require(block, "F", "drift."), dtype=np.float64)
        return (lambda x: x @ F.T), F.shape[0]
    if kind == "none":
        return None, int(block.get("dim", 2))
    raise ConfigError(f"unknown drift.kind {kind!r}")


def cmd_simulate(cfg: dict, out: Path) -> list:
    seed = cfg["seed"]
    mode = cfg.get("mode", "sgd")
    files = []
    if mode == "sgd":
        model = build_model(cfg, seed)
        s = require(cfg, "sgd", "")
        traj = sgd_run(model, _initial_weights(model, seed), float(s["eta"]), int(s["b"]),
                       _scheme(s), int(s["steps"]), int(s.get("record_every", 1)), seed)
        gn = gradient_norm_series(model, traj)
        files.append(io.write_table(out / "grad_norm.csv", ["t", "grad_norm"], [traj.times, gn]))
    elif mode == "sde":
        s = require(cfg, "sde", "")
        if "drift" in cfg:
            drift, d = _drift_from(cfg["drift"])
        else:
            model = build_model(cfg, seed)
            drift, d = model, model.dim
        if drift is None:
            drift = np.zeros_like
        x0 = s.get("x0")
        x0 = np.zeros(d) if x0 is None else np.asarray(x0, dtype=np.float64)
        noise_mode = s.get("noise_mode", "isotropic")
        diffusion = s.get("diffusion", 1.0)
        if noise_mode == "constant":
            diffusion = np.asarray(diffusion, dtype=np.float64)
        elif noise_mode == "full":
            raise ConfigError("noise_mode 'full' needs a callable diffusion; use the Python API")
        sde = SdeConfig(beta_inv=float(s["beta_inv"]), dt=float(s["dt"]), steps=int(s["steps"]),
                        noise_mode=noise_mode, diffusion=diffusion,
                        record_every=int(s.get("record_every", 1)), seed=seed,
                        winding_center=s.get("winding_center"))
        traj = sde_run(drift, sde, x0)
    else:
        raise ConfigError(f"mode must be 'sgd' or 'sde', got {mode!r}")
    files.append(io.write_trajectory_bin(out / "trajectory.bin", traj))
    files.append(io.write_trajectory_csv(out / "trajectory.csv", traj))
    files.append(io.write_json(out / "summary.json", {
        "status": traj.status, "snapshots": len(traj), "dim": traj.dim,
        "final": traj.final, "meta": traj.meta}))
    if traj.status != "ok":
        raise NumericalError(f"simulation {traj.status}; partial trajectory written")
    return files


def cmd_fpk(cfg: dict, out: Path) -> list:
    grid = GridSpec(**cfg["grid"])
    drift, _ = _drift_from(require(cfg, "drift", ""))
    D = np.asarray(cfg["diffusion"], dtype=np.float64)
    beta_inv = float(cfg["beta_inv"])
    op = FokkerPlanck(grid, drift, D, beta_inv, scheme=cfg.get("scheme", "exponential"))
    ss = steady_state(op, tol=float(cfg.get("tol", 1e-9)), raise_on_failure=True)
    rho = ss.density.rho
    phi, masked = potential_from_density(rho, beta_inv, floor=1e-300)
    _, force = current_and_force(op, rho)
    files = [io.write_grid(out / "rho_ss.csv", rho, grid),
             io.write_grid(out / "phi.csv", phi, grid),
             io.write_grid(out / "force_x.csv", force[..., 0], grid),
             io.write_grid(out / "force_y.csv", force[..., 1], grid)]
    files += [out / "rho_ss.json", out / "phi.json", out / "force_x.json", out / "force_y.json"]
    summary = {"converged": ss.converged, "rate": ss.rate, "status": ss.status,
               "masked_cells": masked, "cfl": op.cfl_limits()}
    n_evolve = int(cfg.get("evolve_steps", 0))
    if n_evolve > 0:
        rng = np.random.default_rng(cfg["seed"])
        dens = DensityGrid(grid, grid.normalize(rng.random((grid.nx, grid.ny))))
        dt = op.default_dt()
        phi_fill = np.nan_to_num(phi, nan=np.nanmax(phi))
        rows = []
        for k in range(n_evolve + 1):
            fe = free_energy(dens.rho, phi_fill, beta_inv, rho, grid)
            rows.append((dens.t, fe.free_energy, fe.kl_to_ss))
            if k < n_evolve:
                dens = op.step(dens, dt)
        rows = np.array(rows)
        files.append(io.write_table(out / "free_energy.csv", ["t", "free_energy", "kl"], rows.T))
        summary["final_kl"] = float(rows[-1, 2])
    files.append(io.write_json(out / "summary.json", summary))
    return files


def cmd_decompose(cfg: dict, out: Path) -> list:
    F = np.asarray(require(cfg, "F", ""), dtype=np.float64)
    D = np.asarray(require(cfg, "D", ""), dtype=np.float64)
    dec = decompose_linear(F, D)
    report = dec.to_dict()
    if is_hurwitz(F):
        report["stationary_covariance"] = ou_stationary_covariance(F, D, float(cfg["beta_inv"]))
    else:
        report["stationary_covariance"] = None
    return [io.write_json(out / "decomposition.json", report)]


def cmd_doublewell(cfg: dict, out: Path) -> list:
    from .doublewell import ExperimentConfig, mode_invariance_check, run_double_well

    keys = ("lams", "grid", "beta_inv", "dt", "cycle_steps", "record_every", "x0")
    exp = ExperimentConfig(**{k: cfg[k] for k in keys if k in cfg}, seed=cfg["seed"],
                           out_dir=str(out))
    bundles = run_double_well(exp, workers=cfg.get("threads", 1))
    files = [f for b in bundles.values() for f in b.files]
    if 0.0 in bundles and len(bundles) > 1:
        check = mode_invariance_check(bundles)
        files.append(io.write_json(out / "invariance.json", {f"{k:g}": v for k, v in check.items()}))
    return files


def _load_trajectory(path: Path) -> np.ndarray:
    if path.suffix == ".bin":
        return io.read_trajectory_bin(path)
    header, data = io.read_table(path)
    if header[0] != "t":
        raise ConfigError(f"{path}: expected a trajectory CSV with header t,w0,...")
    return data[:, 1:]


def cmd_diagnose(cfg: dict, out: Path) -> list:
    src = require(cfg, "input", "")
    x = _load_trajectory(Path(src))
    burnin = int(cfg.get("burnin", 0))
    spec = increment_fft(x, burnin)
    ac = autocorrelation(x, burnin, int(cfg.get("max_lag", 100)))
    files = [io.write_table(out / "fft.csv", ["freq", "amp", "amp_std"],
                            [spec.freqs, spec.amplitude, spec.amplitude_std]),
             io.write_table(out / "autocorr.csv", ["lag", "ac", "band"],
                            [ac.lags, ac.ac, np.full(ac.lags.shape, ac.band)])]
    summary = {"samples": int(x.shape[0] - burnin), "ac_fraction_inside": ac.fraction_inside()}
    if x.shape[1] == 2 and x.shape[0] - burnin >= 1000:
        cycle = detect_limit_cycle(x, tuple(cfg.get("center", (0.0, 0.0))), burnin)
        files.append(io.write_json(out / "cycle.json", cycle.to_dict()))
    files.append(io.write_json(out / "summary.json", summary))
    return files


COMMANDS = {"spectrum": cmd_spectrum, "simulate": cmd_simulate, "fpk": cmd_fpk,
            "decompose": cmd_decompose, "doublewell": cmd_doublewell, "diagnose": cmd_diagnose}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sgdlab", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON config file")
        p.add_argument("--seed", type=int, help="RNG seed (unsigned 64-bit)")
        p.add_argument("--out", type=Path, help="output directory (default runs/<command>)")
        p.add_argument("--threads", type=int, help="worker threads (falls back to LAB_THREADS)")
        p.add_argument("overrides", nargs="*", help="dotted key=value overrides")
    return parser


def _threads(arg) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("LAB_THREADS")
    if env is None:
        return 1
    try:
        return int(env)
    except ValueError as exc:
        raise ConfigError(f"LAB_THREADS must be an integer, got {env!r}") from exc


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.seed is not None and not 0 <= args.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        threads = _threads(args.threads)
        if threads < 1:
            raise ConfigError("thread count must be >= 1")
        cfg = resolve_config(args.command, args.config, args.overrides, args.seed)
        cfg["threads"] = threads
        out = args.out or Path("runs") / args.command
        out.mkdir(parents=True, exist_ok=True)
        files = COMMANDS[args.command](cfg, out)
        io.write_manifest(out, cfg, cfg["seed"], files, args.command)
    except (ConfigError, KeyError, TypeError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except ConvergenceError as exc:
        log.error("not converged: %s", exc)
        return EXIT_CONVERGENCE
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    log.info("wrote %d files to %s", len(files), out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
