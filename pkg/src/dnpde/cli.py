"""Config-driven entry points: single runs, parameter sweeps, verification.

All file outputs are deterministic for a fixed config and seed (CSV with 17
significant digits, LF endings, comment header carrying the config checksum
and master seed); wall-clock timing goes to stdout only.

Exit codes: 0 success, 1 verification failure, 2 config error, 3 solver
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
from dataclasses import replace

import numpy as np

from dnpde import config as configmod
from dnpde import grid as gridmod
from dnpde import noise as noisemod
from dnpde import solver as solvermod
from dnpde import verify as verifymod
from dnpde.config import ConfigError
from dnpde.solver import SolverError

__all__ = ["main", "cmd_run", "cmd_sweep", "cmd_verify"]

SWEEP_KEYS = ("lambda_yosida", "dt", "h", "mode_count")

SWEEP_HEADER = [
    "param",
    "value",
    "cauchy_dist_prev",
    "sup_u_sq",
    "visc_grad_sq",
    "int_eta_gradu",
    "int_xi_u",
    "fenchel_gap_gamma",
    "fenchel_gap_beta",
    "tail_eta_1",
    "tail_eta_max",
    "tail_xi_1",
    "tail_xi_max",
    "energy_residual",
    "increments_checksum",
    "status",
]


def _comments(rc, seed):
    return [f"config_checksum={rc.checksum}", f"master_seed={seed}"]


def _out_paths(rc, out_dir):
    out = out_dir or rc.get("output", "dir", ".")
    prefix = rc.get("output", "prefix", "run")
    os.makedirs(out, exist_ok=True)
    return out, prefix


def cmd_run(config_path, seed_override=None, out_dir=None, jobs=1):
    """Run one simulation; write the trajectory CSV and a run summary."""
    rc = configmod.load_config(config_path)
    cfg, u0 = configmod.build_problem(rc)
    seed_val = configmod.master_seed(rc, seed_override)
    out, prefix = _out_paths(rc, out_dir)

    t0 = time.monotonic()
    path_seed = noisemod.PathSeed(seed_val, 0) if cfg.noise is not None else None
    traj = solvermod.integrate(cfg, u0, path_seed)
    wall = time.monotonic() - t0

    solvermod.write_trajectory_csv(
        traj, os.path.join(out, f"{prefix}_trajectory.csv"), _comments(rc, seed_val)
    )
    dump_every = rc.get("output", "dump_every", 0)
    if dump_every:
        for rec in traj.records[::dump_every]:
            gridmod.write_field(
                gridmod.GridField(cfg.grid, rec.u),
                os.path.join(out, f"{prefix}_state_{rec.index:06d}.txt"),
            )
    summary = {
        "config_checksum": rc.checksum,
        "master_seed": seed_val,
        "n_steps": cfg.n_steps,
        "scheme": cfg.scheme,
        "terminal_norm": math.sqrt(traj.records[-1].norm_u_sq),
        "terminal_energy_residual": traj.energy_residual,
        "max_fenchel_gap": traj.max_graph_residual,
    }
    with open(os.path.join(out, f"{prefix}_summary.json"), "w", newline="\n") as fh:
        json.dump(summary, fh, sort_keys=True, indent=2)
        fh.write("\n")
    print(f"run complete: {cfg.n_steps} steps, wall time {wall:.3f}s")
    return 0


def _sweep_configs(rc, cfg, u0, param, values):
    """Per-value configs, initial data and coupled increment tables."""
    model = cfg.noise
    runs = []
    checksum = ""
    if param == "lambda_yosida":
        if model is not None:
            seed = noisemod.PathSeed(configmod.master_seed(rc), 0)
            inc = noisemod.sample_increments(seed, cfg.n_steps, cfg.dt, model.mode_count)
            checksum = noisemod.increment_checksum(inc)
        else:
            inc = None
        for v in values:
            runs.append((replace(cfg, lambda_yosida=float(v)), u0, inc))
    elif param == "dt":
        dts = [float(v) for v in values]
        if model is not None:
            tables, checksum = verifymod.coupled_increment_tables(
                configmod.master_seed(rc), 0, dts, cfg.horizon, model.mode_count
            )
        else:
            tables = [None] * len(dts)
        for v, table in zip(dts, tables):
            runs.append((replace(cfg, dt=v), u0, table))
    elif param == "mode_count":
        if model is None:
            raise ConfigError("mode_count sweep needs a [noise] section")
        ks = [int(v) for v in values]
        kmax = max(ks)
        if rc.has("noise", "amplitudes"):
            amps = rc.get("noise", "amplitudes")
            if len(amps) < kmax:
                raise ConfigError("amplitudes list shorter than swept mode_count")
        else:
            amps = noisemod.amplitudes_power_law(
                kmax, rc.require("noise", "amp_c"), rc.require("noise", "amp_q")
            )
        seed = noisemod.PathSeed(configmod.master_seed(rc), 0)
        inc = noisemod.sample_increments(seed, cfg.n_steps, cfg.dt, kmax)
        checksum = noisemod.increment_checksum(inc)
        for k in ks:
            sub = noisemod.NoiseModel(tuple(amps[:k]), model.gain, None)
            sub = noisemod.NoiseModel(
                tuple(amps[:k]), model.gain, noisemod.default_bound(sub, cfg.grid)
            )
            runs.append((replace(cfg, noise=sub), u0, inc[:, :k]))
    elif param == "h":
        if rc.get("solver", "u0_kind", "zero") == "file":
            raise ConfigError("h sweep cannot reuse a file-based initial datum")
        for v in values:
            h = float(v)
            nodes = tuple(max(3, round(L / h) - 1) for L in cfg.grid.extents)
            g = gridmod.DirichletGrid(cfg.grid.extents, nodes)
            noise_v = configmod.build_noise(rc, g)
            u0_v = configmod.build_u0(rc, g)
            if model is not None:
                seed = noisemod.PathSeed(configmod.master_seed(rc), 0)
                inc = noisemod.sample_increments(
                    seed, cfg.n_steps, cfg.dt, noise_v.mode_count
                )
                checksum = noisemod.increment_checksum(inc)
            else:
                inc = None
            runs.append((replace(cfg, grid=g, noise=noise_v), u0_v, inc))
    else:
        raise ConfigError(f"invalid sweep key {param!r}; use one of {SWEEP_KEYS}")
    return runs, checksum


def _cauchy_prev(prev, cur):
    """sup-in-time state distance at shared times, NaN when not comparable."""
    if prev is None or prev.grid != cur.grid:
        return math.nan
    dt_a, dt_b = prev.config.dt, cur.config.dt
    coarse = max(dt_a, dt_b)
    ra = round(coarse / dt_a)
    rb = round(coarse / dt_b)
    if abs(ra * dt_a - coarse) > 1e-9 * coarse or abs(rb * dt_b - coarse) > 1e-9 * coarse:
        return math.nan
    sa = prev.states()[::ra]
    sb = cur.states()[::rb]
    n = min(len(sa), len(sb))
    axes = tuple(range(1, 1 + cur.grid.dim))
    d = np.sqrt(cur.grid.node_volume * np.sum((sa[:n] - sb[:n]) ** 2, axis=axes))
    return float(d.max())


def cmd_sweep(config_path, param, values, seed_override=None, out_dir=None, jobs=1):
    """Sweep one parameter; one report row per value, coupled noise path."""
    rc = configmod.load_config(config_path)
    if param not in SWEEP_KEYS:
        raise ConfigError(f"invalid sweep key {param!r}; use one of {SWEEP_KEYS}")
    if seed_override is not None:
        rc.master_seed_default = int(seed_override)
        if rc.has("noise", "master_seed"):
            rc.sections["noise"]["master_seed"] = int(seed_override)
    cfg, u0 = configmod.build_problem(rc)
    out, prefix = _out_paths(rc, out_dir)
    seed_val = configmod.master_seed(rc)
    runs, checksum = _sweep_configs(rc, cfg, u0, param, values)

    rows = []
    prev_traj = None
    failure = None
    for value, (cfg_v, u0_v, inc) in zip(values, runs):
        try:
            seed = noisemod.PathSeed(seed_val, 0) if cfg_v.noise is not None else None
            traj = solvermod.integrate(cfg_v, u0_v, seed, inc)
        except SolverError as err:
            rows.append(
                [param, float(value)]
                + [math.nan] * (len(SWEEP_HEADER) - 4)
                + [checksum, f"failed_step_{err.step_index}"]
            )
            failure = err
            break
        bounds = verifymod.trajectory_bounds(traj)
        gap_g, gap_b = verifymod.fenchel_gap_integrals(traj)
        tails_eta, tails_xi = verifymod.tail_profiles(traj)
        rows.append(
            [
                param,
                float(value),
                _cauchy_prev(prev_traj, traj),
                bounds["sup_u_sq"],
                bounds["visc_grad_sq"],
                bounds["int_eta_gradu"],
                bounds["int_xi_u"],
                math.nan if gap_g is None else gap_g,
                math.nan if gap_b is None else gap_b,
                tails_eta[0],
                tails_eta[-1],
                tails_xi[0],
                tails_xi[-1],
                traj.energy_residual,
                checksum,
                "ok",
            ]
        )
        prev_traj = traj
    verifymod.write_report_csv(
        os.path.join(out, f"{prefix}_sweep.csv"),
        SWEEP_HEADER,
        rows,
        _comments(rc, seed_val),
    )
    if failure is not None:
        raise failure
    return 0


def cmd_verify(config_path, select=None, out_dir=None, jobs=1):
    """Run the configured acceptance families; exit 0 iff every one passes."""
    from dnpde import acceptance

    rc = configmod.load_config(config_path)
    tokens = select if select else rc.get("verify", "families", ("all",))
    try:
        ids = acceptance.resolve_selection(tokens)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if not ids:
        raise ConfigError("empty criterion selection")
    out, prefix = _out_paths(rc, out_dir)
    workdir = os.path.join(out, f"{prefix}_verify_work")
    results = acceptance.run_criteria(ids, workdir=workdir, jobs=jobs, rc=rc)

    rows = []
    for res in results:
        for a in res.assertions:
            rows.append(
                [
                    str(res.cid),
                    res.name,
                    a.name,
                    a.measured,
                    a.threshold,
                    "PASS" if a.passed else "FAIL",
                    a.provenance,
                ]
            )
        for line in res.lines():
            print(line)
    verifymod.write_report_csv(
        os.path.join(out, f"{prefix}_verify.csv"),
        ["criterion_id", "criterion", "assertion", "measured", "threshold", "status", "provenance"],
        rows,
        _comments(rc, configmod.master_seed(rc)),
    )
    ok = all(res.passed for res in results)
    print("VERIFY:", "all criteria PASS" if ok else "some criteria FAILED")
    return 0 if ok else 1


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="dnpde",
        description="Doubly nonlinear stochastic PDE runs, sweeps and verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one simulation from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--seed", type=int, default=None, help="master seed override")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.add_argument("--jobs", type=int, default=1, help="path parallelism")

    p_sweep = sub.add_parser("sweep", help="sweep one parameter over a value list")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--param", required=True, help=f"one of {SWEEP_KEYS}")
    p_sweep.add_argument(
        "--values", required=True, help="comma-separated list of values"
    )
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.add_argument("--out", default=None)
    p_sweep.add_argument("--jobs", type=int, default=1)

    p_verify = sub.add_parser("verify", help="run the acceptance criterion suite")
    p_verify.add_argument("config")
    p_verify.add_argument(
        "--select", default=None, help="comma-separated criterion ids/names"
    )
    p_verify.add_argument("--out", default=None)
    p_verify.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.out, args.jobs)
        if args.command == "sweep":
            values = [float(tok) for tok in args.values.split(",") if tok.strip()]
            if not values:
                raise ConfigError("empty sweep value list")
            return cmd_sweep(args.config, args.param, values, args.seed, args.out, args.jobs)
        if args.command == "verify":
            select = (
                [tok for tok in args.select.split(",")] if args.select else None
            )
            return cmd_verify(args.config, select, args.out, args.jobs)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except OSError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except SolverError as err:
        where = f" at step {err.step_index}" if err.step_index is not None else ""
        print(f"solver failure{where}: {err}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
