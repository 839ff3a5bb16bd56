"""Command-line front end.

``febe solve <config>``       full coupled run
``febe fluid-only <config>``  single fluid solve on the reference surface
``febe check``                built-in verification suite
``febe mesh-info <mesh>``     valence and region report

Exit codes: 0 success, 2 configuration error, 3 solver failure.  The
output directory can be overridden with ``FEBE_OUTPUT_DIR``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from collections import Counter

import numpy as np

from . import bem, output
from .config import ConfigError, RunConfig, format_config, parse_config
from .fsi import (NEWTON_HEADER, TIME_SERIES_HEADER, StepFailure, advance, format_csv,
                  min_gap)
from .mesh import MeshError, Region, extraordinary_vertices, load_quad_mesh, vertex_valences
from .quadrature import global_histogram
from .scenarios import build_scenario, fluid_only
from .shell import NewtonError

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3
OUTPUT_ENV = "FEBE_OUTPUT_DIR"

log = logging.getLogger("febe")


def output_dir(cfg: RunConfig, override=None) -> str:
    path = override or os.environ.get(OUTPUT_ENV) or cfg.output_dir
    os.makedirs(path, exist_ok=True)
    return path


def _load(args) -> RunConfig:
    """Parse the config file; command-line flags take precedence over it."""
    defaults = {"scenario": args.scenario} if args.scenario else {}
    cfg = parse_config(args.config, **defaults)
    overrides = dict(defaults)
    if getattr(args, "n_steps", None) is not None:
        overrides["n_steps"] = args.n_steps
    return cfg.replace(**overrides) if overrides else cfg


def run_solve(cfg: RunConfig, outdir: str, echo=print) -> int:
    """Full coupled run writing logs, snapshots and histogram data to ``outdir``."""
    output.atomic_write(os.path.join(outdir, "config.txt"), format_config(cfg))
    hist = global_histogram()
    hist.reset()
    scn = build_scenario(cfg.scenario, cfg)
    problem = scn.problem()
    tess = output.tessellate(scn.patches, cfg.snapshot_resolution)
    v0 = problem.model.reference_volume

    def snapshot(state):
        if cfg.snapshot_every and state.step % cfg.snapshot_every == 0:
            snap = output.make_snapshot(scn.patches, state.theta, state.traction, tess=tess,
                                        time=state.t, p0=state.p0, zeta=state.zeta,
                                        volume_ratio=problem.model.volume(state.theta) / v0)
            output.write_snapshot(snap, os.path.join(outdir, f"snapshot_{state.step:05d}.vtk"))

    def flush():
        output.atomic_write(os.path.join(outdir, "timeseries.csv"),
                            format_csv(TIME_SERIES_HEADER, rows))
        output.atomic_write(os.path.join(outdir, "newton.csv"),
                            format_csv(NEWTON_HEADER, problem.newton_log))
        output.emit_plot_data(hist, outdir)

    rows = []

    def step_done(state):
        snapshot(state)
        r = rows[-1]
        echo(f"step {state.step:5d}  t={state.t:9.2f}  V={r.volume:.8f}  p0={r.p0:+.6e}  "
             f"gap={r.min_gap:.4e}  subiters={r.subiters}")

    try:
        state = scn.initial_state()
        snapshot(state)
        advance(problem, state, cfg.steps, rows=rows, callback=step_done,
                dump_dir=os.path.join(outdir, "failure"))
    except (StepFailure, NewtonError, bem.FluidAssemblyError) as exc:
        flush()
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    flush()
    return EXIT_OK


def run_fluid_only(cfg: RunConfig, outdir: str, echo=print) -> dict:
    """Single fluid solve; returns and writes a ``key = value`` summary."""
    hist = global_histogram()
    hist.reset()
    scn = build_scenario(cfg.scenario, cfg)
    op, sol = fluid_only(scn)
    X = scn.reference
    snap = output.make_snapshot(scn.patches, X, sol.traction, cfg.snapshot_resolution,
                                zeta=sol.zeta)
    output.write_snapshot(snap, os.path.join(outdir, "fluid_only.vtk"))
    force = sol.total_force(op)
    summary = {
        "scenario": cfg.scenario, "elements": len(scn.patches), "lam": float(cfg.lam),
        "force_x": float(force[0]), "force_y": float(force[1]), "force_z": float(force[2]),
        "max_traction": float(np.abs(snap.traction).max()),
        "max_traction_z": float(np.abs(snap.traction_z).max()),
        "min_gap": float(min_gap(scn.patches, X)), "quad_nonconv": int(op.nonconverged),
        "residual": float(sol.residual),
    }
    text = "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n"
                   for k, v in summary.items())
    output.atomic_write(os.path.join(outdir, "fluid_only.txt"), text)
    output.emit_plot_data(hist, outdir)
    echo(text, end="")
    return summary


def mesh_report(mesh) -> str:
    val = vertex_valences(mesh)
    lines = [f"vertices {mesh.n_vertices}", f"quads {mesh.n_quads}"]
    for reg in Region:
        lines.append(f"region {reg.name.lower()} {int(np.count_nonzero(mesh.region == reg))}")
    lines.append(f"components {int(mesh.components().max()) + 1}")
    for n, c in sorted(Counter(val.tolist()).items()):
        lines.append(f"valence {n} {c}")
    ev = extraordinary_vertices(mesh)
    lines.append(f"extraordinary {len(ev)}")
    lines.append(f"interface_vertices {len(mesh.boundary_curve)}")
    return "\n".join(lines) + "\n"


def build_parser():
    p = argparse.ArgumentParser(prog="febe", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, helptext in (("solve", "full coupled run"),
                           ("fluid-only", "single fluid solve on a scenario")):
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config")
        s.add_argument("--scenario", help="override the scenario key")
        s.add_argument("--output-dir")
        if name == "solve":
            s.add_argument("--n-steps", type=int)
    sub.add_parser("check", help="built-in verification suite")
    m = sub.add_parser("mesh-info", help="valence and region report")
    m.add_argument("mesh")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "check":
        from .checks import run_checks
        return EXIT_OK if all(r.passed for r in run_checks()) else EXIT_SOLVER
    if args.command == "mesh-info":
        try:
            mesh = load_quad_mesh(args.mesh)
        except (OSError, MeshError, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        print(mesh_report(mesh), end="")
        return EXIT_OK
    try:
        cfg = _load(args)
        outdir = output_dir(cfg, args.output_dir)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "solve":
        return run_solve(cfg, outdir)
    try:
        run_fluid_only(cfg, outdir)
    except (bem.FluidAssemblyError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
