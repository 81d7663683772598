"""Command-line front end: ``bf-transport-fem {convergence,simulate} --config c.json``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config, model_params
from .mesh import BoundaryTag, Mesh, MeshError, build_rectangle, build_unit_square, load_mesh
from .postprocess import RateTable, error_norms, export_csv, export_vtk, fit_order, p0_norm, wall_diagnostics
from .scenarios import (
    CHANNEL_HEIGHT,
    CHANNEL_LENGTH,
    VALIDATION_SIDES,
    ManufacturedSolution,
    channel_data,
    channel_params,
    validation_params,
)
from .time_solver import PicardError, Problem, Solver, SolverConfig, SolverError

log = logging.getLogger("bf_transport_fem")

EXIT_OK, EXIT_CONFIG, EXIT_MESH, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4, 5

CHANNEL_SIDES = {
    "left": BoundaryTag.INLET,
    "right": BoundaryTag.OUTLET,
    "bottom": BoundaryTag.WALL,
    "top": BoundaryTag.WALL,
}


def run_convergence(config: RunConfig, out_dir: Path) -> tuple[RateTable, list[int]]:
    """Manufactured-solution study; returns the table and the list of aborted ``n``."""
    table = RateTable()
    failed = []
    for n in config.mesh.n_list():
        start = time.perf_counter()
        # the time step is tied to the mesh size
        params = replace(model_params(validation_params(dt=1.0 / n), config.model), dt=1.0 / n)
        mesh = build_unit_square(n, VALIDATION_SIDES)
        exact = ManufacturedSolution(params)
        problem = Problem(mesh, params, exact.boundary_data(), exact.sources())
        solver = Solver(problem, config.solver)
        state = None
        try:
            for state, report in solver.march():
                pass
        except PicardError as exc:
            log.error("n=%d aborted at step %s: %s", n, exc.step, exc)
            failed.append(n)
            continue
        rep = error_norms(mesh, problem.partition, state, exact, dt=params.dt, h=1.0 / n)
        table.add(rep)
        log.info("n=%d done in %.1fs: %s", n, time.perf_counter() - start,
                 " ".join(f"e_{k}={v:.3e}" for k, v in rep.errors().items()))
    if config.output.csv:
        export_csv(table, out_dir / "convergence.csv")
    return table, failed


@dataclass
class TemporalStudy:
    dts: list[float]
    errors: list[float]  # L4 velocity distance to the reference at t_final
    dt_ref: float
    order: float


def run_temporal_order(
    n: int = 64,
    dts: tuple[float, ...] = (1 / 10, 1 / 20, 1 / 40),
    dt_ref: float = 1 / 160,
    t_final: float = 0.5,
    solver_config: SolverConfig | None = None,
    params_factory=None,
) -> TemporalStudy:
    """Temporal order of the velocity on a fixed mesh against a fine-step reference."""
    mesh = build_unit_square(n, VALIDATION_SIDES)
    final = {}
    for dt in (dt_ref, *dts):
        params = (params_factory or validation_params)(dt=dt, t_final=t_final)
        exact = ManufacturedSolution(params)
        solver = Solver(Problem(mesh, params, exact.boundary_data(), exact.sources()), solver_config)
        for state, _ in solver.march():
            pass
        final[dt] = state.u.reshape(2, -1).T
        log.info("temporal study: dt=%g done", dt)
    errors = [p0_norm(mesh, final[dt] - final[dt_ref], 4.0) for dt in dts]
    return TemporalStudy(list(dts), errors, dt_ref, fit_order(dts, errors))


def _simulation_mesh(config: RunConfig) -> Mesh:
    m = config.mesh
    if m.file is not None:
        return load_mesh(m.file)
    if m.builtin == "unit_square":
        n = m.n_list()[0]
        return build_unit_square(n, VALIDATION_SIDES if config.manufactured else CHANNEL_SIDES)
    return build_rectangle(m.length or CHANNEL_LENGTH, m.height or CHANNEL_HEIGHT, m.nx, m.ny, CHANNEL_SIDES)


def run_simulate(config: RunConfig, out_dir: Path) -> list:
    """Time march with per-step logging, wall diagnostics and VTK output."""
    mesh = _simulation_mesh(config)
    if config.manufactured:
        params = model_params(validation_params(dt=1.0 / 16), config.model)
        exact = ManufacturedSolution(params)
        problem = Problem(mesh, params, exact.boundary_data(), exact.sources())
    else:
        params = model_params(channel_params(), config.model)
        height = float(np.ptp(mesh.vertices[:, 1]))
        problem = Problem(mesh, params, channel_data(params, height, config.model.inlet_peak))
    solver = Solver(problem, config.solver)
    out = config.output
    rows = []
    state = None
    n_steps = params.n_steps
    for step, (state, report) in enumerate(solver.march(), start=1):
        diag = wall_diagnostics(mesh, state)
        log.info(
            "step %d t=%.6g picard=%d update=%.3e wall_max=%.6e interior_mean=%.6e",
            step, state.t, report.iterations, report.update_norms[-1], diag.wall_max, diag.interior_mean,
        )
        rows.append((step, state.t, report.iterations, report.update_norms[-1], report.converged,
                     diag.wall_min, diag.wall_max, diag.wall_mean, diag.interior_mean))
        if out.vtk == "every" and step % out.vtk_interval == 0:
            export_vtk(mesh, problem.partition, state, out_dir / f"state_{step:05d}.vtk")
    if out.vtk in ("final", "every") and state is not None and (out.vtk == "final" or n_steps % out.vtk_interval):
        export_vtk(mesh, problem.partition, state, out_dir / "state_final.vtk")
    if out.csv:
        with (out_dir / "wall_concentration.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "t", "picard_iterations", "update_norm", "converged",
                        "wall_min", "wall_max", "wall_mean", "interior_mean"])
            for r in rows:
                w.writerow([r[0], repr(r[1]), r[2], f"{r[3]:.6e}", int(r[4]), *(f"{v:.10e}" for v in r[5:])])
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bf-transport-fem", description=__doc__)
    parser.add_argument("command", choices=["convergence", "simulate"])
    parser.add_argument("--config", required=True, help="JSON run configuration")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--quiet", action="store_true", help="only report warnings and errors")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config)
        if config.scenario != args.command:
            raise ConfigError(f"config scenario {config.scenario!r} does not match command {args.command!r}")
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except OSError as exc:
        log.error("cannot read configuration: %s", exc)
        return EXIT_IO
    out_dir = Path(args.out or config.output.directory)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "convergence":
            table, failed = run_convergence(config, out_dir)
            if not args.quiet:
                print(table.format())
            return EXIT_SOLVER if failed else EXIT_OK
        run_simulate(config, out_dir)
        return EXIT_OK
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except MeshError as exc:
        log.error("mesh error: %s", exc)
        return EXIT_MESH
    except (PicardError, SolverError) as exc:
        log.error("solver failure: %s", exc)
        return EXIT_SOLVER
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
