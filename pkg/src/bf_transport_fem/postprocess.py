"""Pressure recovery, error norms, convergence rates and file export."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .mesh import BoundaryTag, Mesh, MultiplierPartition
from .quadrature import edge_rule, triangle_rule
from .spaces import DomainError, multiplier_at_edge_points, rt0_divergences, rt0_evaluate, rt0_scales
from .time_solver import DiscreteState


@dataclass(frozen=True, eq=False)
class PressureField:
    """Piecewise affine pressure ``p(x) = offset[m] + slope[m] . x`` on each triangle."""

    mesh: Mesh
    offset: np.ndarray  # (M,)
    slope: np.ndarray  # (M, 2)

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Values at (M, Q, 2) points, one batch per triangle."""
        return self.offset[:, None] + np.einsum("mqd,md->mq", points, self.slope)

    def at_centroids(self) -> np.ndarray:
        return self.offset + np.einsum("md,md->m", self.mesh.centroids, self.slope)


def recover_pressure(mesh: Mesh, sigma: np.ndarray) -> PressureField:
    """``p = -tr(sigma) / 2`` for an RT0 pseudostress given by its two row coefficient vectors."""
    sigma = np.asarray(sigma, dtype=float)
    E = mesh.n_edges
    if sigma.shape != (2 * E,):
        raise ValueError(f"expected {2 * E} pseudostress coefficients, got {sigma.shape}")
    sc = rt0_scales(mesh)
    apex = mesh.vertices[mesh.triangles]  # local basis k is scale * (x - corner k)
    w0 = sigma[:E][mesh.triangle_edges] * sc  # row 0 contributes its x component
    w1 = sigma[E:][mesh.triangle_edges] * sc
    slope = -0.5 * np.column_stack([w0.sum(axis=1), w1.sum(axis=1)])
    offset = 0.5 * (np.einsum("mk,mk->m", w0, apex[:, :, 0]) + np.einsum("mk,mk->m", w1, apex[:, :, 1]))
    return PressureField(mesh, offset, slope)


class ExactSolution(Protocol):
    def sigma(self, x, t): ...
    def div_sigma(self, x, t): ...
    def u(self, x, t): ...
    def p(self, x, t): ...
    def rho(self, x, t): ...
    def div_rho(self, x, t): ...
    def phi(self, x, t): ...
    def lam(self, x, t): ...


@dataclass(frozen=True)
class ErrorReport:
    e_sigma: float
    e_u: float
    e_p: float
    e_rho: float
    e_phi: float
    e_lambda: float
    h: float
    dt: float

    FIELDS = ("sigma", "u", "p", "rho", "phi", "lambda")

    def errors(self) -> dict[str, float]:
        return {f: getattr(self, f"e_{f}") for f in self.FIELDS}


def _lp(values: np.ndarray, weights: np.ndarray, p: float) -> float:
    """``(sum w |v|^p)^(1/p)`` with ``|v|`` the Euclidean norm over trailing axes."""
    mag = np.sqrt(np.sum(values.reshape(*weights.shape, -1) ** 2, axis=-1))
    return float(np.sum(weights * mag**p) ** (1.0 / p))


def lp_norm(mesh: Mesh, func, p: float = 2.0, rule_degree: int = 7) -> float:
    """``L^p`` norm over the mesh of a scalar or vector callable ``func(x)``."""
    rule = triangle_rule(rule_degree)
    pts = rule.map(mesh.vertices[mesh.triangles])
    w = rule.scaled_weights(mesh.areas)
    return _lp(np.asarray(func(pts.reshape(-1, 2)), dtype=float), w, p)


def error_norms(
    mesh: Mesh,
    partition: MultiplierPartition,
    state: DiscreteState,
    exact: ExactSolution,
    dt: float = float("nan"),
    rule_degree: int = 7,
    h: float | None = None,
) -> ErrorReport:
    """Errors of ``state`` against ``exact`` at time ``state.t``.

    Pseudostress and flux use ``||.||_0 + ||div .||_{0,4/3}``, velocity and concentration
    the ``L^4`` norm, pressure ``L^2`` and the multiplier ``L^2`` on the non-inlet boundary.
    ``h`` defaults to the largest triangle diameter.
    """
    t = state.t
    E, M = mesh.n_edges, mesh.n_triangles
    rule = triangle_rule(rule_degree)
    pts = rule.map(mesh.vertices[mesh.triangles])
    w = rule.scaled_weights(mesh.areas)
    flat = pts.reshape(-1, 2)
    divs = rt0_divergences(mesh)

    sig_h = np.stack(
        [rt0_evaluate(mesh, state.sigma[:E], pts), rt0_evaluate(mesh, state.sigma[E:], pts)], axis=2
    )  # (M, Q, 2 rows, 2)
    sig = exact.sigma(flat, t).reshape(M, -1, 2, 2)
    div_sig_h = np.stack(
        [np.sum(state.sigma[:E][mesh.triangle_edges] * divs, axis=1),
         np.sum(state.sigma[E:][mesh.triangle_edges] * divs, axis=1)], axis=1,
    )
    div_sig = exact.div_sigma(flat, t).reshape(M, -1, 2)
    e_sigma = _lp(sig - sig_h, w, 2.0) + _lp(div_sig - div_sig_h[:, None, :], w, 4.0 / 3.0)

    e_u = _lp(exact.u(flat, t).reshape(M, -1, 2) - state.velocity()[:, None, :], w, 4.0)
    e_p = _lp(exact.p(flat, t).reshape(M, -1) - recover_pressure(mesh, state.sigma)(pts), w, 2.0)

    rho_h = rt0_evaluate(mesh, state.rho, pts)
    div_rho_h = np.sum(state.rho[mesh.triangle_edges] * divs, axis=1)
    e_rho = _lp(exact.rho(flat, t).reshape(M, -1, 2) - rho_h, w, 2.0) + _lp(
        exact.div_rho(flat, t).reshape(M, -1) - div_rho_h[:, None], w, 4.0 / 3.0
    )
    e_phi = _lp(exact.phi(flat, t).reshape(M, -1) - state.phi[:, None], w, 4.0)
    return ErrorReport(
        e_sigma=e_sigma, e_u=e_u, e_p=e_p, e_rho=e_rho, e_phi=e_phi,
        e_lambda=multiplier_error(mesh, partition, state.lam, lambda x: exact.lam(x, t), rule_degree),
        h=mesh.h if h is None else h, dt=dt,
    )


def multiplier_error(mesh: Mesh, partition: MultiplierPartition, lam: np.ndarray, exact_lam, degree: int = 7) -> float:
    """``L^2`` distance on the non-inlet boundary between the discrete and exact multiplier."""
    erule = edge_rule(degree)
    edges = partition.fine_edges
    if not len(edges):
        return 0.0
    a = mesh.vertices[mesh.edges[edges, 0]]
    b = mesh.vertices[mesh.edges[edges, 1]]
    pts = a[:, None, :] + erule.points[None, :, None] * (b - a)[:, None, :]
    wts = mesh.edge_lengths[edges][:, None] * erule.weights[None, :]
    vals = multiplier_at_edge_points(partition, lam, erule.points)
    diff = exact_lam(pts.reshape(-1, 2)).reshape(vals.shape) - vals
    return float(np.sqrt(np.sum(wts * diff**2)))


def rate(e_coarse: float, e_fine: float, h_coarse: float, h_fine: float) -> float:
    """Observed order ``log(e_c / e_f) / log(h_c / h_f)``."""
    if min(e_coarse, e_fine, h_coarse, h_fine) <= 0:
        raise DomainError("errors and mesh sizes must be positive")
    if h_coarse == h_fine:
        raise DomainError("mesh sizes must differ")
    return math.log(e_coarse / e_fine) / math.log(h_coarse / h_fine)


def fit_order(steps, errors) -> float:
    """Least-squares slope of ``log(error)`` against ``log(step)``."""
    steps, errors = np.asarray(steps, float), np.asarray(errors, float)
    if len(steps) < 2 or np.any(steps <= 0) or np.any(errors <= 0):
        raise DomainError("need at least two positive (step, error) pairs")
    if np.ptp(steps) == 0:
        raise DomainError("steps must differ")
    return float(np.polyfit(np.log(steps), np.log(errors), 1)[0])


def p0_norm(mesh: Mesh, values: np.ndarray, p: float = 2.0) -> float:
    """``L^p`` norm of a piecewise-constant field given per triangle, shape (M,) or (M, k)."""
    v = np.asarray(values, float).reshape(mesh.n_triangles, -1)
    mag = np.sqrt((v**2).sum(axis=1))
    return float((mesh.areas @ mag**p) ** (1.0 / p))


CSV_HEADER = [
    "h", "e_sigma", "r_sigma", "e_u", "r_u", "e_p", "r_p",
    "e_rho", "r_rho", "e_phi", "r_phi", "e_lambda", "r_lambda",
]


@dataclass
class RateTable:
    reports: list[ErrorReport] = field(default_factory=list)

    def add(self, report: ErrorReport) -> None:
        self.reports.append(report)

    def rates(self) -> list[dict[str, float | None]]:
        """Per row, the rate against the previous row (``None`` in the first row)."""
        out: list[dict[str, float | None]] = []
        for k, r in enumerate(self.reports):
            if k == 0:
                out.append({f: None for f in ErrorReport.FIELDS})
                continue
            prev = self.reports[k - 1]
            row = {}
            for f, e in r.errors().items():
                e0 = prev.errors()[f]
                row[f] = rate(e0, e, prev.h, r.h) if e0 > 0 and e > 0 else float("nan")
            out.append(row)
        return out

    def rows(self) -> list[list[str]]:
        lines = []
        for r, rr in zip(self.reports, self.rates()):
            line = [repr(r.h)]
            for f in ErrorReport.FIELDS:
                line.append(f"{r.errors()[f]:.6e}")
                line.append("" if rr[f] is None else f"{rr[f]:.4f}")
            lines.append(line)
        return lines

    def format(self) -> str:
        head = f"{'h':>10}" + "".join(f"{'e_' + f:>12}{'r':>7}" for f in ErrorReport.FIELDS)
        body = []
        for r, rr in zip(self.reports, self.rates()):
            s = f"{r.h:10.5f}"
            for f in ErrorReport.FIELDS:
                s += f"{r.errors()[f]:12.4e}" + ("" if rr[f] is None else f"{rr[f]:7.3f}").rjust(7)
            body.append(s)
        return "\n".join([head, *body])


def export_csv(table: RateTable, path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        writer.writerows(table.rows())
    return path


def read_csv(path) -> list[dict[str, float | None]]:
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != CSV_HEADER:
            raise ValueError(f"unexpected CSV header {reader.fieldnames}")
        return [{k: (float(v) if v != "" else None) for k, v in row.items()} for row in reader]


def export_vtk(mesh: Mesh, partition: MultiplierPartition, state: DiscreteState, path) -> tuple[Path, Path]:
    """Write the cell fields to ``path`` and the multiplier polyline next to it.

    Returns the paths of the volume file and of the ``*_multiplier.vtk`` boundary file.
    """
    path = Path(path)
    vel = state.velocity()
    pres = recover_pressure(mesh, state.sigma).at_centroids()
    lines = [
        "# vtk DataFile Version 3.0",
        f"fields at t={state.t:.10g}",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices]
    lines.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    lines.append(f"CELL_TYPES {mesh.n_triangles}")
    lines += ["5"] * mesh.n_triangles
    lines.append(f"CELL_DATA {mesh.n_triangles}")
    for name, arr in (
        ("velocity_x", vel[:, 0]), ("velocity_y", vel[:, 1]), ("pressure", pres), ("concentration", state.phi)
    ):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [f"{v:.17g}" for v in arr]
    path.write_text("\n".join(lines) + "\n")

    bpath = path.with_name(path.stem + "_multiplier.vtk")
    verts = np.unique(mesh.edges[partition.fine_edges].ravel()) if len(partition.fine_edges) else np.zeros(0, int)
    local = {int(v): k for k, v in enumerate(verts)}
    # nodal values from the two fine-edge endpoints
    ends = multiplier_at_edge_points(partition, state.lam, np.array([0.0, 1.0]))
    nodal = np.zeros(len(verts))
    for f, e in enumerate(partition.fine_edges):
        a, b = mesh.edges[e]
        nodal[local[int(a)]] = ends[f, 0]
        nodal[local[int(b)]] = ends[f, 1]
    blines = [
        "# vtk DataFile Version 3.0",
        f"multiplier at t={state.t:.10g}",
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {len(verts)} double",
    ]
    blines += [f"{x:.17g} {y:.17g} 0" for x, y in mesh.vertices[verts]]
    F = len(partition.fine_edges)
    blines.append(f"LINES {F} {3 * F}")
    blines += [f"2 {local[int(a)]} {local[int(b)]}" for a, b in mesh.edges[partition.fine_edges]]
    blines += [f"POINT_DATA {len(verts)}", "SCALARS multiplier double 1", "LOOKUP_TABLE default"]
    blines += [f"{v:.17g}" for v in nodal]
    bpath.write_text("\n".join(blines) + "\n")
    return path, bpath


@dataclass(frozen=True)
class WallDiagnostics:
    """Concentration statistics of wall-adjacent cells against the interior."""

    t: float
    wall_min: float
    wall_max: float
    wall_mean: float
    interior_mean: float


def wall_cells(mesh: Mesh) -> np.ndarray:
    """Triangles that own a wall edge."""
    edges = mesh.tagged_edges(BoundaryTag.WALL)
    owners = mesh.edge_triangles[edges, 0]
    return np.unique(owners)


def wall_diagnostics(mesh: Mesh, state: DiscreteState) -> WallDiagnostics:
    cells = wall_cells(mesh)
    mask = np.zeros(mesh.n_triangles, dtype=bool)
    mask[cells] = True
    a = mesh.areas
    phi = state.phi
    interior = ~mask
    imean = float(np.sum(a[interior] * phi[interior]) / np.sum(a[interior])) if interior.any() else float("nan")
    wphi = phi[mask]
    return WallDiagnostics(
        t=state.t,
        wall_min=float(wphi.min()) if wphi.size else float("nan"),
        wall_max=float(wphi.max()) if wphi.size else float("nan"),
        wall_mean=float(np.sum(a[mask] * wphi) / np.sum(a[mask])) if wphi.size else float("nan"),
        interior_mean=imean,
    )


ExactCallable = Callable[[np.ndarray, float], np.ndarray]
