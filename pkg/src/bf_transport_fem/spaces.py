"""Lowest-order discrete spaces and their degree-of-freedom layout.

Fluxes (each pseudostress row and the concentration flux) live in RT0 with one dof per
edge; the global basis function of edge ``e`` has unit normal component along the
global edge normal.  Velocity and concentration are piecewise constant.  The multiplier
is continuous and piecewise linear on the macro edges of the non-inlet boundary and
vanishes where that boundary meets the inlet.

Flow numbering: pseudostress row ``i`` on edge ``e`` -> ``i * E + e``; velocity component
``i`` on triangle ``t`` -> ``2 E + i * M + t``.  Transport numbering: flux ``e``, then
concentration ``E + t``, then multiplier ``E + M + k``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import BoundaryTag, Mesh, MultiplierPartition
from .quadrature import EdgeQuadratureRule, edge_rule


class GeometryError(ValueError):
    pass


class DomainError(ValueError):
    pass


@dataclass(frozen=True)
class RT0Function:
    """Local RT0 shape function ``scale * (x - apex)``."""

    scale: float
    apex: np.ndarray
    divergence: float

    def __call__(self, x) -> np.ndarray:
        return self.scale * (np.asarray(x, dtype=float) - self.apex)


def rt0_basis(corners, local_edge: int, sign: int = 1) -> RT0Function:
    """Shape function of the edge opposite corner ``local_edge``.

    Its normal component is ``sign`` on that edge (outward normal) and zero on the
    other two edges; its divergence is ``sign * |e| / |T|``.
    """
    corners = np.asarray(corners, dtype=float)
    a, b, c = corners
    area = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    h = max(np.linalg.norm(b - a), np.linalg.norm(c - b), np.linalg.norm(a - c))
    if abs(area) < 1e-14 * h * h:
        raise GeometryError(f"degenerate triangle (area {area:.3e})")
    p1, p2 = corners[(local_edge + 1) % 3], corners[(local_edge + 2) % 3]
    length = float(np.linalg.norm(p2 - p1))
    scale = sign * length / (2.0 * abs(area))
    return RT0Function(scale, corners[local_edge].copy(), 2.0 * scale)


def rt0_scales(mesh: Mesh) -> np.ndarray:
    """(M, 3) factors ``s |e| / (2 |T|)`` of the global basis restricted to each triangle."""
    lengths = mesh.edge_lengths[mesh.triangle_edges]
    return mesh.triangle_signs * lengths / (2.0 * mesh.areas[:, None])


def rt0_values(mesh: Mesh, points: np.ndarray) -> np.ndarray:
    """Global RT0 basis of each local edge at physical ``points`` (M, Q, 2) -> (M, 3, Q, 2)."""
    corners = mesh.vertices[mesh.triangles]
    rel = points[:, None, :, :] - corners[:, :, None, :]
    return rt0_scales(mesh)[:, :, None, None] * rel


def rt0_divergences(mesh: Mesh) -> np.ndarray:
    """(M, 3) constant divergence of each local basis function."""
    return 2.0 * rt0_scales(mesh)


def rt0_evaluate(mesh: Mesh, coefficients: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Evaluate an RT0 field given per-edge ``coefficients`` at (M, Q, 2) points."""
    basis = rt0_values(mesh, points)
    c = coefficients[mesh.triangle_edges]
    return np.einsum("mk,mkqd->mqd", c, basis)


def rt0_divergence(mesh: Mesh, coefficients: np.ndarray) -> np.ndarray:
    """(M,) elementwise divergence of an RT0 field."""
    return np.einsum("mk,mk->m", coefficients[mesh.triangle_edges], rt0_divergences(mesh))


def rt0_interpolate(mesh: Mesh, func, rule: EdgeQuadratureRule | None = None) -> np.ndarray:
    """Canonical RT0 interpolant: mean normal component of ``func(x)`` (n, 2) on each edge."""
    rule = rule or edge_rule(4)
    a = mesh.vertices[mesh.edges[:, 0]]
    b = mesh.vertices[mesh.edges[:, 1]]
    pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
    vals = np.asarray(func(pts.reshape(-1, 2)), dtype=float).reshape(mesh.n_edges, -1, 2)
    return np.einsum("q,eqd,ed->e", rule.weights, vals, mesh.edge_normals)


def dev(tau: np.ndarray) -> np.ndarray:
    """Deviatoric part ``tau - tr(tau) I / 2`` of (..., 2, 2) tensors."""
    tau = np.asarray(tau, dtype=float)
    half = 0.5 * (tau[..., 0, 0] + tau[..., 1, 1])
    out = tau.copy()
    out[..., 0, 0] -= half
    out[..., 1, 1] -= half
    return out


def trace(tau: np.ndarray) -> np.ndarray:
    tau = np.asarray(tau, dtype=float)
    return tau[..., 0, 0] + tau[..., 1, 1]


@dataclass(frozen=True, eq=False)
class DofLayout:
    n_edges: int
    n_triangles: int
    n_macro_vertices: int
    n_multipliers: int
    outlet_edges: np.ndarray
    constrained_sigma: np.ndarray  # full flow indices pinned by tau n = 0 on the outlet
    free_flow: np.ndarray
    trace_constraint: bool  # no outlet: the pseudostress trace mode is fixed by a mean condition

    @property
    def sigma(self) -> slice:
        return slice(0, 2 * self.n_edges)

    @property
    def u(self) -> slice:
        return slice(2 * self.n_edges, 2 * self.n_edges + 2 * self.n_triangles)

    @property
    def n_flow(self) -> int:
        """Full flow vector length (constrained dofs included, trace multiplier excluded)."""
        return 2 * self.n_edges + 2 * self.n_triangles

    @property
    def n_flow_unknowns(self) -> int:
        return self.n_flow - len(self.constrained_sigma) + int(self.trace_constraint)

    @property
    def rho(self) -> slice:
        return slice(0, self.n_edges)

    @property
    def phi(self) -> slice:
        return slice(self.n_edges, self.n_edges + self.n_triangles)

    @property
    def lam(self) -> slice:
        start = self.n_edges + self.n_triangles
        return slice(start, start + self.n_multipliers)

    @property
    def n_transport(self) -> int:
        return self.n_edges + self.n_triangles + self.n_multipliers

    @property
    def n_sigma_free(self) -> int:
        return 2 * self.n_edges - len(self.constrained_sigma)


def build_dof_layout(mesh: Mesh, partition: MultiplierPartition) -> DofLayout:
    outlet = mesh.tagged_edges(BoundaryTag.OUTLET)
    constrained = np.sort(np.concatenate([outlet, outlet + mesh.n_edges])).astype(np.int64)
    mask = np.ones(2 * mesh.n_edges + 2 * mesh.n_triangles, dtype=bool)
    mask[constrained] = False
    return DofLayout(
        n_edges=mesh.n_edges,
        n_triangles=mesh.n_triangles,
        n_macro_vertices=len(partition.macro_vertices),
        n_multipliers=len(partition.free_vertices),
        outlet_edges=outlet,
        constrained_sigma=constrained,
        free_flow=np.flatnonzero(mask),
        trace_constraint=len(outlet) == 0,
    )


# ---- multiplier space ----------------------------------------------------------


def fine_edge_hats(partition: MultiplierPartition) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Linear pieces of the macro hat functions on each fine edge.

    Returns ``(edges, dofs, values)``: ``dofs`` (F, 2) are the multiplier dofs (or -1) of
    the macro edge's start and end vertex, and ``values`` (F, 2, 2) holds
    ``values[f, j, k]``, the value of hat ``j`` at endpoint ``k`` of fine edge ``f``
    (endpoints in global edge orientation).
    """
    mv = partition.macro_edge_vertices[partition.fine_macro]  # (F, 2)
    dofs = partition.vertex_dof[mv]
    t = partition.fine_params  # (F, 2) arclength parameters at the endpoints
    values = np.stack([1.0 - t, t], axis=1)
    return partition.fine_edges, dofs, values


def _hat_coefficients(dofs: np.ndarray, coefficients) -> np.ndarray:
    padded = np.append(np.asarray(coefficients, dtype=float), 0.0)
    return padded[np.where(dofs >= 0, dofs, len(padded) - 1)]


def _locate_on_partition(mesh: Mesh, partition: MultiplierPartition, point, tol: float):
    x = np.asarray(point, dtype=float)
    for f, e in enumerate(partition.fine_edges):
        a, b = mesh.edges[e]
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        d = pb - pa
        L2 = d @ d
        s = (x - pa) @ d / L2
        dist = abs((x - pa)[0] * d[1] - (x - pa)[1] * d[0]) / np.sqrt(L2)
        if -tol <= s <= 1 + tol and dist <= tol * np.sqrt(L2):
            return f, min(max(s, 0.0), 1.0)
    return None


def eval_multiplier(
    mesh: Mesh, partition: MultiplierPartition, coefficients, point, tol: float = 1e-10
) -> float:
    """Value of the multiplier with the given dof ``coefficients`` at a boundary point."""
    coefficients = np.asarray(coefficients, dtype=float)
    if coefficients.shape != (len(partition.free_vertices),):
        raise ValueError(
            f"expected {len(partition.free_vertices)} multiplier coefficients, got {coefficients.shape}"
        )
    hit = _locate_on_partition(mesh, partition, point, tol)
    if hit is None:
        raise DomainError(f"point {tuple(np.asarray(point))} is not on the non-inlet boundary")
    f, s = hit
    _, dofs, values = fine_edge_hats(partition)
    at_ends = _hat_coefficients(dofs, coefficients)[f] @ values[f]  # value at the two fine-edge endpoints
    return float((1.0 - s) * at_ends[0] + s * at_ends[1])


def multiplier_at_edge_points(
    partition: MultiplierPartition, coefficients: np.ndarray, s: np.ndarray
) -> np.ndarray:
    """Multiplier values on every fine edge at edge parameters ``s`` -> (F, len(s))."""
    _, dofs, values = fine_edge_hats(partition)
    ends = np.einsum("fj,fjk->fk", _hat_coefficients(dofs, coefficients), values)
    return ends[:, :1] * (1.0 - s)[None, :] + ends[:, 1:] * s[None, :]
