"""Assembly of the variational forms of the mixed flow/transport scheme.

Every function takes an :class:`AssemblyContext` and returns a block in block-local
numbering (see :mod:`bf_transport_fem.spaces`): pseudostress ``2E``, velocity ``2M``,
flux ``E``, concentration ``M``, multiplier ``L``.  Rows index test functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from .mesh import BoundaryTag, Mesh, MultiplierPartition
from .quadrature import EdgeQuadratureRule, QuadratureRule, edge_rule, triangle_rule
from .spaces import (
    DofLayout,
    build_dof_layout,
    fine_edge_hats,
    multiplier_at_edge_points,
    rt0_divergences,
    rt0_values,
)


class DataError(ValueError):
    """A user-supplied callable failed or returned non-finite values."""

    def __init__(self, message: str, point=None):
        super().__init__(message)
        self.point = point


@dataclass(frozen=True)
class ModelParams:
    nu: float
    kappa: float
    forch: float
    power: float
    a0: float
    a1: float
    a2: float
    atilde0: float
    phi_in: float
    dt: float
    t_final: float

    def __post_init__(self):
        for name in ("nu", "kappa", "dt", "t_final"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)!r}")
        if self.forch < 0:
            raise ValueError(f"forch must be non-negative, got {self.forch!r}")
        if not 3.0 <= self.power <= 4.0:
            raise ValueError(f"power must lie in [3, 4], got {self.power!r}")

    @classmethod
    def derived(cls, *, a0: float, a1: float, phi_in: float, **kw) -> "ModelParams":
        """Fill in ``a2 = a0 - a1 phi_in`` and ``atilde0 = a0 phi_in``."""
        return cls(a0=a0, a1=a1, a2=a0 - a1 * phi_in, atilde0=a0 * phi_in, phi_in=phi_in, **kw)

    @classmethod
    def from_membrane_constants(
        cls, *, area: float, delta_p: float, ions: float, gas_constant: float,
        temperature: float, phi_in: float, **kw,
    ) -> "ModelParams":
        """Fold the raw membrane constants into ``a0``, ``a1``."""
        a1 = area * ions * gas_constant * temperature
        a0 = area * delta_p - a1 * phi_in
        return cls.derived(a0=a0, a1=a1, phi_in=phi_in, **kw)

    @property
    def n_steps(self) -> int:
        return max(1, int(np.ceil(self.t_final / self.dt - 1e-9)))


VectorField = Callable[..., np.ndarray]


@dataclass
class BoundaryData:
    """Velocity datum on inlet and wall plus initial fields.

    ``g(x, t, normal, tag)`` returns (n, 2) values at boundary points ``x`` with outward
    ``normal``; ``u0(x)`` -> (n, 2), ``phi0(x)`` -> (n,).
    """

    g: VectorField
    u0: VectorField
    phi0: VectorField


@dataclass
class Sources:
    """Optional extra data; all ``None`` for the physical model.

    ``momentum(x, t)`` (n, 2) and ``transport(x, t)`` (n,) are volume loads;
    ``boundary_flux(x, t, normal, tag)`` (n,) is added to the multiplier equation on the
    non-inlet boundary; ``outlet_traction(x, t, normal)`` (n, 2) prescribes the
    pseudostress normal trace on the outlet instead of zero.
    """

    momentum: Optional[VectorField] = None
    transport: Optional[VectorField] = None
    boundary_flux: Optional[VectorField] = None
    outlet_traction: Optional[VectorField] = None


def membrane_boundary_data(params: ModelParams, u_in, u0=None, phi0=None) -> BoundaryData:
    """``g = u_in`` on the inlet and ``a0 n`` on the wall; zero initial fields by default."""

    def g(x, t, normal, tag):
        if tag is BoundaryTag.INLET:
            return u_in(x, t)
        return params.a0 * normal

    zero_vec = lambda x: np.zeros((len(x), 2))  # noqa: E731
    zero = lambda x: np.zeros(len(x))  # noqa: E731
    return BoundaryData(g=g, u0=u0 or zero_vec, phi0=phi0 or zero)


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    blocks: dict[str, slice]

    def __post_init__(self):
        n = self.matrix.shape[0]
        if self.matrix.shape != (n, n) or self.rhs.shape != (n,):
            raise ValueError("system matrix must be square and match the rhs length")


def evaluate(func, shape_tail: tuple[int, ...], x: np.ndarray, *args) -> np.ndarray:
    """Call ``func(x, *args)`` on a batch of points and validate the result."""
    n = len(x)
    try:
        out = np.asarray(func(x, *args), dtype=float)
        out = np.broadcast_to(out, (n, *shape_tail)).copy()
    except Exception as exc:
        for k in range(n):
            try:
                np.asarray(func(x[k : k + 1], *args), dtype=float)
            except Exception:
                raise DataError(f"data evaluation failed at point {tuple(x[k])}: {exc}", x[k]) from exc
        raise DataError(f"data evaluation failed: {exc}") from exc
    bad = ~np.isfinite(out.reshape(n, -1)).all(axis=1)
    if bad.any():
        k = int(np.flatnonzero(bad)[0])
        raise DataError(f"non-finite data value at point {tuple(x[k])}", x[k])
    return out


@dataclass(eq=False)
class AssemblyContext:
    mesh: Mesh
    partition: MultiplierPartition
    params: ModelParams
    layout: DofLayout = None
    rule: QuadratureRule = field(default_factory=lambda: triangle_rule(4))
    erule: EdgeQuadratureRule = field(default_factory=lambda: edge_rule(3))

    def __post_init__(self):
        if self.layout is None:
            self.layout = build_dof_layout(self.mesh, self.partition)

    @property
    def E(self) -> int:
        return self.mesh.n_edges

    @property
    def M(self) -> int:
        return self.mesh.n_triangles

    @property
    def L(self) -> int:
        return self.layout.n_multipliers

    @cached_property
    def qpoints(self) -> np.ndarray:
        return self.rule.map(self.mesh.vertices[self.mesh.triangles])

    @cached_property
    def qweights(self) -> np.ndarray:
        return self.rule.scaled_weights(self.mesh.areas)

    @cached_property
    def basis(self) -> np.ndarray:
        """(M, 3, Q, 2) RT0 basis at quadrature points."""
        return rt0_values(self.mesh, self.qpoints)

    @cached_property
    def divs(self) -> np.ndarray:
        return rt0_divergences(self.mesh)

    @cached_property
    def basis_integrals(self) -> np.ndarray:
        """(M, 3, 2) integrals of each local basis function."""
        return np.einsum("mq,mkqd->mkd", self.qweights, self.basis)

    @cached_property
    def second_moments(self) -> np.ndarray:
        """(M, 3, 3, 2, 2) integrals of psi_k[d] psi_l[e], symmetric to the last bit."""
        G = np.einsum("mq,mkqd,mlqe->mklde", self.qweights, self.basis, self.basis)
        return 0.5 * (G + G.transpose(0, 2, 1, 4, 3))

    @cached_property
    def hats(self):
        return fine_edge_hats(self.partition)

    @cached_property
    def fine_tags(self) -> list[BoundaryTag]:
        tag = self.mesh.edge_tag
        return [tag[int(e)] for e in self.partition.fine_edges]

    @cached_property
    def fine_wall(self) -> np.ndarray:
        return np.array([t is BoundaryTag.WALL for t in self.fine_tags], dtype=bool)

    @cached_property
    def outward_sign(self) -> np.ndarray:
        """(E,) sign with psi_e . n_out = sign on boundary edges, 0 inside."""
        s = np.zeros(self.E, dtype=np.int64)
        s[self.mesh.boundary_edges] = self.mesh.boundary_edge_sign
        return s

    def edge_points(self, edges: np.ndarray, rule: EdgeQuadratureRule | None = None):
        """Quadrature points (F, Q, 2), weights scaled by length (F, Q), outward normals (F, 2)."""
        rule = rule or self.erule
        a = self.mesh.vertices[self.mesh.edges[edges, 0]]
        b = self.mesh.vertices[self.mesh.edges[edges, 1]]
        pts = a[:, None, :] + rule.points[None, :, None] * (b - a)[:, None, :]
        wts = self.mesh.edge_lengths[edges][:, None] * rule.weights[None, :]
        return pts, wts, self.mesh.outward_normals(edges)


def _velocity(z, M: int) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape == (2 * M,):
        return z.reshape(2, M).T
    if z.shape == (M, 2):
        return z
    raise ValueError(f"velocity iterate must have shape ({2 * M},) or ({M}, 2), got {z.shape}")


def _coo(rows, cols, vals, shape) -> sp.csr_matrix:
    return sp.coo_matrix(
        (np.ravel(vals), (np.ravel(rows), np.ravel(cols))), shape=shape
    ).tocsr()


def _row_index(ctx: AssemblyContext):
    """(M, 2, 3) pseudostress dof of row i on local edge k."""
    te = ctx.mesh.triangle_edges
    return np.stack([te, te + ctx.E], axis=1)


# ---- flow ---------------------------------------------------------------------


def assemble_AF(ctx: AssemblyContext) -> sp.csr_matrix:
    """(1/nu) int dev(zeta) : dev(tau)."""
    G = ctx.second_moments
    dot = G[..., 0, 0] + G[..., 1, 1]  # (M, 3, 3)
    eye = np.eye(2)
    # local[m, i, k, j, l]
    local = eye[None, :, None, :, None] * dot[:, None, :, None, :] - 0.5 * np.einsum(
        "mklij->mikjl", G
    )
    local /= ctx.params.nu
    idx = _row_index(ctx)
    rows = np.broadcast_to(idx[:, :, :, None, None], local.shape)
    cols = np.broadcast_to(idx[:, None, None, :, :], local.shape)
    return _coo(rows, cols, local, (2 * ctx.E, 2 * ctx.E))


def assemble_BF(ctx: AssemblyContext) -> sp.csr_matrix:
    """int v . div(tau); rows velocity, columns pseudostress."""
    M = ctx.M
    vals = ctx.divs * ctx.mesh.areas[:, None]  # s |e|
    idx = _row_index(ctx)
    rows = np.arange(M)[:, None, None] + M * np.arange(2)[None, :, None]
    rows = np.broadcast_to(rows, idx.shape)
    return _coo(rows, idx, np.broadcast_to(vals[:, None, :], idx.shape), (2 * M, 2 * ctx.E))


def assemble_O1F(ctx: AssemblyContext, z) -> sp.csr_matrix:
    """(1/nu) int (dev(tau) z) . v with z piecewise constant; rows velocity."""
    M = ctx.M
    z = _velocity(z, M)
    I = ctx.basis_integrals  # (M, 3, 2)
    Iz = np.einsum("mkd,md->mk", I, z)
    # local[m, j, i, k]: test component j, pseudostress row i, local edge k
    eye = np.eye(2)
    local = eye[None, :, :, None] * Iz[:, None, None, :] - 0.5 * np.einsum(
        "mki,mj->mjik", I, z
    )
    local /= ctx.params.nu
    idx = _row_index(ctx)  # (M, 2, 3)
    rows = np.broadcast_to((np.arange(M)[:, None] + M * np.arange(2)[None, :])[:, :, None, None], local.shape)
    cols = np.broadcast_to(idx[:, None, :, :], local.shape)
    return _coo(rows, cols, local, (2 * M, 2 * ctx.E))


def assemble_O2F(ctx: AssemblyContext, z) -> sp.csr_matrix:
    """F int |z|^(p-2) w . v, diagonal for piecewise constants."""
    z = _velocity(z, ctx.M)
    p = ctx.params
    d = p.forch * np.hypot(z[:, 0], z[:, 1]) ** (p.power - 2.0) * ctx.mesh.areas
    return sp.diags(np.concatenate([d, d])).tocsr()


def assemble_trace_functional(ctx: AssemblyContext) -> np.ndarray:
    """int tr(tau) for each pseudostress basis function."""
    I = ctx.basis_integrals
    out = np.zeros(2 * ctx.E)
    np.add.at(out, ctx.mesh.triangle_edges, I[:, :, 0])
    np.add.at(out, ctx.mesh.triangle_edges + ctx.E, I[:, :, 1])
    return out


def assemble_FF(ctx: AssemblyContext, data: BoundaryData, chi, t: float) -> np.ndarray:
    """<tau n, g + g^chi> over inlet and wall, with g^chi = a1 chi n on the wall."""
    mesh = ctx.mesh
    out = np.zeros(2 * ctx.E)
    chi = np.zeros(ctx.L) if chi is None else np.asarray(chi, dtype=float)
    chi_vals = multiplier_at_edge_points(ctx.partition, chi, ctx.erule.points)  # (F, Q)
    fine_row = {int(e): f for f, e in enumerate(ctx.partition.fine_edges)}
    for tag in (BoundaryTag.INLET, BoundaryTag.WALL):
        edges = mesh.tagged_edges(tag)
        if not len(edges):
            continue
        pts, wts, normals = ctx.edge_points(edges)
        nq = pts.shape[1]
        nrm = np.repeat(normals, nq, axis=0)
        vals = evaluate(data.g, (2,), pts.reshape(-1, 2), t, nrm, tag).reshape(len(edges), nq, 2)
        if tag is BoundaryTag.WALL:
            cv = chi_vals[[fine_row[int(e)] for e in edges]]
            vals = vals + ctx.params.a1 * cv[:, :, None] * normals[:, None, :]
        integral = np.einsum("fq,fqd->fd", wts, vals) * ctx.outward_sign[edges][:, None]
        out[edges] += integral[:, 0]
        out[edges + ctx.E] += integral[:, 1]
    return out


def outlet_sigma_values(ctx: AssemblyContext, traction, t: float) -> np.ndarray:
    """Values of the constrained pseudostress dofs reproducing the mean outlet traction."""
    lay = ctx.layout
    if traction is None or not len(lay.outlet_edges):
        return np.zeros(len(lay.constrained_sigma))
    edges = lay.outlet_edges
    pts, wts, normals = ctx.edge_points(edges)
    nq = pts.shape[1]
    vals = evaluate(traction, (2,), pts.reshape(-1, 2), t, np.repeat(normals, nq, axis=0))
    mean = np.einsum("fq,fqd->fd", wts, vals.reshape(len(edges), nq, 2))
    mean /= ctx.mesh.edge_lengths[edges][:, None]
    full = np.zeros(2 * ctx.E)
    full[edges] = ctx.outward_sign[edges] * mean[:, 0]
    full[edges + ctx.E] = ctx.outward_sign[edges] * mean[:, 1]
    return full[lay.constrained_sigma]


# ---- transport -----------------------------------------------------------------


def assemble_AC(ctx: AssemblyContext) -> sp.csr_matrix:
    """(1/kappa) int xi . eta."""
    G = ctx.second_moments
    local = (G[..., 0, 0] + G[..., 1, 1]) / ctx.params.kappa
    te = ctx.mesh.triangle_edges
    rows = np.broadcast_to(te[:, :, None], local.shape)
    cols = np.broadcast_to(te[:, None, :], local.shape)
    return _coo(rows, cols, local, (ctx.E, ctx.E))


def assemble_O1C(ctx: AssemblyContext, z) -> sp.csr_matrix:
    """(1/kappa) int (eta . z) psi; rows concentration, columns flux."""
    z = _velocity(z, ctx.M)
    local = np.einsum("mkd,md->mk", ctx.basis_integrals, z) / ctx.params.kappa
    te = ctx.mesh.triangle_edges
    rows = np.broadcast_to(np.arange(ctx.M)[:, None], te.shape)
    return _coo(rows, te, local, (ctx.M, ctx.E))


def _hat_edge_integrals(ctx: AssemblyContext, weight: np.ndarray | None = None) -> np.ndarray:
    """(F, 2) integrals of weight * hat_j over each fine edge (weight at edge points)."""
    edges, _, values = ctx.hats
    s = ctx.erule.points
    lin = values[:, :, :1] * (1.0 - s)[None, None, :] + values[:, :, 1:] * s[None, None, :]
    w = ctx.mesh.edge_lengths[edges][:, None] * ctx.erule.weights[None, :]
    if weight is not None:
        w = w * weight
    return np.einsum("fq,fjq->fj", w, lin)


def assemble_BC(ctx: AssemblyContext) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Volume part int psi div(eta) (M x E) and boundary part <eta . n, xi> (L x E)."""
    te = ctx.mesh.triangle_edges
    vol_vals = ctx.divs * ctx.mesh.areas[:, None]
    rows = np.broadcast_to(np.arange(ctx.M)[:, None], te.shape)
    vol = _coo(rows, te, vol_vals, (ctx.M, ctx.E))

    edges, dofs, _ = ctx.hats
    ints = _hat_edge_integrals(ctx) * ctx.outward_sign[edges][:, None]
    keep = dofs >= 0
    cols = np.broadcast_to(edges[:, None], dofs.shape)
    bnd = _coo(dofs[keep], cols[keep], ints[keep], (ctx.L, ctx.E))
    return vol, bnd


def _wall_mass(ctx: AssemblyContext, weight_coeffs=None) -> sp.csr_matrix:
    edges, dofs, values = ctx.hats
    wall = ctx.fine_wall
    if ctx.L == 0 or not wall.any():
        return sp.csr_matrix((ctx.L, ctx.L))
    s = ctx.erule.points
    lin = values[:, :, :1] * (1.0 - s)[None, None, :] + values[:, :, 1:] * s[None, None, :]
    w = ctx.mesh.edge_lengths[edges][:, None] * ctx.erule.weights[None, :]
    if weight_coeffs is not None:
        w = w * multiplier_at_edge_points(ctx.partition, weight_coeffs, s)
    local = np.einsum("fq,fjq,flq->fjl", w, lin, lin)[wall]
    d = dofs[wall]
    rows = np.broadcast_to(d[:, :, None], local.shape)
    cols = np.broadcast_to(d[:, None, :], local.shape)
    keep = (rows >= 0) & (cols >= 0)
    return _coo(rows[keep], cols[keep], local[keep], (ctx.L, ctx.L))


def assemble_CC(ctx: AssemblyContext) -> sp.csr_matrix:
    """a2 int_wall lambda xi."""
    return ctx.params.a2 * _wall_mass(ctx)


def assemble_O2C(ctx: AssemblyContext, chi) -> sp.csr_matrix:
    """a1 int_wall chi lambda xi."""
    chi = np.zeros(ctx.L) if chi is None else np.asarray(chi, dtype=float)
    return ctx.params.a1 * _wall_mass(ctx, chi)


def assemble_FC(ctx: AssemblyContext) -> np.ndarray:
    """-atilde0 int_wall xi."""
    edges, dofs, _ = ctx.hats
    ints = _hat_edge_integrals(ctx)[ctx.fine_wall]
    d = dofs[ctx.fine_wall]
    out = np.zeros(ctx.L)
    keep = d >= 0
    np.add.at(out, d[keep], ints[keep])
    return -ctx.params.atilde0 * out


def assemble_boundary_flux(ctx: AssemblyContext, func, t: float) -> np.ndarray:
    """int s xi over the non-inlet boundary for a user flux ``s(x, t, normal, tag)``."""
    out = np.zeros(ctx.L)
    if func is None or ctx.L == 0:
        return out
    edges, dofs, _ = ctx.hats
    pts, _, normals = ctx.edge_points(edges)
    nq = pts.shape[1]
    vals = np.empty((len(edges), nq))
    tags = ctx.fine_tags
    for tag in set(tags):
        sel = np.array([t_ is tag for t_ in tags])
        vals[sel] = evaluate(
            func, (), pts[sel].reshape(-1, 2), t, np.repeat(normals[sel], nq, axis=0), tag
        ).reshape(-1, nq)
    ints = _hat_edge_integrals(ctx, vals)
    keep = dofs >= 0
    np.add.at(out, dofs[keep], ints[keep])
    return out


# ---- time derivative and volume loads ----------------------------------------------


def assemble_mass(ctx: AssemblyContext) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    a = ctx.mesh.areas
    return sp.diags(np.concatenate([a, a])).tocsr(), sp.diags(a).tocsr()


def assemble_sources(ctx: AssemblyContext, f_mom, f_trans, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise-constant loads int f . v and int g psi."""
    M = ctx.M
    pts = ctx.qpoints.reshape(-1, 2)
    nq = ctx.qpoints.shape[1]
    fu = np.zeros(2 * M)
    fp = np.zeros(M)
    if f_mom is not None:
        vals = evaluate(f_mom, (2,), pts, t).reshape(M, nq, 2)
        loc = np.einsum("mq,mqd->md", ctx.qweights, vals)
        fu = np.concatenate([loc[:, 0], loc[:, 1]])
    if f_trans is not None:
        vals = evaluate(f_trans, (), pts, t).reshape(M, nq)
        fp = np.einsum("mq,mq->m", ctx.qweights, vals)
    return fu, fp


def project_p0(ctx: AssemblyContext, func, shape_tail=(), rule: QuadratureRule | None = None) -> np.ndarray:
    """Elementwise means of ``func(x)``."""
    rule = rule or ctx.rule
    pts = rule.map(ctx.mesh.vertices[ctx.mesh.triangles])
    M, nq = pts.shape[:2]
    vals = evaluate(func, shape_tail, pts.reshape(-1, 2)).reshape(M, nq, *shape_tail)
    return np.tensordot(rule.weights, vals, axes=([0], [1])) * 2.0
