import numpy as np
import pytest

from bf_transport_fem.forms import (
    AssemblyContext,
    BoundaryData,
    DataError,
    ModelParams,
    SparseSystem,
    assemble_AC,
    assemble_AF,
    assemble_BC,
    assemble_BF,
    assemble_CC,
    assemble_FC,
    assemble_FF,
    assemble_mass,
    assemble_O1C,
    assemble_O1F,
    assemble_O2C,
    assemble_O2F,
    assemble_sources,
)
from bf_transport_fem.mesh import BoundaryTag, build_multiplier_partition, build_rectangle, build_unit_square
from bf_transport_fem.spaces import rt0_interpolate

from conftest import CHANNEL_TAGS, make_context, make_params
from oracles import Oracle, triangle_gauss

ALL_INLET = {s: "inlet" for s in ("left", "right", "bottom", "top")}
ALL_WALL = {s: "wall" for s in ("left", "right", "bottom", "top")}


def single_triangle_context(corners=((0.0, 0.0), (1.0, 0.0), (0.0, 1.0)), **kw):
    from bf_transport_fem.mesh import Mesh

    mesh = Mesh.from_arrays(np.array(corners), [[0, 1, 2]], {(0, 1): "inlet", (1, 2): "inlet", (2, 0): "inlet"})
    return AssemblyContext(mesh, build_multiplier_partition(mesh), make_params(**kw))


def dense(a):
    return a.toarray() if hasattr(a, "toarray") else np.asarray(a)


def pure_trace(ctx, c=1.0):
    """Pseudostress coefficients of the constant tensor c I."""
    r0 = rt0_interpolate(ctx.mesh, lambda x: np.tile([c, 0.0], (len(x), 1)))
    r1 = rt0_interpolate(ctx.mesh, lambda x: np.tile([0.0, c], (len(x), 1)))
    return np.concatenate([r0, r1])


def zero_g(x, t, n, tag):
    return np.zeros((len(x), 2))


# ---- flow blocks -----------------------------------------------------------------------


def test_AF_kills_pure_trace(ctx4):
    s = pure_trace(ctx4, 1.7)
    A = assemble_AF(ctx4)
    assert abs(s @ A @ s) <= 1e-12
    assert np.abs(A @ s).max() <= 1e-12


def test_AF_single_triangle_vs_oracle():
    ctx = single_triangle_context(nu=0.3)
    o = Oracle(ctx.mesh, ctx.partition, ctx.params)
    assert np.abs(dense(assemble_AF(ctx)) - o.AF()).max() <= 1e-12


def test_AF_scales_with_inverse_viscosity():
    a = dense(assemble_AF(make_context(2, nu=0.1)))
    b = dense(assemble_AF(make_context(2, nu=0.2)))
    assert np.abs(b - 0.5 * a).max() <= 1e-13


def test_BF_interior_edges_telescope(ctx4):
    B = dense(assemble_BF(ctx4))
    mesh, M, E = ctx4.mesh, ctx4.M, ctx4.E
    interior = np.flatnonzero((mesh.edge_triangles >= 0).all(axis=1))
    for c in range(2):
        sums = B[c * M : (c + 1) * M, c * E + interior].sum(axis=0)
        assert np.abs(sums).max() <= 1e-14


def test_BF_reference_triangle():
    ctx = single_triangle_context()
    B = dense(assemble_BF(ctx))
    lengths = ctx.mesh.edge_lengths
    for c in range(2):
        for e in range(3):
            assert abs(B[c, c * 3 + e]) == pytest.approx(lengths[e], abs=1e-14)
            assert B[1 - c, c * 3 + e] == 0.0


def test_BF_zero_tensor(ctx4):
    assert not (assemble_BF(ctx4) @ np.zeros(2 * ctx4.E)).any()


def test_O1F_zero_velocity(ctx4):
    assert assemble_O1F(ctx4, np.zeros(2 * ctx4.M)).count_nonzero() == 0


def test_O1F_pure_trace(ctx4, rng):
    z = rng.normal(size=2 * ctx4.M)
    assert np.abs(assemble_O1F(ctx4, z) @ pure_trace(ctx4)).max() <= 1e-12


def test_O1F_random_triangle_vs_oracle(rng):
    ctx = single_triangle_context([[0.1, 0.2], [1.4, -0.3], [0.7, 1.1]], nu=0.7)
    o = Oracle(ctx.mesh, ctx.partition, ctx.params)
    z = rng.normal(size=2)
    assert np.abs(dense(assemble_O1F(ctx, z)) - o.O1F(z)).max() <= 1e-12


def test_O1F_is_linear_in_velocity(ctx4, rng):
    z1, z2 = rng.normal(size=(2, 2 * ctx4.M))
    a, b = 0.7, -1.9
    lhs = dense(assemble_O1F(ctx4, a * z1 + b * z2))
    rhs = a * dense(assemble_O1F(ctx4, z1)) + b * dense(assemble_O1F(ctx4, z2))
    assert np.abs(lhs - rhs).max() <= 1e-13


def test_O2F_zero_velocity(ctx4):
    assert assemble_O2F(ctx4, np.zeros(2 * ctx4.M)).count_nonzero() == 0


def test_O2F_closed_form():
    mesh = build_rectangle(1.0, 1.0, 1, 1, ALL_INLET)
    ctx = AssemblyContext(mesh, build_multiplier_partition(mesh), make_params(forch=2.0, power=3.0))
    z = np.concatenate([np.full(2, 3.0), np.full(2, 4.0)])
    assert np.allclose(assemble_O2F(ctx, z).diagonal(), 5.0, atol=1e-15, rtol=0)


def test_O2F_fractional_power_vs_oracle(rng):
    ctx = make_context(2, forch=1.3, power=3.5)
    z = rng.normal(size=2 * ctx.M)
    o = Oracle(ctx.mesh, ctx.partition, ctx.params)
    assert np.abs(dense(assemble_O2F(ctx, z)) - o.O2F(z)).max() <= 1e-12


# ---- transport blocks ------------------------------------------------------------------


def test_AC_positive_definite(ctx4, rng):
    A = assemble_AC(ctx4)
    for _ in range(10):
        x = rng.normal(size=ctx4.E)
        assert x @ A @ x > 0
    assert np.linalg.eigvalsh(dense(A)).min() > 0


def test_AC_reference_triangle_vs_oracle():
    ctx = single_triangle_context(kappa=0.25)
    o = Oracle(ctx.mesh, ctx.partition, ctx.params)
    assert np.abs(dense(assemble_AC(ctx)) - o.AC()).max() <= 1e-12


def test_AC_reference_entries_closed_form():
    # int psi_i . psi_j on the reference triangle, with psi_i = s_i |e_i| / (2|T|) (x - p_i)
    ctx = single_triangle_context(kappa=1.0)
    A = dense(assemble_AC(ctx))
    corners = ctx.mesh.vertices
    x, w = triangle_gauss(corners, 6)
    for t in range(1):
        te, sg = ctx.mesh.triangle_edges[t], ctx.mesh.triangle_signs[t]
        L = ctx.mesh.edge_lengths[te]
        for i in range(3):
            for j in range(3):
                pi = sg[i] * L[i] / 1.0 * (x - corners[i])
                pj = sg[j] * L[j] / 1.0 * (x - corners[j])
                assert A[te[i], te[j]] == pytest.approx(w @ np.sum(pi * pj, axis=1), abs=1e-13)


def test_O1C_zero_velocity(ctx4):
    assert assemble_O1C(ctx4, np.zeros(2 * ctx4.M)).count_nonzero() == 0


def test_BC_hat_pairing_on_half_edge():
    ctx = make_context(4, tags=ALL_WALL)
    _, bnd = assemble_BC(ctx)
    part, mesh = ctx.partition, ctx.mesh
    for k in range(ctx.L):
        v = part.macro_vertices[part.free_vertices[k]]
        for e in part.fine_edges:
            if v in mesh.edges[e]:
                s = mesh.outward_normals(np.array([e]))[0] @ mesh.edge_normals[e]
                # psi . n_out = s, hat mean over the half next to its peak = 3/4
                assert bnd[k, e] == pytest.approx(s * mesh.edge_lengths[e] * 0.75, abs=1e-15)


def test_BC_constant_trace_against_all_hats():
    ctx = make_context(4, tags=ALL_WALL)
    _, bnd = assemble_BC(ctx)
    mesh = ctx.mesh
    c = np.zeros(ctx.E)
    e = mesh.boundary_edges
    c[e] = mesh.boundary_edge_sign  # unit outward normal component on the whole boundary
    assert (np.ones(ctx.L) @ bnd @ c) == pytest.approx(4.0, abs=1e-14)


def test_BC_zero_multiplier(ctx4):
    _, bnd = assemble_BC(ctx4)
    assert not (np.zeros(ctx4.L) @ bnd).any()


def single_wall_edge_context(**kw):
    mesh = build_unit_square(2, {"bottom": "wall", "left": "outlet", "right": "outlet", "top": "outlet"})
    return AssemblyContext(mesh, build_multiplier_partition(mesh), make_params(**kw))


def test_CC_single_macro_edge():
    ctx = single_wall_edge_context(a0=0.7, a1=0.0)
    C = dense(assemble_CC(ctx))
    part = ctx.partition
    q = [k for k, (e0, _) in enumerate(part.macro_edges) if ctx.mesh.edge_tag[int(e0)] is BoundaryTag.WALL]
    assert len(q) == 1
    i, j = part.vertex_dof[part.macro_edge_vertices[q[0]]]
    L = part.macro_edge_lengths[q[0]]
    assert C[i, j] == pytest.approx(0.7 * L / 6, abs=1e-15)
    assert C[i, i] == pytest.approx(0.7 * L / 3, abs=1e-15)
    assert C[j, j] == pytest.approx(0.7 * L / 3, abs=1e-15)
    assert np.count_nonzero(C) == 4


def test_O2C_constant_weight():
    ctx = make_context(4, tags=ALL_WALL, a0=0.5, a1=2.0, phi_in=0.1)
    O = dense(assemble_O2C(ctx, np.ones(ctx.L)))
    C = dense(assemble_CC(ctx))
    p = ctx.params
    assert np.abs(O - p.a1 / p.a2 * C).max() <= 1e-14


def test_O2C_random_weight_vs_oracle(rng):
    ctx = make_context(4, a1=1.3)
    chi = rng.normal(size=ctx.L)
    o = Oracle(ctx.mesh, ctx.partition, ctx.params)
    assert np.abs(dense(assemble_O2C(ctx, chi)) - o.O2C(chi)).max() <= 1e-13


def test_FF_zero_data(ctx4):
    assert not assemble_FF(ctx4, BoundaryData(zero_g, None, None), np.zeros(ctx4.L), 0.0).any()


def test_FF_constant_datum(ctx4):
    c = np.array([0.3, -1.2])
    g = lambda x, t, n, tag: np.tile(c, (len(x), 1))  # noqa: E731
    F = assemble_FF(ctx4, BoundaryData(g, None, None), np.zeros(ctx4.L), 0.0)
    mesh = ctx4.mesh
    for e, s in zip(mesh.boundary_edges, mesh.boundary_edge_sign):
        if mesh.edge_tag[int(e)] is BoundaryTag.OUTLET:
            assert F[e] == 0.0
            continue
        for i in range(2):
            assert F[i * ctx4.E + e] == pytest.approx(s * c[i] * mesh.edge_lengths[e], abs=1e-15)


def test_FF_single_hat_on_bottom_wall():
    ctx = make_context(4, a1=2.0)
    part, mesh = ctx.partition, ctx.mesh
    chi = np.zeros(ctx.L)
    k = next(
        k for k in range(ctx.L)
        if np.isclose(part.vertex_coords[part.free_vertices[k]][1], 0.0)
        and 0.0 < part.vertex_coords[part.free_vertices[k]][0] < 1.0
    )
    chi[k] = 1.0
    F = assemble_FF(ctx, BoundaryData(zero_g, None, None), chi, 0.0)
    peak = part.vertex_coords[part.free_vertices[k]]
    expected = np.zeros(2 * ctx.E)
    for e in mesh.tagged_edges(BoundaryTag.WALL):
        a, b = mesh.vertices[mesh.edges[e]]
        if a[1] != 0.0:
            continue
        # hat is linear with value 1 at the peak and 0 half a macro edge (0.5) away
        ha, hb = (max(0.0, 1 - abs(p[0] - peak[0]) / 0.5) for p in (a, b))
        s = mesh.outward_normals(np.array([e]))[0] @ mesh.edge_normals[e]
        expected[ctx.E + e] = s * 2.0 * (-1.0) * 0.5 * (ha + hb) * mesh.edge_lengths[e]
    assert np.abs(F - expected).max() <= 1e-15


def test_FF_reports_bad_data(ctx4):
    def g(x, t, n, tag):
        return np.full((len(x), 2), np.nan)

    with pytest.raises(DataError):
        assemble_FF(ctx4, BoundaryData(g, None, None), None, 0.0)


def test_FC_zero_constant():
    ctx = make_context(4, phi_in=0.0)
    assert not assemble_FC(ctx).any()


def test_FC_interior_hat():
    ctx = make_context(8, a0=2e-2, phi_in=1.0)
    assert ctx.params.atilde0 == pytest.approx(2e-2)
    part = ctx.partition
    F = assemble_FC(ctx)
    for k in range(ctx.L):
        x, y = part.vertex_coords[part.free_vertices[k]]
        if y in (0.0, 1.0) and 0.0 < x < 1.0:
            assert F[k] == pytest.approx(-5e-3, abs=1e-17)


def test_FC_sum_is_wall_length_weighted():
    ctx = make_context(4, a0=0.3, phi_in=0.5)
    part = ctx.partition
    F = assemble_FC(ctx)
    # wall macro edges: both hats are free except at the inlet junctions (half of an edge lost each)
    wall_len = 2.0
    junction_loss = 2 * 0.5 * 0.5  # two wall macro edges touch the inlet; the missing hat integrates to L/2
    assert F.sum() == pytest.approx(-ctx.params.atilde0 * (wall_len - junction_loss), abs=1e-15)


# ---- masses and loads ------------------------------------------------------------------


def test_mass_matrices():
    ctx = make_context(2)
    Mu, Mp = assemble_mass(ctx)
    assert Mp.diagonal().sum() == pytest.approx(1.0, abs=1e-13)
    assert np.array_equal(Mu.diagonal(), np.concatenate([Mp.diagonal()] * 2))
    assert np.all(Mp.diagonal() == 1 / 8)


def test_sources_zero(ctx4):
    zero = lambda x, t: np.zeros((len(x), 2))  # noqa: E731
    fu, fp = assemble_sources(ctx4, zero, lambda x, t: np.zeros(len(x)), 0.0)
    assert not fu.any() and not fp.any()


def test_sources_constant(ctx4):
    fu, _ = assemble_sources(ctx4, lambda x, t: np.tile([1.0, 0.0], (len(x), 1)), None, 0.0)
    assert np.allclose(fu[: ctx4.M], ctx4.mesh.areas, atol=1e-15, rtol=0)
    assert not fu[ctx4.M :].any()


def test_sources_smooth_vs_oracle():
    ctx = make_context(8)
    f = lambda x, t: np.sin(x[:, 0]) * np.sin(x[:, 1])  # noqa: E731
    _, fp = assemble_sources(ctx, None, f, 0.0)
    for t, tri in enumerate(ctx.mesh.triangles):
        x, w = triangle_gauss(ctx.mesh.vertices[tri], 6)  # degree 10
        assert fp[t] == pytest.approx(w @ f(x, 0.0), abs=1e-10)


# ---- structure ------------------------------------------------------------------------


@pytest.mark.parametrize("name", ["AF", "AC", "O2F", "Mu", "Mp"])
def test_symmetric_positive_semidefinite(name, rng):
    ctx = make_context(2)
    z = rng.normal(size=2 * ctx.M)
    mats = {
        "AF": assemble_AF(ctx),
        "AC": assemble_AC(ctx),
        "O2F": assemble_O2F(ctx, z),
        "Mu": assemble_mass(ctx)[0],
        "Mp": assemble_mass(ctx)[1],
    }
    A = dense(mats[name])
    assert np.array_equal(A, A.T)
    assert np.linalg.eigvalsh(A).min() >= -1e-12 * np.abs(A).max()


def test_assembly_is_bitwise_deterministic(rng):
    z = rng.normal(size=2 * 32)
    a = make_context(4)
    b = make_context(4)
    for f in (assemble_AF, assemble_AC, assemble_BF):
        assert (f(a) != f(b)).nnz == 0
    assert (assemble_O1F(a, z) != assemble_O1F(b, z)).nnz == 0


def test_model_params_membrane_relations():
    p = ModelParams.derived(nu=1, kappa=1, forch=0, power=3, a0=2e-2, a1=1.8e4, phi_in=6e-10, dt=1, t_final=1)
    assert p.a2 == pytest.approx(2e-2 - 1.8e4 * 6e-10)
    assert p.atilde0 == pytest.approx(1.2e-11)
    q = ModelParams.from_membrane_constants(
        area=2.0, delta_p=3.0, ions=2.0, gas_constant=0.5, temperature=4.0, phi_in=0.1,
        nu=1, kappa=1, forch=0, power=3, dt=1, t_final=1,
    )
    assert q.a1 == pytest.approx(8.0)
    assert q.a0 == pytest.approx(6.0 - 0.8)


@pytest.mark.parametrize("bad", [dict(nu=0.0), dict(kappa=-1.0), dict(power=2.5), dict(power=4.5), dict(dt=0.0), dict(forch=-1.0)])
def test_model_params_validation(bad):
    with pytest.raises(ValueError):
        make_params(**bad)


def test_sparse_system_shape_check():
    import scipy.sparse as sp

    with pytest.raises(ValueError):
        SparseSystem(sp.eye(3).tocsr(), np.zeros(2), {})
