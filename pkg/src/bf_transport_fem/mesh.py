"""Conforming triangulations with tagged boundaries and the coarsened boundary partition.

Edges are stored once with ``edges[e] = (a, b)``, ``a < b``.  The global normal of an
edge is its tangent ``x_b - x_a`` rotated clockwise.  ``triangle_signs[t, k]`` is +1
when that normal points out of triangle ``t`` across its local edge ``k`` (the edge
opposite local vertex ``k``), -1 otherwise.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np


class BoundaryTag(enum.Enum):
    INLET = "inlet"
    WALL = "wall"
    OUTLET = "outlet"


class MeshError(ValueError):
    """Invalid mesh input. ``index`` names the offending entity when there is one."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


class MeshParseError(MeshError):
    def __init__(self, message: str, line: int, column: int = 1):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class OrientationError(MeshError):
    pass


class UntaggedBoundaryError(MeshError):
    pass


class NonconformingError(MeshError):
    pass


class PartitionError(MeshError):
    pass


_LOCAL_EDGES = np.array([[1, 2], [2, 0], [0, 1]])


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    triangle_edges: np.ndarray
    triangle_signs: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: tuple[BoundaryTag, ...]

    @classmethod
    def from_arrays(
        cls,
        vertices,
        triangles,
        boundary: Mapping[tuple[int, int], BoundaryTag | str],
    ) -> "Mesh":
        """Build and validate a mesh.

        ``boundary`` maps vertex pairs (either order) to a tag.  Every edge with a single
        adjacent triangle must be tagged, and only those edges may be.
        """
        vertices = np.ascontiguousarray(vertices, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 2:
            raise MeshError("vertices must be an array of shape (K, 2)")
        if triangles.ndim != 2 or triangles.shape[1] != 3 or len(triangles) == 0:
            raise MeshError("triangles must be a non-empty array of shape (M, 3)")
        nv = len(vertices)
        bad = np.flatnonzero((triangles < 0).any(axis=1) | (triangles >= nv).any(axis=1))
        if bad.size:
            raise MeshError(f"triangle {bad[0]} references a missing vertex", int(bad[0]))

        p = vertices[triangles]
        area2 = (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1]) - (
            p[:, 2, 0] - p[:, 0, 0]
        ) * (p[:, 1, 1] - p[:, 0, 1])
        bad = np.flatnonzero(area2 <= 0.0)
        if bad.size:
            raise OrientationError(
                f"triangle {bad[0]} is not counterclockwise (signed area {area2[bad[0]] / 2:.3e})",
                int(bad[0]),
            )

        # local edge k runs from vertex k+1 to k+2 (counterclockwise traversal)
        local = triangles[:, _LOCAL_EDGES]  # (M, 3, 2)
        lo = local.min(axis=2)
        hi = local.max(axis=2)
        keys = (lo * nv + hi).ravel()
        uniq, inverse, counts = np.unique(keys, return_inverse=True, return_counts=True)
        if (counts > 2).any():
            e = int(np.flatnonzero(counts > 2)[0])
            raise NonconformingError(f"edge {e} is shared by more than two triangles", e)
        edges = np.column_stack([uniq // nv, uniq % nv]).astype(np.int64)
        tri_edges = inverse.reshape(-1, 3).astype(np.int64)
        signs = np.where(local[:, :, 0] == lo, 1, -1).astype(np.int64)

        # two neighbours must traverse a shared edge in opposite directions
        flat_s = signs.ravel()
        ssum = np.zeros(len(edges), dtype=np.int64)
        np.add.at(ssum, inverse, flat_s)
        clash = np.flatnonzero((counts == 2) & (ssum != 0))
        if clash.size:
            e = int(clash[0])
            raise NonconformingError(f"edge {e} has inconsistent orientation in its two triangles", e)

        bnd = np.flatnonzero(counts == 1)
        key_to_edge = {int(k): i for i, k in enumerate(uniq)}
        tags: dict[int, BoundaryTag] = {}
        for (a, b), tag in boundary.items():
            a, b = int(a), int(b)
            e = key_to_edge.get(min(a, b) * nv + max(a, b))
            if e is None:
                raise MeshError(f"tagged pair ({a}, {b}) is not an edge of the mesh")
            if counts[e] != 1:
                raise MeshError(f"edge {e} ({a}, {b}) is interior but carries a boundary tag", e)
            tags[e] = BoundaryTag(tag) if not isinstance(tag, BoundaryTag) else tag
        for e in bnd:
            if int(e) not in tags:
                a, b = edges[e]
                raise UntaggedBoundaryError(f"boundary edge {e} ({a}, {b}) has no tag", int(e))

        mesh = cls(
            vertices=vertices,
            triangles=triangles,
            edges=edges,
            triangle_edges=tri_edges,
            triangle_signs=signs,
            boundary_edges=bnd.astype(np.int64),
            boundary_tags=tuple(tags[int(e)] for e in bnd),
        )
        mesh._check_hanging_nodes()
        for arr in (vertices, triangles, edges, tri_edges, signs, mesh.boundary_edges):
            arr.setflags(write=False)
        return mesh

    def _check_hanging_nodes(self) -> None:
        # a vertex strictly inside a boundary edge means two triangles meet it nonconformingly
        bverts = np.unique(self.edges[self.boundary_edges])
        q = self.vertices[bverts]
        for e in self.boundary_edges:
            a, b = self.edges[e]
            pa, pb = self.vertices[a], self.vertices[b]
            d = pb - pa
            L2 = d @ d
            rel = q - pa
            t = rel @ d / L2
            cross = rel[:, 0] * d[1] - rel[:, 1] * d[0]
            inside = (np.abs(cross) <= 1e-12 * L2) & (t > 1e-12) & (t < 1 - 1e-12)
            if inside.any():
                raise NonconformingError(
                    f"edge {e} ({a}, {b}) has vertex {bverts[inside][0]} in its interior", int(e)
                )

    # ---- geometry -----------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @cached_property
    def areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * (
            (p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
            - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1])
        )

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    @cached_property
    def edge_normals(self) -> np.ndarray:
        """Unit global normals (tangent rotated clockwise)."""
        d = self.vertices[self.edges[:, 1]] - self.vertices[self.edges[:, 0]]
        return np.column_stack([d[:, 1], -d[:, 0]]) / self.edge_lengths[:, None]

    @cached_property
    def centroids(self) -> np.ndarray:
        return self.vertices[self.triangles].mean(axis=1)

    @cached_property
    def diameters(self) -> np.ndarray:
        return self.edge_lengths[self.triangle_edges].max(axis=1)

    @property
    def h(self) -> float:
        return float(self.diameters.max())

    @cached_property
    def edge_triangles(self) -> np.ndarray:
        """(E, 2) adjacent triangles; the second column is -1 on boundary edges."""
        out = -np.ones((self.n_edges, 2), dtype=np.int64)
        for t, row in enumerate(self.triangle_edges):
            for e in row:
                out[e, 0 if out[e, 0] < 0 else 1] = t
        return out

    @cached_property
    def boundary_edge_sign(self) -> np.ndarray:
        """Sign s with (global normal) = s * (outward normal), per boundary edge."""
        s = np.zeros(self.n_edges, dtype=np.int64)
        s[self.triangle_edges.ravel()] = self.triangle_signs.ravel()
        return s[self.boundary_edges]

    @cached_property
    def edge_tag(self) -> dict[int, BoundaryTag]:
        return {int(e): t for e, t in zip(self.boundary_edges, self.boundary_tags)}

    def tagged_edges(self, *tags: BoundaryTag) -> np.ndarray:
        sel = [int(e) for e, t in zip(self.boundary_edges, self.boundary_tags) if t in tags]
        return np.asarray(sel, dtype=np.int64)

    def outward_normals(self, edges: np.ndarray) -> np.ndarray:
        s = np.zeros(self.n_edges, dtype=np.int64)
        s[self.boundary_edges] = self.boundary_edge_sign
        return self.edge_normals[edges] * s[edges, None]

    def directed_boundary_edge(self, e: int) -> tuple[int, int]:
        """Endpoints of boundary edge ``e`` in the direction that keeps the domain on the left."""
        t = self.edge_triangles[e, 0]
        k = int(np.flatnonzero(self.triangle_edges[t] == e)[0])
        a, b = self.triangles[t, _LOCAL_EDGES[k]]
        return int(a), int(b)


# ---- construction ----------------------------------------------------------

_SIDES = ("left", "right", "bottom", "top")


def build_rectangle(
    length: float,
    height: float,
    nx: int,
    ny: int,
    tags: Mapping[str, BoundaryTag | str] | None = None,
) -> Mesh:
    """Right-diagonal structured triangulation of ``(0, length) x (0, height)``."""
    if nx < 1 or ny < 1:
        raise ValueError("nx and ny must be positive")
    tags = {side: BoundaryTag.WALL for side in _SIDES} | dict(tags or {})
    unknown = set(tags) - set(_SIDES)
    if unknown:
        raise ValueError(f"unknown side names {sorted(unknown)}; expected {_SIDES}")
    xs = np.linspace(0.0, length, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    X, Y = np.meshgrid(xs, ys)  # row j is y_j
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny))
    i, j = i.ravel(), j.ravel()
    v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
    lower = np.column_stack([v00, v10, v11])
    upper = np.column_stack([v00, v11, v01])
    triangles = np.empty((2 * nx * ny, 3), dtype=np.int64)
    triangles[0::2] = lower
    triangles[1::2] = upper

    boundary: dict[tuple[int, int], BoundaryTag] = {}
    for k in range(nx):
        boundary[(vid(k, 0), vid(k + 1, 0))] = BoundaryTag(tags["bottom"])
        boundary[(vid(k, ny), vid(k + 1, ny))] = BoundaryTag(tags["top"])
    for k in range(ny):
        boundary[(vid(0, k), vid(0, k + 1))] = BoundaryTag(tags["left"])
        boundary[(vid(nx, k), vid(nx, k + 1))] = BoundaryTag(tags["right"])
    return Mesh.from_arrays(vertices, triangles, boundary)


def build_unit_square(n: int, tags: Mapping[str, BoundaryTag | str] | None = None) -> Mesh:
    """Right-diagonal mesh of the unit square with ``2 n^2`` triangles; ``n`` must be even."""
    if not isinstance(n, (int, np.integer)) or n < 2 or n % 2:
        raise ValueError(
            f"n must be an even integer >= 2 (got {n!r}): the boundary partition of the "
            "multiplier needs an even number of edges per side"
        )
    return build_rectangle(1.0, 1.0, int(n), int(n), tags)


# ---- ASCII I/O -------------------------------------------------------------


def _tokens(path: Path):
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0]
            if line.strip():
                yield lineno, raw, line.split()


def _column(raw: str, token: str) -> int:
    return raw.find(token) + 1 if token in raw else 1


def load_mesh(path: str | Path) -> Mesh:
    """Read a ``bfmesh 1`` file and validate it."""
    path = Path(path)
    lines = list(_tokens(path))
    pos = 0

    def take(expected_len: int, what: str):
        nonlocal pos
        if pos >= len(lines):
            last = lines[-1][0] if lines else 0
            raise MeshParseError(f"unexpected end of file while reading {what}", last + 1)
        lineno, raw, toks = lines[pos]
        pos += 1
        if len(toks) != expected_len:
            col = _column(raw, toks[min(len(toks), expected_len) - 1]) if toks else 1
            raise MeshParseError(f"expected {expected_len} fields for {what}, found {len(toks)}", lineno, col)
        return lineno, raw, toks

    def header(keyword: str) -> int:
        lineno, raw, toks = take(2, f"'{keyword}' header")
        if toks[0] != keyword:
            raise MeshParseError(f"expected '{keyword}', found '{toks[0]}'", lineno, _column(raw, toks[0]))
        try:
            count = int(toks[1])
        except ValueError:
            raise MeshParseError(f"bad count '{toks[1]}'", lineno, _column(raw, toks[1])) from None
        if count < 0:
            raise MeshParseError("negative count", lineno, _column(raw, toks[1]))
        return count

    lineno, raw, toks = take(2, "file header")
    if toks != ["bfmesh", "1"]:
        raise MeshParseError("expected header 'bfmesh 1'", lineno, 1)

    def parse(conv, lineno, raw, tok):
        try:
            return conv(tok)
        except ValueError:
            raise MeshParseError(f"cannot parse '{tok}'", lineno, _column(raw, tok)) from None

    nv = header("vertices")
    vertices = np.empty((nv, 2))
    for k in range(nv):
        lineno, raw, toks = take(2, f"vertex {k}")
        vertices[k] = [parse(float, lineno, raw, t) for t in toks]

    nt = header("triangles")
    triangles = np.empty((nt, 3), dtype=np.int64)
    for k in range(nt):
        lineno, raw, toks = take(3, f"triangle {k}")
        triangles[k] = [parse(int, lineno, raw, t) for t in toks]

    nb = header("boundary")
    boundary: dict[tuple[int, int], BoundaryTag] = {}
    for k in range(nb):
        lineno, raw, toks = take(3, f"boundary edge {k}")
        a, b = (parse(int, lineno, raw, t) for t in toks[:2])
        try:
            tag = BoundaryTag(toks[2].lower())
        except ValueError:
            raise MeshParseError(
                f"unknown boundary tag '{toks[2]}' (inlet, wall, outlet)", lineno, _column(raw, toks[2])
            ) from None
        boundary[(a, b)] = tag
    if pos != len(lines):
        lineno, raw, toks = lines[pos]
        raise MeshParseError("trailing content after boundary section", lineno, _column(raw, toks[0]))
    return Mesh.from_arrays(vertices, triangles, boundary)


def save_mesh(mesh: Mesh, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("bfmesh 1\n")
        fh.write(f"vertices {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            fh.write(f"{float(x)!r} {float(y)!r}\n")
        fh.write(f"triangles {mesh.n_triangles}\n")
        for i, j, k in mesh.triangles:
            fh.write(f"{i} {j} {k}\n")
        fh.write(f"boundary {len(mesh.boundary_edges)}\n")
        for e, tag in zip(mesh.boundary_edges, mesh.boundary_tags):
            a, b = mesh.edges[e]
            fh.write(f"{a} {b} {tag.value}\n")


# ---- multiplier partition ----------------------------------------------------


@dataclass(frozen=True, eq=False)
class MultiplierPartition:
    """Pairs of adjacent fine edges on the non-inlet boundary.

    ``macro_edges[q]`` holds two global edge indices in walking order;
    ``macro_edge_vertices[q]`` the positions (into ``macro_vertices``) of its start and end.
    ``endpoint_flags`` marks macro vertices where a chain meets the inlet.
    """

    macro_edges: np.ndarray
    macro_vertices: np.ndarray
    endpoint_flags: np.ndarray
    macro_edge_vertices: np.ndarray
    vertex_coords: np.ndarray
    # per fine edge: global edge, macro edge, arclength parameters of edges[e, 0] / edges[e, 1]
    fine_edges: np.ndarray = field(repr=False)
    fine_macro: np.ndarray = field(repr=False)
    fine_params: np.ndarray = field(repr=False)
    fine_lengths: np.ndarray = field(repr=False)  # (Q, 2) lengths of the two halves

    @property
    def n_macro_edges(self) -> int:
        return len(self.macro_edges)

    @cached_property
    def free_vertices(self) -> np.ndarray:
        """Macro-vertex positions that carry a multiplier degree of freedom."""
        return np.flatnonzero(~self.endpoint_flags)

    @cached_property
    def vertex_dof(self) -> np.ndarray:
        dof = -np.ones(len(self.macro_vertices), dtype=np.int64)
        dof[self.free_vertices] = np.arange(len(self.free_vertices))
        return dof

    @property
    def macro_edge_lengths(self) -> np.ndarray:
        return self.fine_lengths.sum(axis=1)


def _walk_chains(mesh: Mesh):
    """Directed chains of non-inlet boundary edges: (vertex list, edge list, closed)."""
    inlet = set(mesh.tagged_edges(BoundaryTag.INLET).tolist())
    succ: dict[int, tuple[int, int]] = {}
    has_pred: set[int] = set()
    for e in mesh.boundary_edges:
        e = int(e)
        if e in inlet:
            continue
        a, b = mesh.directed_boundary_edge(e)
        if a in succ:
            raise PartitionError(f"boundary is pinched at vertex {a}", e)
        succ[a] = (e, b)
        has_pred.add(b)
    used: set[int] = set()
    chains = []
    for start in sorted(v for v in succ if v not in has_pred):
        verts, edges = [start], []
        v = start
        while v in succ:
            e, w = succ[v]
            edges.append(e)
            used.add(e)
            verts.append(w)
            v = w
        chains.append((verts, edges, False))
    for start in sorted(succ):
        e, _ = succ[start]
        if e in used:
            continue
        verts, edges = [start], []
        v = start
        while True:
            e, w = succ[v]
            edges.append(e)
            used.add(e)
            if w == start:
                break
            verts.append(w)
            v = w
        chains.append((verts, edges, True))
    return chains


def build_multiplier_partition(mesh: Mesh) -> MultiplierPartition:
    """Merge adjacent fine edges of the non-inlet boundary pairwise.

    Each open chain is walked from its inlet junction in the boundary direction; closed
    loops (inlet-free components) start at their lowest-numbered vertex.
    """
    chains = _walk_chains(mesh)
    macro_edges, macro_vertices, flags, mev = [], [], [], []
    fine_e, fine_q, fine_t, fine_len = [], [], [], []
    for verts, edges, closed in chains:
        if len(edges) % 2:
            raise PartitionError(
                f"boundary chain starting at vertex {verts[0]} has {len(edges)} edges; the "
                "multiplier partition needs an even count per chain (refine or re-tag the mesh)",
                edges[0],
            )
        base = len(macro_vertices)
        n_macro = len(edges) // 2
        n_mv = n_macro if closed else n_macro + 1
        for k in range(n_mv):
            macro_vertices.append(verts[2 * k])
            flags.append(not closed and k in (0, n_mv - 1))
        for k in range(n_macro):
            q = len(macro_edges)
            e0, e1 = edges[2 * k], edges[2 * k + 1]
            macro_edges.append((e0, e1))
            start = base + k
            end = base + (k + 1) % n_mv if closed else base + k + 1
            mev.append((start, end))
            v0, v1, v2 = verts[2 * k], verts[2 * k + 1], verts[(2 * k + 2) % len(verts)]
            p0, p1, p2 = mesh.vertices[[v0, v1, v2]]
            l0, l1 = np.linalg.norm(p1 - p0), np.linalg.norm(p2 - p1)
            tmid = l0 / (l0 + l1)
            for e, (va, vb), (ta, tb) in ((e0, (v0, v1), (0.0, tmid)), (e1, (v1, v2), (tmid, 1.0))):
                a, _ = mesh.edges[e]
                fine_e.append(e)
                fine_q.append(q)
                fine_t.append((ta, tb) if a == va else (tb, ta))
            fine_len.append((l0, l1))
    mv = np.asarray(macro_vertices, dtype=np.int64)
    return MultiplierPartition(
        macro_edges=np.asarray(macro_edges, dtype=np.int64).reshape(-1, 2),
        macro_vertices=mv,
        endpoint_flags=np.asarray(flags, dtype=bool),
        macro_edge_vertices=np.asarray(mev, dtype=np.int64).reshape(-1, 2),
        vertex_coords=mesh.vertices[mv] if len(mv) else np.zeros((0, 2)),
        fine_edges=np.asarray(fine_e, dtype=np.int64),
        fine_macro=np.asarray(fine_q, dtype=np.int64),
        fine_params=np.asarray(fine_t, dtype=float).reshape(-1, 2),
        fine_lengths=np.asarray(fine_len, dtype=float).reshape(-1, 2),
    )
