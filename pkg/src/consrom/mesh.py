"""Triangular meshes of planar domains with the connectivity needed by the
RT0/P0/P1 spaces and by the cell-adjacency graph.

Conventions
-----------
* cells are counter-clockwise node triples;
* ``cell_edges[c, k]`` is the edge opposite local vertex ``k``;
* every edge has a global unit normal pointing from its lower-indexed cell to
  its higher-indexed cell, or outward on the boundary;
  ``cell_edge_signs[c, k]`` is +1 iff that normal points out of ``c``.
"""

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MeshFormatError, MeshValidationError


@dataclass(frozen=True, eq=False)
class Mesh2D:
    nodes: np.ndarray          # (N, 2)
    cells: np.ndarray          # (C, 3)
    edges: np.ndarray          # (E, 2), node pairs with i < j
    cell_edges: np.ndarray     # (C, 3)
    cell_edge_signs: np.ndarray  # (C, 3), +-1
    edge_cells: np.ndarray     # (E, 2), second entry -1 on the boundary
    edge_normals: np.ndarray   # (E, 2)
    edge_lengths: np.ndarray   # (E,)
    cell_areas: np.ndarray     # (C,)
    boundary_edges: np.ndarray  # sorted edge indices on the boundary

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def cell_centroids(self) -> np.ndarray:
        return self.nodes[self.cells].mean(axis=1)

    @property
    def edge_midpoints(self) -> np.ndarray:
        return self.nodes[self.edges].mean(axis=1)

    @property
    def h(self) -> float:
        return float(self.edge_lengths.max())

    def hash(self) -> str:
        """Content hash of the geometry (coordinates and cell list)."""
        d = hashlib.sha256()
        d.update(np.ascontiguousarray(self.nodes, dtype="<f8").tobytes())
        d.update(np.ascontiguousarray(self.cells, dtype="<i8").tobytes())
        return d.hexdigest()[:16]

    def same_as(self, other: "Mesh2D") -> bool:
        return (
            np.array_equal(self.nodes, other.nodes)
            and np.array_equal(self.cells, other.cells)
        )


def _freeze(*arrays):
    for a in arrays:
        a.setflags(write=False)


def build_mesh(nodes, cells) -> Mesh2D:
    """Derive connectivity and orientation from nodes and cells, then validate."""
    nodes = np.array(nodes, dtype=float)
    cells = np.array(cells, dtype=np.int64)
    if nodes.ndim != 2 or nodes.shape[1] != 2:
        raise MeshValidationError("shape", f"nodes must be (N, 2), got {nodes.shape}")
    if cells.ndim != 2 or cells.shape[1] != 3 or cells.shape[0] == 0:
        raise MeshValidationError("shape", f"cells must be (C, 3) with C >= 1, got {cells.shape}")
    if cells.min() < 0 or cells.max() >= nodes.shape[0]:
        raise MeshValidationError("node-index-range", "cell references a missing node")

    p = nodes[cells]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    signed = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(signed <= 0.0):
        bad = int(np.flatnonzero(signed <= 0.0)[0])
        kind = "degenerate" if signed[bad] == 0.0 else "clockwise"
        raise MeshValidationError("positive-cell-area", f"cell {bad} is {kind}")

    n_cells = cells.shape[0]
    # local edge k joins vertices k+1 and k+2 (opposite vertex k)
    a = cells[:, [1, 2, 0]]
    b = cells[:, [2, 0, 1]]
    keys = np.stack([np.minimum(a, b), np.maximum(a, b)], axis=-1).reshape(-1, 2)
    edges, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(n_cells, 3)
    if np.any(counts > 2):
        raise MeshValidationError("edge-manifold", "an edge is shared by more than two cells")

    flat_cell = np.repeat(np.arange(n_cells), 3)
    flat_edge = inverse.ravel()
    order = np.lexsort((flat_cell, flat_edge))
    n_edges = edges.shape[0]
    edge_cells = np.full((n_edges, 2), -1, dtype=np.int64)
    first = np.ones(order.size, dtype=bool)
    first[1:] = flat_edge[order[1:]] != flat_edge[order[:-1]]
    edge_cells[flat_edge[order[first]], 0] = flat_cell[order[first]]
    edge_cells[flat_edge[order[~first]], 1] = flat_cell[order[~first]]

    # outward normal of each local edge (counter-clockwise traversal a -> b)
    t = nodes[b] - nodes[a]
    lengths_loc = np.hypot(t[..., 0], t[..., 1])
    out = np.stack([t[..., 1], -t[..., 0]], axis=-1) / lengths_loc[..., None]

    owner = edge_cells[inverse, 0]
    signs = np.where(owner == np.arange(n_cells)[:, None], 1, -1).astype(np.int64)
    edge_normals = np.zeros((n_edges, 2))
    edge_normals[inverse[signs > 0]] = out[signs > 0]
    edge_lengths = np.zeros(n_edges)
    edge_lengths[inverse.ravel()] = lengths_loc.ravel()

    boundary = np.flatnonzero(edge_cells[:, 1] < 0)
    mesh = Mesh2D(
        nodes=nodes, cells=cells, edges=edges, cell_edges=inverse,
        cell_edge_signs=signs, edge_cells=edge_cells, edge_normals=edge_normals,
        edge_lengths=edge_lengths, cell_areas=signed, boundary_edges=boundary,
    )
    validate(mesh)
    _freeze(nodes, cells, edges, inverse, signs, edge_cells, edge_normals, edge_lengths, signed, boundary)
    return mesh


def validate(mesh: Mesh2D) -> None:
    """Check every mesh invariant; raise :class:`MeshValidationError` naming the first failure."""
    if np.any(mesh.cell_areas <= 0.0):
        raise MeshValidationError("positive-cell-area")
    used = np.zeros(mesh.n_nodes, dtype=bool)
    used[mesh.cells.ravel()] = True
    if not used.all():
        raise MeshValidationError("no-orphan-nodes", f"{int((~used).sum())} nodes not in any cell")
    # interior edges: opposite signs in the two cells; boundary: +1 in the single cell
    s = mesh.cell_edge_signs
    per_edge = np.zeros(mesh.n_edges, dtype=np.int64)
    np.add.at(per_edge, mesh.cell_edges.ravel(), s.ravel())
    interior = mesh.edge_cells[:, 1] >= 0
    if np.any(per_edge[interior] != 0) or np.any(per_edge[~interior] != 1):
        raise MeshValidationError("incidence-signs")
    if mesh.n_nodes != mesh.n_edges - (mesh.n_cells - 1):
        raise MeshValidationError(
            "euler",
            f"nodes={mesh.n_nodes}, edges={mesh.n_edges}, cells={mesh.n_cells} "
            "(domain must be connected and simply connected)",
        )
    nrm = np.hypot(mesh.edge_normals[:, 0], mesh.edge_normals[:, 1])
    tang = mesh.nodes[mesh.edges[:, 1]] - mesh.nodes[mesh.edges[:, 0]]
    perp = np.abs(np.einsum("ij,ij->i", mesh.edge_normals, tang)) / mesh.edge_lengths
    if np.any(np.abs(nrm - 1.0) > 1e-12) or np.any(perp > 1e-12):
        raise MeshValidationError("unit-normals")


def structured_unit_square(n: int) -> Mesh2D:
    """``n x n`` squares on the unit square, each split along its
    lower-left to upper-right diagonal: ``(n+1)^2`` nodes, ``2n^2`` cells."""
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError(f"n must be a positive integer, got {n!r}")
    n = int(n)
    ticks = np.arange(n + 1) / n
    xx, yy = np.meshgrid(ticks, ticks)
    nodes = np.column_stack([xx.ravel(), yy.ravel()])
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    ll = (j * (n + 1) + i).ravel()
    lr, ul = ll + 1, ll + n + 1
    ur = ul + 1
    cells = np.empty((2 * n * n, 3), dtype=np.int64)
    cells[0::2] = np.column_stack([ll, lr, ur])
    cells[1::2] = np.column_stack([ll, ur, ul])
    return build_mesh(nodes, cells)


def save_mesh(mesh: Mesh2D, path) -> None:
    lines = [f"mesh2d {mesh.n_nodes} {mesh.n_cells}"]
    lines += [f"{x!r} {y!r}" for x, y in mesh.nodes.tolist()]
    lines += [f"{i} {j} {k}" for i, j, k in mesh.cells.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh2D:
    """Read the ``mesh2d`` text format; connectivity is rebuilt, never read."""
    text = Path(path).read_text().splitlines()
    while text and not text[-1].strip():
        text.pop()
    if not text:
        raise MeshFormatError("empty file", 1)
    head = text[0].split()
    if len(head) != 3 or head[0] != "mesh2d":
        raise MeshFormatError("expected header 'mesh2d <n_nodes> <n_cells>'", 1)
    try:
        n_nodes, n_cells = int(head[1]), int(head[2])
    except ValueError:
        raise MeshFormatError("header counts must be integers", 1) from None
    if n_nodes < 3 or n_cells < 1:
        raise MeshFormatError("need at least 3 nodes and 1 cell", 1)
    if len(text) != 1 + n_nodes + n_cells:
        lineno = min(len(text), 1 + n_nodes + n_cells) + 1
        raise MeshFormatError(
            f"expected {n_nodes + n_cells} data lines, found {len(text) - 1}", lineno
        )
    nodes = np.empty((n_nodes, 2))
    cells = np.empty((n_cells, 3), dtype=np.int64)
    for r in range(n_nodes):
        parts = text[1 + r].split()
        try:
            if len(parts) != 2:
                raise ValueError
            nodes[r] = [float(parts[0]), float(parts[1])]
        except ValueError:
            raise MeshFormatError("expected 'x y' node coordinates", 2 + r) from None
        if not np.all(np.isfinite(nodes[r])):
            raise MeshFormatError("non-finite coordinate", 2 + r)
    for r in range(n_cells):
        lineno = 2 + n_nodes + r
        parts = text[lineno - 1].split()
        try:
            if len(parts) != 3:
                raise ValueError
            cells[r] = [int(p) for p in parts]
        except ValueError:
            raise MeshFormatError("expected 'i j k' integer node indices", lineno) from None
        if cells[r].min() < 0 or cells[r].max() >= n_nodes:
            raise MeshFormatError("node index out of range", lineno)
    return build_mesh(nodes, cells)
