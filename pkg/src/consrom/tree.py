"""Spanning-tree right-inverse of the divergence and its multi-tree average.

Graph nodes are cells; two cells are adjacent when they share an interior
edge. A BFS tree rooted at the cell behind a boundary edge ``j0`` selects
``n_cells`` edges ``J`` (``j0`` plus one parent edge per non-root cell).
The square block ``T = B[:, J]`` is triangular when cells are eliminated from
the leaves to the root, so ``S_I f = Pi^T T^{-1} f`` costs O(n_cells).
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from . import kernels
from .errors import StructuralError
from .fem import OperatorSet
from .numerics import Rng, read_matrix, solve_permuted_triangular, write_matrix


def cell_adjacency(mesh, shuffle_seed=None):
    """CSR adjacency ``(ptr, neighbour_cell, via_edge)``, neighbours ascending
    by cell index unless ``shuffle_seed`` is given."""
    interior = np.flatnonzero(mesh.edge_cells[:, 1] >= 0)
    a, b = mesh.edge_cells[interior, 0], mesh.edge_cells[interior, 1]
    src = np.concatenate([a, b])
    dst = np.concatenate([b, a])
    via = np.concatenate([interior, interior])
    if shuffle_seed is None:
        key = dst
    else:
        key = Rng(shuffle_seed).generator.permutation(src.size)
    order = np.lexsort((key, src))
    ptr = np.zeros(mesh.n_cells + 1, dtype=np.int64)
    np.add.at(ptr, src + 1, 1)
    return np.cumsum(ptr), dst[order].astype(np.int64), via[order].astype(np.int64)


class TreeSolver:
    """One spanning tree: ``S_I = Pi^T (B Pi^T)^{-1}`` and its adjoint.

    Attributes:
        root: root boundary edge ``j0``.
        J: selected edges; ``J[k]`` is the parent edge of ``order[k]`` and ``J[0] = j0``.
        order: cells in BFS discovery order.
        ops_count: work units spent in construction (graph visits plus stored nonzeros).
    """

    def __init__(self, ops: OperatorSet, root: int, J, order, shuffle_seed=None, ops_count=0):
        self.ops = ops
        self.root = int(root)
        self.J = np.asarray(J, dtype=np.int64)
        self.order = np.asarray(order, dtype=np.int64)
        self.shuffle_seed = shuffle_seed
        n = ops.mesh.n_cells
        if self.J.shape != (n,) or self.order.shape != (n,):
            raise StructuralError(f"tree must select {n} edges and order {n} cells")
        if len(np.unique(self.J)) != n or len(np.unique(self.order)) != n:
            raise StructuralError("tree edges or cell order contain duplicates")

        # T[:, k] is the divergence of the unit flux on edge J[k]
        self.T = sps.csr_array(ops.B[:, self.J])
        self.Tt = sps.csr_array(self.T.T)
        self._fwd = (self.order[::-1].copy(), np.arange(n - 1, -1, -1, dtype=np.int64))
        self._adj = (np.arange(n, dtype=np.int64), self.order.copy())
        self._levels = {}
        status, step, _ = kernels.triangular_levels(self.T.indptr, self.T.indices, self.T.data, *self._fwd)
        if status != kernels.OK:
            raise StructuralError(f"B Pi^T is not triangular under the leaf-to-root order (step {step})")
        self.ops_count = int(ops_count) + self.T.nnz

    @property
    def n_cells(self) -> int:
        return self.ops.mesh.n_cells

    def _levels_for(self, which):
        if kernels.USE_NUMBA:
            return None
        if which not in self._levels:
            mat, (ro, co) = (self.T, self._fwd) if which == "fwd" else (self.Tt, self._adj)
            self._levels[which] = kernels.triangular_levels(mat.indptr, mat.indices, mat.data, ro, co)[2]
        return self._levels[which]

    def apply(self, f_vec):
        """``S_I f``: RT0 flux supported on ``J`` with ``B S_I f = f``. Accepts ``(C,)`` or ``(C, k)``."""
        f_vec = np.asarray(f_vec, dtype=float)
        if f_vec.shape[0] != self.n_cells:
            raise ValueError(f"expected {self.n_cells} cell values, got {f_vec.shape[0]}")
        x = solve_permuted_triangular(self.T, *self._fwd, f_vec, self._levels_for("fwd"))
        q = np.zeros((self.ops.mesh.n_edges,) + f_vec.shape[1:])
        q[self.J] = x
        return q

    def apply_adjoint(self, r):
        """``S_I^* r = (B Pi^T)^{-T} Pi r``, solved from the root outward."""
        r = np.asarray(r, dtype=float)
        if r.shape[0] != self.ops.mesh.n_edges:
            raise ValueError(f"expected {self.ops.mesh.n_edges} edge values, got {r.shape[0]}")
        return solve_permuted_triangular(self.Tt, *self._adj, r[self.J], self._levels_for("adj"))

    def projection(self, q):
        """``(I - S_I B) q``."""
        return q - self.apply(self.ops.B @ q)

    def projection_adjoint(self, v):
        """``(I - S_I B)^T v = v - B^T S_I^* v``."""
        return v - self.ops.B.T @ self.apply_adjoint(v)

    def to_dict(self) -> dict:
        return {"root": self.root, "shuffle_seed": self.shuffle_seed}


def build_tree(ops: OperatorSet, root=None, shuffle_seed=None) -> TreeSolver:
    """BFS spanning tree of the cell graph rooted behind boundary edge ``root``
    (default: the first boundary edge)."""
    mesh = ops.mesh
    if mesh.boundary_edges.size == 0:
        raise StructuralError("mesh has no boundary edge to root the tree")
    root = int(mesh.boundary_edges[0] if root is None else root)
    if root < 0 or root >= mesh.n_edges or mesh.edge_cells[root, 1] >= 0:
        raise ValueError(f"root {root} is not a boundary edge")
    ptr, nbr, via = cell_adjacency(mesh, shuffle_seed)
    root_cell = int(mesh.edge_cells[root, 0])
    order, parent_edge, _, visits = kernels.bfs(ptr, nbr, via, root_cell)
    if order.size != mesh.n_cells:
        raise StructuralError(f"cell graph is disconnected: reached {order.size} of {mesh.n_cells} cells")
    J = parent_edge[order]
    J[0] = root
    return TreeSolver(ops, root, J, order, shuffle_seed, ops_count=visits + order.size)


class AveragedSolver:
    """Uniform average of several tree right-inverses."""

    def __init__(self, trees):
        if len(trees) < 1:
            raise ValueError("need at least one tree")
        B0 = trees[0].ops.B
        if any(t.ops.B is not B0 and (t.ops.B != B0).nnz for t in trees[1:]):
            raise ValueError("all trees must share the same divergence matrix")
        self.trees = list(trees)
        self.ops = trees[0].ops

    @property
    def n_trees(self) -> int:
        return len(self.trees)

    def apply(self, f_vec):
        out = self.trees[0].apply(f_vec)
        for t in self.trees[1:]:
            out += t.apply(f_vec)
        return out / self.n_trees

    def apply_adjoint(self, r):
        out = self.trees[0].apply_adjoint(r)
        for t in self.trees[1:]:
            out += t.apply_adjoint(r)
        return out / self.n_trees

    def projection(self, q):
        return q - self.apply(self.ops.B @ q)

    def projection_adjoint(self, v):
        return v - self.ops.B.T @ self.apply_adjoint(v)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for i, t in enumerate(self.trees):
            write_matrix(d / f"tree{i}.crom", np.column_stack([t.J, t.order]).astype(float))
        meta = {"n_trees": self.n_trees, "trees": [t.to_dict() for t in self.trees]}
        (d / "trees.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory, ops: OperatorSet) -> "AveragedSolver":
        d = Path(directory)
        meta = json.loads((d / "trees.json").read_text())
        trees = []
        for i, info in enumerate(meta["trees"]):
            arr = read_matrix(d / f"tree{i}.crom").astype(np.int64)
            trees.append(TreeSolver(ops, info["root"], arr[:, 0], arr[:, 1], info["shuffle_seed"]))
        return cls(trees)


def build_averaged(ops: OperatorSet, rng: Rng, n_trees: int) -> AveragedSolver:
    """``n_trees`` BFS trees with distinct boundary roots drawn without replacement.

    With a single tree the root is the first boundary edge.  If there are
    fewer boundary edges than trees, roots are reused and the extra trees
    shuffle the BFS neighbour order with seeds derived from ``rng``.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    bnd = ops.mesh.boundary_edges
    if n_trees == 1:
        return AveragedSolver([build_tree(ops)])
    gen = rng.generator
    roots = gen.choice(bnd, size=min(n_trees, bnd.size), replace=False)
    trees = [build_tree(ops, int(r)) for r in roots]
    k = 0
    while len(trees) < n_trees:
        seed = int(rng.derive(1000 + k).generator.integers(0, 2**63))
        trees.append(build_tree(ops, int(roots[k % roots.size]), shuffle_seed=seed))
        k += 1
    return AveragedSolver(trees)
