"""Discrete operators of the lowest-order mixed method RT0 x P0, plus the
rotated gradient P1 -> RT0.

RT0 degrees of freedom are integrated normal fluxes ``q_e = int_e q . nu_e``.
On cell ``c`` the basis function of its local edge ``k`` is

    phi_k(x) = s_k (x - x_k) / (2 |c|)

with ``x_k`` the opposite vertex and ``s_k`` the incidence sign, so that
``int_c div phi_k = s_k`` and the divergence matrix is the signed incidence
matrix of the mesh.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .mesh import Mesh2D
from .numerics import compress, read_matrix, write_matrix

SPACES = {"RT0": "n_edges", "P0": "n_cells", "P1": "n_nodes"}

# 3-point Gauss-Legendre on [0, 1]
_GL_T = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_GL_W = np.array([5.0, 8.0, 5.0]) / 18.0


@dataclass(frozen=True)
class DofField:
    space: str
    values: np.ndarray
    mesh: Mesh2D

    def __post_init__(self):
        if self.space not in SPACES:
            raise ValueError(f"unknown space {self.space!r}")
        expected = getattr(self.mesh, SPACES[self.space])
        if np.shape(self.values) != (expected,):
            raise ValueError(f"{self.space} field needs {expected} coefficients, got {np.shape(self.values)}")


class OperatorSet:
    """Assembled operators on one mesh.

    Attributes:
        B: divergence, ``(n_cells, n_edges)``, entries +-1.
        M_q: RT0 mass matrix (unit coefficient).
        M_p: P0 mass matrix, ``diag(|c|)``.
        curl: rotated gradient ``(n_edges, n_nodes)``, entries +-1.
        Ex, Ey: evaluation of an RT0 field at cell centroids, ``(n_cells, n_edges)``.
    """

    def __init__(self, mesh: Mesh2D):
        self.mesh = mesh
        C, E = mesh.n_cells, mesh.n_edges
        rows = np.repeat(np.arange(C), 3)
        self.B = compress(sps.csr_array(
            (mesh.cell_edge_signs.ravel().astype(float), (rows, mesh.cell_edges.ravel())), shape=(C, E)
        ))
        self.M_p = compress(sps.diags_array(mesh.cell_areas).tocsr())

        self._local_mass = _local_rt0_mass(mesh)
        r = np.broadcast_to(mesh.cell_edges[:, :, None], (C, 3, 3)).ravel()
        c = np.broadcast_to(mesh.cell_edges[:, None, :], (C, 3, 3)).ravel()
        keys, self._mass_slot = np.unique(r * E + c, return_inverse=True)
        self._mass_indices = keys % E
        self._mass_indptr = np.searchsorted(keys // E, np.arange(E + 1))
        self.M_q = self.mass_matrix()

        self.curl = _curl_matrix(mesh)

        basis = _centroid_basis(mesh)  # (C, 3, 2)
        self.Ex = compress(sps.csr_array((basis[..., 0].ravel(), (rows, mesh.cell_edges.ravel())), shape=(C, E)))
        self.Ey = compress(sps.csr_array((basis[..., 1].ravel(), (rows, mesh.cell_edges.ravel())), shape=(C, E)))

    def mass_matrix(self, cell_coef=None) -> sps.csr_array:
        """RT0 mass matrix weighted by a per-cell coefficient (default 1)."""
        loc = self._local_mass
        if cell_coef is not None:
            loc = loc * np.asarray(cell_coef, dtype=float)[:, None, None]
        data = np.bincount(self._mass_slot, weights=loc.ravel(), minlength=len(self._mass_indices))
        E = self.mesh.n_edges
        return sps.csr_array((data, self._mass_indices.copy(), self._mass_indptr.copy()), shape=(E, E))

    def hdiv_matrix(self) -> sps.csr_array:
        """Gram matrix of the H(div) inner product, ``M_q + B^T diag(1/|c|) B``."""
        inv_area = sps.diags_array(1.0 / self.mesh.cell_areas)
        return compress(self.M_q + self.B.T @ inv_area @ self.B)

    def centroid_values(self, q):
        """RT0 field(s) evaluated at cell centroids; ``q`` is ``(E,)`` or ``(E, k)``."""
        return self.Ex @ q, self.Ey @ q

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("B", "M_q", "M_p", "curl"):
            write_matrix(d / f"{name}.crom", getattr(self, name))

    @staticmethod
    def load_matrices(directory) -> dict:
        d = Path(directory)
        return {name: read_matrix(d / f"{name}.crom") for name in ("B", "M_q", "M_p", "curl")}


def assemble_operators(mesh: Mesh2D) -> OperatorSet:
    return OperatorSet(mesh)


def _edge_midpoints_per_cell(mesh):
    p = mesh.nodes[mesh.cells]  # (C, 3, 2)
    # midpoint of local edge k (opposite vertex k)
    return 0.5 * (p[:, [1, 2, 0]] + p[:, [2, 0, 1]])


def _local_rt0_mass(mesh):
    p = mesh.nodes[mesh.cells]
    mids = _edge_midpoints_per_cell(mesh)
    area = mesh.cell_areas
    s = mesh.cell_edge_signs.astype(float)
    diff = mids[:, None, :, :] - p[:, :, None, :]  # (C, basis, qp, 2)
    integral = np.einsum("ckmd,clmd->ckl", diff, diff) * (area / 3.0)[:, None, None]
    return integral * (s[:, :, None] * s[:, None, :]) / (4.0 * area**2)[:, None, None]


def _centroid_basis(mesh):
    p = mesh.nodes[mesh.cells]
    x = p.mean(axis=1)
    s = mesh.cell_edge_signs.astype(float)
    return s[..., None] * (x[:, None, :] - p) / (2.0 * mesh.cell_areas)[:, None, None]


def _curl_matrix(mesh):
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    nu = mesh.edge_normals
    tangent = np.column_stack([-nu[:, 1], nu[:, 0]])
    d = mesh.nodes[j] - mesh.nodes[i]
    j_is_head = np.einsum("ij,ij->i", d, tangent) > 0
    head = np.where(j_is_head, j, i)
    tail = np.where(j_is_head, i, j)
    E = mesh.n_edges
    rows = np.concatenate([np.arange(E), np.arange(E)])
    cols = np.concatenate([head, tail])
    vals = np.concatenate([np.ones(E), -np.ones(E)])
    return compress(sps.csr_array((vals, (rows, cols)), shape=(E, mesh.n_nodes)))


def _call(fn, pts, mu):
    return fn(pts) if mu is None else fn(pts, mu)


def project_source(mesh: Mesh2D, f, mu=None) -> np.ndarray:
    """Cell integrals ``int_c f dx`` by the edge-midpoint rule (exact for quadratics).

    ``f`` maps points of shape ``(..., 2)`` (and ``mu`` when given) to values.
    """
    mids = _edge_midpoints_per_cell(mesh)
    vals = np.asarray(_call(f, mids, mu), dtype=float)
    vals = np.broadcast_to(vals, mids.shape[:2])
    return vals.sum(axis=1) * mesh.cell_areas / 3.0


def _edge_points(mesh, edge_ids):
    a = mesh.nodes[mesh.edges[edge_ids, 0]]
    b = mesh.nodes[mesh.edges[edge_ids, 1]]
    return a[:, None, :] + _GL_T[None, :, None] * (b - a)[:, None, :]


def assemble_rhs_g(mesh: Mesh2D, g=None, p_bc=None, mu=None) -> np.ndarray:
    """Flux-equation right-hand side ``(g, v) - <p_bc, v . nu>`` for every RT0 basis ``v``.

    ``g`` is a vector field (callable or constant 2-vector) and ``p_bc`` the
    boundary pressure (callable or constant); ``None`` means zero.  The
    pressure condition is imposed on the whole boundary.
    """
    E = mesh.n_edges
    rhs = np.zeros(E)
    if g is not None:
        p = mesh.nodes[mesh.cells]
        mids = _edge_midpoints_per_cell(mesh)
        gv = _call(g, mids, mu) if callable(g) else np.asarray(g, dtype=float)
        gv = np.broadcast_to(np.asarray(gv, dtype=float), mids.shape)
        s = mesh.cell_edge_signs.astype(float)
        diff = mids[:, None, :, :] - p[:, :, None, :]  # (C, basis, qp, 2)
        loc = np.einsum("ckmd,cmd->ck", diff, gv) / 3.0 * s / 2.0
        np.add.at(rhs, mesh.cell_edges.ravel(), loc.ravel())
    if p_bc is not None:
        bnd = mesh.boundary_edges
        if callable(p_bc):
            vals = np.asarray(_call(p_bc, _edge_points(mesh, bnd), mu), dtype=float)
            avg = np.broadcast_to(vals, (bnd.size, 3)) @ _GL_W
        else:
            avg = np.full(bnd.size, float(p_bc))
        # v . nu = 1/|e| on the edge and int_e = |e| * average
        rhs[bnd] -= avg
    return rhs


def interpolate_rt0(mesh: Mesh2D, field) -> np.ndarray:
    """RT0 interpolant: edge fluxes ``int_e v . nu_e`` by 3-point Gauss."""
    pts = _edge_points(mesh, np.arange(mesh.n_edges))
    v = np.asarray(field(pts) if callable(field) else field, dtype=float)
    v = np.broadcast_to(v, pts.shape)
    flux = np.einsum("eqd,ed->eq", v, mesh.edge_normals) @ _GL_W
    return flux * mesh.edge_lengths


def norms(mesh: Mesh2D, ops: OperatorSet, q):
    """``(L2, Hdiv)`` norms of an RT0 field.

    ``Hdiv^2 = L2^2 + sum_c |c| d_c^2`` with the cellwise divergence ``d_c = (Bq)_c / |c|``.
    """
    q = q.values if isinstance(q, DofField) else np.asarray(q, dtype=float)
    l2sq = float(q @ (ops.M_q @ q))
    div = ops.B @ q
    divsq = float(np.sum(div * div / mesh.cell_areas))
    return np.sqrt(max(l2sq, 0.0)), np.sqrt(max(l2sq, 0.0) + divsq)


def batch_sq_norms(ops: OperatorSet, q):
    """Squared L2 and H(div) norms of the rows of ``q`` (shape ``(k, E)``)."""
    q = np.atleast_2d(q)
    l2sq = np.einsum("ij,ij->i", q, (ops.M_q @ q.T).T)
    div = (ops.B @ q.T).T
    divsq = np.sum(div * div / ops.mesh.cell_areas, axis=1)
    l2sq = np.maximum(l2sq, 0.0)
    return l2sq, l2sq + divsq


def pressure_l2(mesh: Mesh2D, p):
    p = np.atleast_2d(p)
    return np.sqrt(np.sum(p * p * mesh.cell_areas, axis=1))
