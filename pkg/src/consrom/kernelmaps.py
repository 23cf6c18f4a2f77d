"""Linear maps from a potential space onto divergence-free RT0 fluxes.

Three constructions share one interface (``apply``/``adjoint`` on vectors or
column blocks):

* ``projection``: ``r -> (I - S_I B) r`` on the full flux space;
* ``pod``: ``c -> V c`` with an M-orthonormal basis of homogeneous snapshots;
* ``curl``: ``r -> Curl r`` on P1 nodal potentials.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import NumericalError
from .fem import OperatorSet
from .numerics import read_matrix, sym_eig, write_matrix

VARIANTS = ("projection", "pod", "curl")
RANK_RTOL = 1e-14


@dataclass
class PodBasis:
    V: np.ndarray             # (n_edges, n), M-orthonormal columns
    eigenvalues: np.ndarray   # all Gram eigenvalues, descending
    n_samples: int

    @property
    def n(self) -> int:
        return self.V.shape[1]

    @property
    def truncation_energy(self) -> float:
        return float(np.sum(np.clip(self.eigenvalues[self.n:], 0.0, None)))

    def coefficients(self, ops: OperatorSet, q):
        """``V^* q = V^T M q``."""
        return self.V.T @ (ops.M_q @ q)

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_matrix(d / "pod_basis.crom", self.V)
        write_matrix(d / "pod_eigenvalues.crom", self.eigenvalues)
        write_matrix(d / "pod_samples.crom", np.array([float(self.n_samples)]))

    @classmethod
    def load(cls, directory) -> "PodBasis":
        d = Path(directory)
        return cls(
            read_matrix(d / "pod_basis.crom"),
            read_matrix(d / "pod_eigenvalues.crom")[:, 0],
            int(read_matrix(d / "pod_samples.crom")[0, 0]),
        )


def homogeneous_part(solver, q):
    """``(I - S_I B) q`` for flux rows ``q`` of shape ``(N_s, n_edges)``."""
    q = np.atleast_2d(np.asarray(q, dtype=float))
    return solver.projection(q.T).T


def build_pod(snapshots, solver, ops: OperatorSet, n: int) -> PodBasis:
    """POD of the homogeneous snapshot fluxes by the method of snapshots.

    ``snapshots`` is a list of objects with a ``q`` attribute or an array of
    flux rows.  The Gram matrix ``U M U^T`` is diagonalized and
    ``V = U^T W_n Lambda_n^{-1/2}``.
    """
    Q = np.array([s.q for s in snapshots]) if not isinstance(snapshots, np.ndarray) else snapshots
    if Q.ndim != 2 or Q.shape[0] < 1:
        raise ValueError("need at least one snapshot")
    n_s = Q.shape[0]
    if not 1 <= n <= n_s:
        raise ValueError(f"n must lie in [1, {n_s}], got {n}")
    U = homogeneous_part(solver, Q)
    G = U @ (ops.M_q @ U.T)
    _, W = sym_eig(G)
    # eigenvalues of the formed Gram matrix carry absolute error ~eps*lam_1;
    # the Rayleigh quotients ||U^T w||_M^2 resolve the small ones to high
    # relative accuracy, which the truncation energy depends on
    Y = U.T @ W
    lam = np.einsum("ij,ij->j", Y, ops.M_q @ Y)
    order = np.argsort(-lam, kind="stable")
    lam, Y = lam[order], Y[:, order]
    if not lam[0] > 0.0 or lam[n - 1] < RANK_RTOL * lam[0]:
        ok = int(np.sum(lam > RANK_RTOL * max(lam[0], 0.0)))
        raise NumericalError(
            f"snapshot set has numerical rank {ok} < n={n}; choose n <= {ok}"
        )
    V = Y[:, :n] / np.sqrt(lam[:n])
    # 1/sqrt(lam) amplifies the roundoff divergence of U; project it out again
    V = solver.projection(V)
    # small modes lose M-orthogonality through the squared conditioning of the
    # Gram matrix; one Cholesky pass restores it without changing the nested spans
    L = np.linalg.cholesky(V.T @ (ops.M_q @ V))
    V = solve_triangular(L, V.T, lower=True).T
    return PodBasis(V, lam, n_s)


class KernelMap:
    """Linear map ``S_0`` from potentials of dimension ``dim`` into Ker(B)."""

    def __init__(self, variant: str, ops: OperatorSet, solver=None, pod: PodBasis = None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {variant!r}")
        self.variant = variant
        self.ops = ops
        self.solver = solver
        self.pod = pod
        if variant == "projection" and solver is None:
            raise ValueError("projection map needs a tree solver")
        if variant == "pod" and pod is None:
            raise ValueError("pod map needs a PodBasis")

    @property
    def dim(self) -> int:
        if self.variant == "projection":
            return self.ops.mesh.n_edges
        if self.variant == "pod":
            return self.pod.n
        return self.ops.mesh.n_nodes

    def _check(self, x, n, what):
        x = np.asarray(x, dtype=float)
        if x.shape[0] != n:
            raise ValueError(f"{what} has leading dimension {x.shape[0]}, expected {n}")
        return x

    def apply(self, r):
        r = self._check(r, self.dim, "potential")
        if self.variant == "projection":
            return self.solver.projection(r)
        if self.variant == "pod":
            return self.pod.V @ r
        return self.ops.curl @ r

    def adjoint(self, v):
        """Euclidean transpose ``S_0^T v`` (used for gradients)."""
        v = self._check(v, self.ops.mesh.n_edges, "flux")
        if self.variant == "projection":
            return self.solver.projection_adjoint(v)
        if self.variant == "pod":
            return self.pod.V.T @ v
        return self.ops.curl.T @ v

    def apply_rows(self, R):
        return self.apply(np.asarray(R).T).T

    def adjoint_rows(self, G):
        return self.adjoint(np.asarray(G).T).T


def apply_S0(kmap: KernelMap, r):
    return kmap.apply(r)
