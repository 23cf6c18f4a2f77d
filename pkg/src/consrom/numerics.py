"""Linear-algebra substrate: sparse helpers, direct and triangular solves,
symmetric eigendecomposition, seeded sampling and the binary matrix format.

Sparse matrices are ``scipy.sparse.csr_array`` instances kept in canonical
form (sorted indices, no explicit zeros, see :func:`compress`).
"""

import struct
from pathlib import Path

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from . import kernels
from .errors import FactorizationError, NumericalError, StructuralError

MAGIC = b"CROM1"
KIND_DENSE = 0
KIND_SPARSE = 1


# ---------------------------------------------------------------------------
# sparse helpers
# ---------------------------------------------------------------------------


def compress(a) -> sps.csr_array:
    """Canonical CSR copy: float64, summed duplicates, sorted, zeros dropped."""
    a = sps.csr_array(a, dtype=float, copy=True)
    a.sum_duplicates()
    a.eliminate_zeros()
    a.sort_indices()
    return a


def spmv(a, x):
    x = np.asarray(x, dtype=float)
    if x.shape[0] != a.shape[1]:
        raise ValueError(f"dimension mismatch: matrix has {a.shape[1]} columns, vector {x.shape[0]}")
    return a @ x


def _residual_ok(a, x, b, rtol):
    r = a @ x - b
    return np.max(np.abs(r)) <= rtol * (1.0 + np.max(np.abs(b))) if r.size else True


class SparseLU:
    """Reusable LU factorization (SuperLU, partial pivoting) with residual guard."""

    def __init__(self, a, rtol=1e-10):
        if a.shape[0] != a.shape[1]:
            raise ValueError(f"matrix must be square, got {a.shape}")
        self.a = sps.csc_array(a, dtype=float)
        self.rtol = rtol
        try:
            self._lu = spla.splu(self.a, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise FactorizationError(f"sparse LU failed: {exc}") from exc

    def solve(self, b):
        b = np.asarray(b, dtype=float)
        if b.shape[0] != self.a.shape[0]:
            raise ValueError(f"dimension mismatch: {self.a.shape[0]} rows vs rhs {b.shape[0]}")
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise FactorizationError("non-finite solution; matrix singular to working precision")
        if not _residual_ok(self.a, x, b, self.rtol):
            # one step of iterative refinement before giving up
            x = x + self._lu.solve(b - self.a @ x)
            if not _residual_ok(self.a, x, b, self.rtol):
                raise FactorizationError("residual bound not met; matrix singular to tolerance")
        return x


def solve_sparse(a, b, rtol=1e-10):
    """Direct solve with ``||Ax - b||_inf <= rtol (1 + ||b||_inf)`` guaranteed or raised."""
    return SparseLU(a, rtol).solve(b)


def solve_permuted_triangular(t, row_order, col_order, b, levels=None):
    """Solve ``T x = b`` where ``T[row_order][:, col_order]`` is lower triangular.

    Cost is O(nnz) per right-hand side. ``b`` may be a vector or an
    ``(n, k)`` block. ``levels`` (wavefront schedule) is only used by the numpy
    path and is computed on demand when omitted.
    """
    t = sps.csr_array(t)
    b = np.asarray(b, dtype=float)
    vec = b.ndim == 1
    b2 = b[:, None] if vec else b
    if t.shape[0] != t.shape[1] or t.shape[0] != len(row_order) or b2.shape[0] != t.shape[0]:
        raise ValueError("dimension mismatch in permuted triangular solve")
    status, step, x = kernels.lower_solve(
        t.indptr.astype(np.int64), t.indices.astype(np.int64), t.data,
        np.asarray(row_order, dtype=np.int64), np.asarray(col_order, dtype=np.int64), b2, levels,
    )
    if status == kernels.ZERO_DIAGONAL:
        raise StructuralError(f"zero diagonal at elimination step {step} (broken tree?)")
    if status == kernels.NOT_TRIANGULAR:
        raise StructuralError(f"matrix is not triangular under the given permutation (step {step})")
    return x[:, 0] if vec else x


# ---------------------------------------------------------------------------
# dense symmetric eigenproblem
# ---------------------------------------------------------------------------


def sym_eig(g, tol=1e-15, max_sweeps=60):
    """Eigenpairs of a symmetric matrix by cyclic Jacobi, eigenvalues descending.

    The input is symmetrized as ``(G + G^T)/2`` first.
    """
    g = np.asarray(g, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {g.shape}")
    g = 0.5 * (g + g.T)
    lam, vec, sweeps = kernels.jacobi(g, tol, max_sweeps)
    if sweeps < 0:
        raise NumericalError(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(-lam, kind="stable")
    return lam[order], vec[:, order]


# ---------------------------------------------------------------------------
# reproducible sampling
# ---------------------------------------------------------------------------


class Rng:
    """Seeded counter-based generator (Philox 4x64).

    Parallel consumers derive independent streams with :meth:`derive`.
    """

    algorithm = "philox4x64"

    def __init__(self, seed: int):
        self.seed = int(seed)
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")
        self.generator = np.random.Generator(np.random.Philox(self.seed))

    def derive(self, offset: int) -> "Rng":
        return Rng((self.seed + int(offset)) % 2**64)

    def __repr__(self):
        return f"Rng(seed={self.seed}, algorithm={self.algorithm!r})"


def latin_hypercube(rng: Rng, n_samples: int, bounds) -> np.ndarray:
    """Latin-hypercube design of shape ``(n_samples, len(bounds))``.

    In every dimension each of the ``n_samples`` equal-width bins of
    ``[lo, hi)`` holds exactly one sample.
    """
    bounds = np.asarray(bounds, dtype=float)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if bounds.ndim != 2 or bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
        raise ValueError(f"bounds must be a list of [lo, hi] pairs with lo < hi, got {bounds.tolist()}")
    gen = rng.generator
    d = bounds.shape[0]
    u = np.empty((n_samples, d))
    for k in range(d):
        perm = gen.permutation(n_samples)
        u[:, k] = (perm + gen.random(n_samples)) / n_samples
    # keep (n-1+u)/n from rounding up onto the right edge
    u = np.minimum(u, np.nextafter(1.0, 0.0))
    lo, hi = bounds[:, 0], bounds[:, 1]
    x = lo + u * (hi - lo)
    return np.minimum(x, np.nextafter(hi, lo))


# ---------------------------------------------------------------------------
# binary matrix format
# ---------------------------------------------------------------------------


def write_matrix(path, a):
    """Write a dense (2-D or 1-D as a column) or sparse matrix in CROM1 format."""
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        if sps.issparse(a):
            a = compress(a)
            rows, cols = a.shape
            fh.write(struct.pack("<BQQQ", KIND_SPARSE, rows, cols, a.nnz))
            fh.write(np.asarray(a.indptr, dtype="<u8").tobytes())
            fh.write(np.asarray(a.indices, dtype="<u8").tobytes())
            fh.write(np.asarray(a.data, dtype="<f8").tobytes())
        else:
            a = np.asarray(a, dtype=float)
            if a.ndim == 1:
                a = a[:, None]
            rows, cols = a.shape
            fh.write(struct.pack("<BQQ", KIND_DENSE, rows, cols))
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def read_matrix(path):
    """Read a CROM1 file: ``numpy.ndarray`` for dense, ``csr_array`` for sparse."""
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError(f"{path}: not a CROM1 matrix file")
    kind = raw[5]
    rows, cols = struct.unpack_from("<QQ", raw, 6)
    off = 22
    if kind == KIND_DENSE:
        data = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off)
        return data.reshape(rows, cols).astype(float)
    if kind == KIND_SPARSE:
        (nnz,) = struct.unpack_from("<Q", raw, off)
        off += 8
        indptr = np.frombuffer(raw, dtype="<u8", count=rows + 1, offset=off).astype(np.int64)
        off += 8 * (rows + 1)
        indices = np.frombuffer(raw, dtype="<u8", count=nnz, offset=off).astype(np.int64)
        off += 8 * nnz
        data = np.frombuffer(raw, dtype="<f8", count=nnz, offset=off).astype(float)
        return sps.csr_array((data, indices, indptr), shape=(rows, cols))
    raise ValueError(f"{path}: unknown matrix kind {kind}")
