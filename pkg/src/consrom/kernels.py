"""Hot inner loops, each with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``CONSROM_NO_NUMBA`` is unset
(or ``0``).  Both paths are always importable so that tests and the benchmark
can compare them directly.
"""

import logging
import os

import numpy as np

logger = logging.getLogger(__name__)

try:
    import numba

    njit = numba.njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(pyfunc=None, **kwargs):
        def wrap(func):
            return func

        return wrap if pyfunc is None else wrap(pyfunc)


def _flag_disabled() -> bool:
    return os.environ.get("CONSROM_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = HAVE_NUMBA and not _flag_disabled()

# status codes shared by the triangular kernels
OK = 0
ZERO_DIAGONAL = 1
NOT_TRIANGULAR = 2


# ---------------------------------------------------------------------------
# permuted lower-triangular solve
# ---------------------------------------------------------------------------


@njit(cache=True)
def _lower_solve_nb(indptr, indices, data, row_order, col_order, col_pos, b, x):
    n = row_order.shape[0]
    nrhs = b.shape[1]
    acc = np.empty(nrhs)
    for k in range(n):
        i = row_order[k]
        j = col_order[k]
        diag = 0.0
        for m in range(nrhs):
            acc[m] = b[i, m]
        for p in range(indptr[i], indptr[i + 1]):
            c = indices[p]
            v = data[p]
            if c == j:
                diag = v
            elif v != 0.0:
                if col_pos[c] > k:
                    return NOT_TRIANGULAR, k
                for m in range(nrhs):
                    acc[m] -= v * x[c, m]
        if diag == 0.0:
            return ZERO_DIAGONAL, k
        for m in range(nrhs):
            x[j, m] = acc[m] / diag
    return OK, -1


def lower_solve_numba(indptr, indices, data, row_order, col_order, b):
    """Forward substitution on a CSR matrix under row/column orderings.

    Step ``k`` solves row ``row_order[k]`` for unknown ``col_order[k]``.
    Returns ``(status, step, x)``; ``status`` is one of the module codes.
    """
    n = len(col_order)
    col_pos = np.empty(n, dtype=np.int64)
    col_pos[col_order] = np.arange(n)
    x = np.zeros((n, b.shape[1]))
    status, step = _lower_solve_nb(
        indptr, indices, data, row_order, col_order, col_pos, np.ascontiguousarray(b), x
    )
    return int(status), int(step), x


def triangular_levels(indptr, indices, data, row_order, col_order):
    """Dependency levels of a permuted triangular system (vectorized).

    Returns ``(status, step, levels)`` where ``levels[k]`` is the wavefront index
    of elimination step ``k``; steps on one level are mutually independent.
    """
    n = len(row_order)
    row_pos = np.empty(n, dtype=np.int64)
    row_pos[row_order] = np.arange(n)
    col_pos = np.empty(n, dtype=np.int64)
    col_pos[col_order] = np.arange(n)

    rows = np.repeat(np.arange(n), np.diff(indptr))
    step = row_pos[rows]
    cpos = col_pos[indices]
    is_diag = indices == col_order[step]
    diag_found = np.zeros(n, dtype=bool)
    diag_found[step[is_diag & (data != 0.0)]] = True

    off = ~is_diag & (data != 0.0)
    bad = off & (cpos > step)
    if bad.any():
        return NOT_TRIANGULAR, int(step[bad].min()), None
    if not diag_found.all():
        return ZERO_DIAGONAL, int(np.flatnonzero(~diag_found)[0]), None

    dep_step = step[off]
    dep_on = cpos[off]
    levels = np.zeros(n, dtype=np.int64)
    # longest-path relaxation; converges in (depth + 1) sweeps
    while True:
        new = levels.copy()
        np.maximum.at(new, dep_step, levels[dep_on] + 1)
        if np.array_equal(new, levels):
            break
        levels = new
    return OK, -1, levels


def lower_solve_numpy(indptr, indices, data, row_order, col_order, b, levels=None):
    """Level-scheduled numpy twin of :func:`lower_solve_numba`."""
    n = len(col_order)
    if levels is None:
        status, step, levels = triangular_levels(indptr, indices, data, row_order, col_order)
        if status != OK:
            return status, step, None
    col_pos = np.empty(n, dtype=np.int64)
    col_pos[col_order] = np.arange(n)
    row_pos = np.empty(n, dtype=np.int64)
    row_pos[row_order] = np.arange(n)

    rows = np.repeat(np.arange(n), np.diff(indptr))
    step_of = row_pos[rows]
    is_diag = indices == col_order[step_of]
    diag = np.zeros(n)
    diag[step_of[is_diag]] = data[is_diag]
    off = ~is_diag & (data != 0.0)
    off_step, off_col, off_val = step_of[off], indices[off], data[off]
    off_level = levels[off_step]

    x = np.zeros((n, b.shape[1]))
    order = np.argsort(levels, kind="stable")
    bounds = np.searchsorted(levels[order], np.arange(levels.max() + 2))
    off_sort = np.argsort(off_level, kind="stable")
    off_bounds = np.searchsorted(off_level[off_sort], np.arange(levels.max() + 2))
    for lev in range(levels.max() + 1):
        steps = order[bounds[lev]:bounds[lev + 1]]
        acc = b[row_order[steps]].astype(float, copy=True)
        sel = off_sort[off_bounds[lev]:off_bounds[lev + 1]]
        if sel.size:
            local = np.empty(n, dtype=np.int64)
            local[steps] = np.arange(steps.size)
            np.subtract.at(acc, local[off_step[sel]], off_val[sel, None] * x[off_col[sel]])
        x[col_order[steps]] = acc / diag[steps, None]
    return OK, -1, x


# ---------------------------------------------------------------------------
# breadth-first search over a CSR adjacency
# ---------------------------------------------------------------------------


@njit(cache=True)
def _bfs_nb(adj_ptr, adj_node, adj_edge, root, order, parent_edge, depth):
    n = adj_ptr.shape[0] - 1
    seen = np.zeros(n, dtype=np.bool_)
    seen[root] = True
    order[0] = root
    depth[root] = 0
    head = 0
    tail = 1
    visits = 0
    while head < tail:
        u = order[head]
        head += 1
        for p in range(adj_ptr[u], adj_ptr[u + 1]):
            visits += 1
            v = adj_node[p]
            if not seen[v]:
                seen[v] = True
                parent_edge[v] = adj_edge[p]
                depth[v] = depth[u] + 1
                order[tail] = v
                tail += 1
    return tail, visits


def bfs_numba(adj_ptr, adj_node, adj_edge, root):
    """Queue BFS. Returns ``(order, parent_edge, depth, visits)``.

    ``order`` holds only reached nodes; unreached nodes keep depth ``-1``.
    """
    n = len(adj_ptr) - 1
    order = np.full(n, -1, dtype=np.int64)
    parent_edge = np.full(n, -1, dtype=np.int64)
    depth = np.full(n, -1, dtype=np.int64)
    count, visits = _bfs_nb(adj_ptr, adj_node, adj_edge, root, order, parent_edge, depth)
    return order[:count], parent_edge, depth, int(visits)


def bfs_numpy(adj_ptr, adj_node, adj_edge, root):
    """Level-synchronous BFS producing exactly the queue-BFS tree."""
    n = len(adj_ptr) - 1
    parent_edge = np.full(n, -1, dtype=np.int64)
    depth = np.full(n, -1, dtype=np.int64)
    depth[root] = 0
    frontier = np.array([root], dtype=np.int64)
    chunks = [frontier]
    visits = 0
    lev = 0
    while frontier.size:
        starts = adj_ptr[frontier]
        counts = adj_ptr[frontier + 1] - starts
        total = int(counts.sum())
        visits += total
        if total == 0:
            break
        offs = np.repeat(starts - np.cumsum(counts) + counts, counts) + np.arange(total)
        cand = adj_node[offs]
        fresh = depth[cand] < 0
        cand, offs = cand[fresh], offs[fresh]
        if cand.size == 0:
            break
        _, first = np.unique(cand, return_index=True)
        first.sort()
        frontier = cand[first]
        lev += 1
        depth[frontier] = lev
        parent_edge[frontier] = adj_edge[offs[first]]
        chunks.append(frontier)
    return np.concatenate(chunks), parent_edge, depth, visits


# ---------------------------------------------------------------------------
# cyclic Jacobi eigensolver for symmetric matrices
# ---------------------------------------------------------------------------


@njit(cache=True)
def _jacobi_nb(a, v, tol, max_sweeps):
    n = a.shape[0]
    fro = 0.0
    for i in range(n):
        for j in range(n):
            fro += a[i, j] * a[i, j]
    floor = 1e-30 * np.sqrt(fro)
    for sweep in range(max_sweeps):
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= floor or abs(apq) <= tol * np.sqrt(abs(a[p, p] * a[q, q])):
                    continue
                rotations += 1
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + np.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
        if rotations == 0:
            return sweep
    return -1


def jacobi_numba(g, tol=1e-15, max_sweeps=60):
    """Row-cyclic Jacobi. Returns ``(diag, vectors, sweeps)``; sweeps -1 = no convergence.

    A pair is rotated only while ``|a_pq| > tol * sqrt(|a_pp a_qq|)``; the
    iteration stops after the first sweep with no rotation.
    """
    a = np.array(g, dtype=float, order="C", copy=True)
    v = np.eye(a.shape[0])
    sweeps = _jacobi_nb(a, v, tol, max_sweeps)
    return np.diag(a).copy(), v, int(sweeps)


def _round_robin(n):
    """Pairings of a round-robin tournament; each round is a set of disjoint pairs."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = [(players[i], players[m - 1 - i]) for i in range(m // 2)]
        pairs = [(min(p, q), max(p, q)) for p, q in pairs if p < n and q < n]
        rounds.append((np.array([p for p, _ in pairs], dtype=np.int64),
                       np.array([q for _, q in pairs], dtype=np.int64)))
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_numpy(g, tol=1e-15, max_sweeps=60):
    """Parallel-ordering Jacobi: each round rotates a set of disjoint pairs at once."""
    a = np.array(g, dtype=float, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    floor = 1e-30 * np.sqrt(float(np.sum(a * a)))
    rounds = _round_robin(n)
    for sweep in range(max_sweeps):
        rotations = 0
        for p, q in rounds:
            if p.size == 0:
                continue
            apq = a[p, q]
            live = (np.abs(apq) > floor) & (np.abs(apq) > tol * np.sqrt(np.abs(a[p, p] * a[q, q])))
            if not live.any():
                continue
            rotations += int(live.sum())
            p, q, apq = p[live], q[live], apq[live]
            tau = (a[q, q] - a[p, p]) / (2.0 * apq)
            t = np.where(tau >= 0.0, 1.0, -1.0) / (np.abs(tau) + np.sqrt(1.0 + tau * tau))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c
            ap, aq = a[:, p].copy(), a[:, q].copy()
            a[:, p] = c * ap - s * aq
            a[:, q] = s * ap + c * aq
            ap, aq = a[p, :].copy(), a[q, :].copy()
            a[p, :] = c[:, None] * ap - s[:, None] * aq
            a[q, :] = s[:, None] * ap + c[:, None] * aq
            a[p, q] = 0.0
            a[q, p] = 0.0
            vp, vq = v[:, p].copy(), v[:, q].copy()
            v[:, p] = c * vp - s * vq
            v[:, q] = s * vp + c * vq
        if rotations == 0:
            return np.diag(a).copy(), v, sweep
    return np.diag(a).copy(), v, -1


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------


def lower_solve(indptr, indices, data, row_order, col_order, b, levels=None):
    if USE_NUMBA:
        return lower_solve_numba(indptr, indices, data, row_order, col_order, b)
    return lower_solve_numpy(indptr, indices, data, row_order, col_order, b, levels)


def bfs(adj_ptr, adj_node, adj_edge, root):
    if USE_NUMBA:
        return bfs_numba(adj_ptr, adj_node, adj_edge, root)
    return bfs_numpy(adj_ptr, adj_node, adj_edge, root)


def jacobi(g, tol=1e-15, max_sweeps=60):
    if USE_NUMBA:
        return jacobi_numba(g, tol, max_sweeps)
    return jacobi_numpy(g, tol, max_sweeps)
