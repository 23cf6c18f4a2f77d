import numpy as np
import pytest

from consrom.errors import StructuralError
from consrom.fem import assemble_operators
from consrom.mesh import build_mesh, structured_unit_square
from consrom.numerics import Rng
from consrom.tree import AveragedSolver, build_averaged, build_tree


def _res(ops, q, f):
    return np.max(np.abs(ops.B @ q - f))


def test_single_triangle():
    ops = assemble_operators(build_mesh([[0, 0], [1, 0], [0, 1]], [[0, 1, 2]]))
    t = build_tree(ops)
    j0 = ops.mesh.boundary_edges[0]
    np.testing.assert_array_equal(t.J, [j0])
    assert abs(t.T.toarray()[0, 0]) == 1.0
    q = t.apply(np.array([2.5]))
    assert abs(q[j0]) == 2.5 and np.count_nonzero(q) == 1
    assert _res(ops, q, [2.5]) == 0.0


def test_n2_explicit_permutation_triangular():
    ops = assemble_operators(structured_unit_square(2))
    t = build_tree(ops)
    assert t.J.size == 8 and np.unique(t.J).size == 8
    ro, co = t._fwd
    P = t.T.toarray()[np.ix_(ro, co)]
    assert np.all(np.triu(P, 1) == 0.0)
    assert np.all(np.abs(np.diag(P)) == 1.0)
    # tree edges are interior (except the root) and connect all cells
    interior = ops.mesh.edge_cells[t.J[1:], 1] >= 0
    assert interior.all()


def test_construction_cost_linear():
    ratios = []
    for n in (8, 16, 32):
        ops = assemble_operators(structured_unit_square(n))
        t = build_tree(ops)
        ratios.append(t.ops_count / ops.mesh.n_edges)
    assert max(ratios) / min(ratios) < 1.1
    assert max(ratios) < 5


@pytest.fixture(scope="module")
def tree8(ops8):
    return build_tree(ops8)


def test_apply_zero_and_support(ops8, tree8):
    assert not np.any(tree8.apply(np.zeros(ops8.mesh.n_cells)))
    f = ops8.mesh.cell_areas
    q = tree8.apply(f)
    assert _res(ops8, q, f) <= 1e-13
    off = np.setdiff1d(np.arange(ops8.mesh.n_edges), tree8.J)
    assert not np.any(q[off])


def test_right_inverse_random(ops8, tree8):
    F = np.random.default_rng(0).standard_normal((ops8.mesh.n_cells, 100))
    Q = tree8.apply(F)
    assert np.max(np.abs(ops8.B @ Q - F)) <= 1e-12 * (1 + np.abs(F).max())


def test_linearity(ops8, tree8):
    g = np.random.default_rng(1)
    f1, f2 = g.standard_normal((2, ops8.mesh.n_cells))
    lhs = tree8.apply(2.0 * f1 - 3.0 * f2)
    rhs = 2.0 * tree8.apply(f1) - 3.0 * tree8.apply(f2)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_adjoint_identity(ops8, tree8):
    g = np.random.default_rng(2)
    assert not np.any(tree8.apply_adjoint(np.zeros(ops8.mesh.n_edges)))
    for _ in range(20):
        f = g.standard_normal(ops8.mesh.n_cells)
        r = g.standard_normal(ops8.mesh.n_edges)
        lhs, rhs = tree8.apply(f) @ r, f @ tree8.apply_adjoint(r)
        assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_projection_laws(ops8, tree8):
    X = np.random.default_rng(3).standard_normal((ops8.mesh.n_edges, 10))
    P = tree8.projection(X)
    np.testing.assert_allclose(tree8.projection(P), P, atol=1e-12)
    assert np.abs(ops8.B @ P).max() <= 1e-12
    K = tree8.projection(tree8.apply(ops8.B @ X))
    assert np.abs(K).max() <= 1e-12
    v = np.random.default_rng(4).standard_normal(ops8.mesh.n_edges)
    x = X[:, 0]
    assert abs(tree8.projection(x) @ v - x @ tree8.projection_adjoint(v)) <= 1e-11


def test_averaged_single_equals_tree(ops8, tree8):
    avg = build_averaged(ops8, Rng(0), 1)
    f = np.random.default_rng(5).standard_normal(ops8.mesh.n_cells)
    np.testing.assert_array_equal(avg.apply(f), tree8.apply(f))


@pytest.mark.parametrize("nt", [1, 2, 10])
def test_averaged_right_inverse(ops8, nt):
    avg = build_averaged(ops8, Rng(9), nt)
    assert avg.n_trees == nt
    assert len({t.root for t in avg.trees}) == nt
    f = ops8.mesh.cell_areas
    q = avg.apply(f)
    assert _res(ops8, q, f) <= 1e-12 * (1 + np.abs(f).max())
    F = np.random.default_rng(nt).standard_normal((ops8.mesh.n_cells, 50))
    assert np.max(np.abs(ops8.B @ avg.apply(F) - F)) <= 1e-12 * (1 + np.abs(F).max())
    if nt == 10:
        assert np.count_nonzero(q) > max(np.count_nonzero(t.apply(f)) for t in avg.trees)


def test_convexity_witness(ops8):
    avg = build_averaged(ops8, Rng(2), 2)
    f = np.random.default_rng(6).standard_normal(ops8.mesh.n_cells)
    q = 0.5 * avg.trees[0].apply(f) + 0.5 * avg.trees[1].apply(f)
    assert _res(ops8, q, f) <= 1e-13
    np.testing.assert_allclose(q, avg.apply(f), atol=1e-15)


def test_root_reuse_when_few_boundary_edges():
    ops = assemble_operators(structured_unit_square(1))
    avg = build_averaged(ops, Rng(0), 6)
    assert avg.n_trees == 6
    assert sum(t.shuffle_seed is not None for t in avg.trees) == 2
    f = np.array([1.0, -2.0])
    assert _res(ops, avg.apply(f), f) <= 1e-14


def test_shuffled_bfs_differs():
    ops = assemble_operators(structured_unit_square(6))
    a = build_tree(ops, shuffle_seed=1)
    b = build_tree(ops, shuffle_seed=2)
    assert not np.array_equal(a.J, b.J)


def test_errors():
    ops = assemble_operators(structured_unit_square(3))
    interior = int(np.flatnonzero(ops.mesh.edge_cells[:, 1] >= 0)[0])
    with pytest.raises(ValueError):
        build_tree(ops, interior)
    with pytest.raises(ValueError):
        build_averaged(ops, Rng(0), 0)
    # two triangles touching at one vertex: a valid mesh with a disconnected cell graph
    bow = build_mesh([[0, 0], [1, 0], [1, 1], [2, 1], [1, 2]], [[0, 1, 2], [2, 3, 4]])
    with pytest.raises(StructuralError):
        build_tree(assemble_operators(bow))


def test_save_load(tmp_path, ops8):
    avg = build_averaged(ops8, Rng(4), 3)
    avg.save(tmp_path)
    back = AveragedSolver.load(tmp_path, ops8)
    f = np.random.default_rng(0).standard_normal(ops8.mesh.n_cells)
    np.testing.assert_array_equal(back.apply(f), avg.apply(f))
    assert [t.root for t in back.trees] == [t.root for t in avg.trees]
