import numpy as np
import pytest

from consrom.errors import NumericalError
from consrom.kernelmaps import KernelMap, PodBasis, apply_S0, build_pod, homogeneous_part
from consrom.mesh import structured_unit_square
from consrom.fem import assemble_operators
from consrom.tree import build_tree


def _mnorm2(ops, x):
    return float(x @ (ops.M_q @ x))


def _divfree(ops, rng, k):
    return (ops.curl @ rng.standard_normal((ops.mesh.n_nodes, k))).T


def test_one_snapshot(ops8, solver8, sines8):
    pod = build_pod(sines8[:1], solver8, ops8, 1)
    q0 = homogeneous_part(solver8, sines8[0].q)[0]
    v = pod.V[:, 0]
    np.testing.assert_allclose(np.abs(v), np.abs(q0) / np.sqrt(_mnorm2(ops8, q0)), atol=1e-12)
    rec = q0 - v * (v @ (ops8.M_q @ q0))
    assert _mnorm2(ops8, rec) <= 1e-24 * _mnorm2(ops8, q0) + 1e-30
    assert pod.truncation_energy == 0.0


def test_two_orthogonal_snapshots(ops8, solver8):
    g = np.random.default_rng(0)
    a, b = _divfree(ops8, g, 2)
    b = b - a * (a @ ops8.M_q @ b) / _mnorm2(ops8, a)
    a = 3 * a / np.sqrt(_mnorm2(ops8, a))
    b = b / np.sqrt(_mnorm2(ops8, b))
    pod = build_pod(np.vstack([a, b]), solver8, ops8, 1)
    np.testing.assert_allclose(np.abs(pod.V[:, 0]), np.abs(a) / 3, atol=1e-12)
    np.testing.assert_allclose(pod.eigenvalues, [9.0, 1.0], rtol=1e-12)
    np.testing.assert_allclose(pod.truncation_energy, 1.0, rtol=1e-12)


@pytest.mark.parametrize("n", [1, 5, 10])
def test_pod_invariants_and_reconstruction_identity(ops8, solver8, sines8, n):
    pod = build_pod(sines8, solver8, ops8, n)
    V = pod.V
    np.testing.assert_allclose(V.T @ (ops8.M_q @ V), np.eye(n), atol=1e-10)
    assert np.abs(ops8.B @ V).max() <= 1e-12
    Q0 = homogeneous_part(solver8, np.array([s.q for s in sines8]))
    R = Q0 - (V @ pod.coefficients(ops8, Q0.T)).T
    err = np.einsum("ij,ij->", R, (ops8.M_q @ R.T).T)
    assert abs(err - pod.truncation_energy) <= 1e-8 * pod.truncation_energy


def test_rank_deficiency(ops8, solver8, sines8):
    Q = np.array([sines8[0].q] * 3)
    with pytest.raises(NumericalError, match="choose n <= 1"):
        build_pod(Q, solver8, ops8, 2)
    with pytest.raises(ValueError):
        build_pod(sines8[:2], solver8, ops8, 3)
    with pytest.raises(ValueError):
        build_pod(sines8, solver8, ops8, 0)


def test_pod_optimality_against_random_directions(ops8, solver8, sines8):
    snaps = sines8[:5]
    pod = build_pod(snaps, solver8, ops8, 1)
    Q0 = homogeneous_part(solver8, np.array([s.q for s in snaps]))

    def err(v):
        v = v / np.sqrt(_mnorm2(ops8, v))
        c = Q0 @ (ops8.M_q @ v)
        R = Q0 - np.outer(c, v)
        return np.einsum("ij,ij->", R, (ops8.M_q @ R.T).T)

    best = err(pod.V[:, 0])
    g = np.random.default_rng(1)
    for _ in range(200):
        assert best <= err(g.standard_normal(5) @ Q0) * (1 + 1e-12)


@pytest.fixture(scope="module")
def maps(ops8, solver8, sines8):
    pod = build_pod(sines8, solver8, ops8, 6)
    return {
        "projection": KernelMap("projection", ops8, solver=solver8),
        "pod": KernelMap("pod", ops8, pod=pod),
        "curl": KernelMap("curl", ops8),
    }


def test_dimensions(ops8, maps):
    m = ops8.mesh
    assert maps["projection"].dim == m.n_edges
    assert maps["pod"].dim == 6
    assert maps["curl"].dim == m.n_nodes < m.n_edges


@pytest.mark.parametrize("variant", ["projection", "pod", "curl"])
def test_kernel_property(ops8, maps, variant):
    km = maps[variant]
    assert not np.any(km.apply(np.zeros(km.dim)))
    R = np.random.default_rng(2).standard_normal((km.dim, 100))
    Y = apply_S0(km, R)
    bound = 1e-12 * (1 + np.abs(Y).max(axis=0))
    assert np.all(np.abs(ops8.B @ Y).max(axis=0) <= bound)
    if variant == "curl":
        # integer potentials give exact cancellation
        Z = np.random.default_rng(4).integers(-50, 50, size=(km.dim, 20)).astype(float)
        assert not np.any(ops8.B @ km.apply(Z))
    # adjoint is the transpose
    v = np.random.default_rng(3).standard_normal(ops8.mesh.n_edges)
    r = R[:, 0]
    assert abs(km.apply(r) @ v - r @ km.adjoint(v)) <= 1e-11 * np.abs(Y).max() * np.abs(v).sum()
    np.testing.assert_allclose(km.apply_rows(R.T[:3]), Y.T[:3])


def test_curl_constant_potential(ops8, maps):
    assert not np.any(maps["curl"].apply(np.full(ops8.mesh.n_nodes, 4.2)))


def test_projection_of_snapshot_is_homogeneous_part(ops8, solver8, sines8, maps):
    s = sines8[3]
    np.testing.assert_allclose(maps["projection"].apply(s.q), s.q - solver8.apply(s.f_vec), atol=1e-12)


def test_dimension_mismatch(maps):
    with pytest.raises(ValueError):
        maps["curl"].apply(np.zeros(3))
    with pytest.raises(ValueError):
        KernelMap("pod", maps["curl"].ops)
    with pytest.raises(ValueError):
        KernelMap("rotated", maps["curl"].ops)


def test_curl_onto_kernel():
    ops = assemble_operators(structured_unit_square(4))
    m = ops.mesh
    rank_curl = np.linalg.matrix_rank(ops.curl.toarray())
    kernel_dim = m.n_edges - np.linalg.matrix_rank(ops.B.toarray())
    assert rank_curl == kernel_dim == m.n_nodes - 1 == m.n_edges - m.n_cells


def test_pod_save_load(tmp_path, ops8, solver8, sines8):
    pod = build_pod(sines8, solver8, ops8, 4)
    pod.save(tmp_path)
    back = PodBasis.load(tmp_path)
    np.testing.assert_array_equal(back.V, pod.V)
    np.testing.assert_array_equal(back.eigenvalues, pod.eigenvalues)
    assert back.n_samples == pod.n_samples


def test_pod_with_single_tree(ops8, sines8):
    pod = build_pod(sines8, build_tree(ops8), ops8, 3)
    assert np.abs(ops8.B @ pod.V).max() <= 1e-12
