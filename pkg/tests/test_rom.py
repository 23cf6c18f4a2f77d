import numpy as np
import pytest

from consrom.errors import DomainError
from consrom.fom import FORCHHEIMER_2D, SINES_2D, generate_snapshots, solve_problem
from consrom.kernelmaps import KernelMap, build_pod
from consrom.nn import DenseNetwork, TrainConfig
from consrom.numerics import Rng, latin_hypercube
from consrom.rom import (
    CONSERVATIVE, RomConfig, RomModel, build_rom, error_metrics, evaluate_model, report_table,
)
from consrom.tree import build_averaged


def _bound(model, MU):
    Q, _ = model.evaluate_batch(MU)
    F = np.array([model.problem.f_vec(model.ops.mesh, mu) for mu in MU])
    res = np.max(np.abs((model.ops.B @ Q.T).T - F), axis=1)
    return res, 1e-10 * (1 + np.max(np.abs(F), axis=1))


def _untrained(variant, ops, solver, sines, problem=SINES_2D, zero=False):
    kmap = {
        "podnn": lambda: KernelMap("pod", ops, pod=build_pod(sines, solver, ops, 5)),
        "curl_dlrom": lambda: KernelMap("curl", ops),
        "spt_dlrom": lambda: KernelMap("projection", ops, solver=solver),
    }[variant]()
    net = DenseNetwork.init([problem.n_params, 8, kmap.dim], ["leaky_relu", "identity"], Rng(3))
    # large random weights: the network is far from any sensible output
    net.set_params(50 * net.get_params())
    if zero:
        net.set_params(np.zeros(net.n_params))
    return RomModel(variant, problem, ops, solver, {"net": net}, kmap)


@pytest.mark.parametrize("variant", CONSERVATIVE)
def test_conservation_regardless_of_network(ops8, solver8, sines8, variant):
    model = _untrained(variant, ops8, solver8, sines8)
    MU = latin_hypercube(Rng(99), 1000, SINES_2D.bounds)
    res, bound = _bound(model, MU)
    assert np.all(res <= bound)


@pytest.mark.parametrize("variant", CONSERVATIVE)
def test_zero_network_gives_particular_solution(ops8, solver8, sines8, variant):
    model = _untrained(variant, ops8, solver8, sines8, zero=True)
    mu = np.array([1.332, 1.423])
    q, _ = model.evaluate(mu)
    f = SINES_2D.f_vec(ops8.mesh, mu)
    np.testing.assert_allclose(q, solver8.apply(f), atol=1e-14)
    assert np.max(np.abs(ops8.B @ q - f)) <= 1e-10 * (1 + np.abs(f).max())


@pytest.mark.parametrize("pressure", ["first", "average"])
def test_pressure_recovery_linear(ops8, solver8, sines8, pressure):
    model = _untrained("curl_dlrom", ops8, solver8, sines8)
    model.pressure = pressure
    MU = np.array([s.mu for s in sines8])
    Q = np.array([s.q for s in sines8])
    P = model.pressure_from_flux(MU, Q)
    for s, p in zip(sines8, P):
        assert np.linalg.norm(p - s.p) <= 1e-9 * np.linalg.norm(s.p)


def test_pressure_recovery_forchheimer(ops8, solver8):
    snaps = generate_snapshots(FORCHHEIMER_2D, ops8, Rng(2), 4)
    model = _untrained("curl_dlrom", ops8, solver8, snaps, problem=FORCHHEIMER_2D)
    MU = np.array([s.mu for s in snaps])
    P = model.pressure_from_flux(MU, np.array([s.q for s in snaps]))
    for s, p in zip(snaps, P):
        assert np.linalg.norm(p - s.p) <= 1e-8 * np.linalg.norm(s.p)
    res, bound = _bound(model, latin_hypercube(Rng(4), 200, FORCHHEIMER_2D.bounds))
    assert np.all(res <= bound)


def test_error_metrics_trivial(ops8, sines8):
    Q = np.array([s.q for s in sines8])
    P = np.array([s.p for s in sines8])
    rep = error_metrics("podnn", Q, P, sines8, ops8)
    assert not np.any(rep.l2) and not np.any(rep.hdiv) and not np.any(rep.pressure)
    rep = error_metrics("podnn", 1.01 * Q, 1.01 * P, sines8, ops8)
    np.testing.assert_allclose(rep.l2, 0.01, rtol=1e-12)
    np.testing.assert_allclose(rep.hdiv, 0.01, rtol=1e-12)
    np.testing.assert_allclose(rep.pressure, 0.01, rtol=1e-12)
    with pytest.raises(ValueError):
        error_metrics("podnn", Q, P, [], ops8)


def test_error_metrics_zero_reference_excluded(ops8, sines8):
    snaps = sines8[:3]
    snaps[0] = type(snaps[0])(snaps[0].mu, 0 * snaps[0].q, snaps[0].p, snaps[0].f_vec, snaps[0].g_vec)
    Q = np.array([s.q for s in snaps]) + 1.0
    P = np.array([s.p for s in snaps])
    with pytest.warns(UserWarning, match="zero"):
        rep = error_metrics("podnn", Q, P, snaps, ops8)
    assert np.isnan(rep.l2[0]) and np.isfinite(rep.mean_l2)


def test_podnn_interpolates_two_snapshots(ops8, solver8, sines8):
    snaps = sines8[:2]
    # default tolerance_change stops each epoch early once the loss is ~1e-9
    tight = TrainConfig(epochs=500, tolerance_change=1e-14, tolerance_grad=1e-12)
    cfg = RomConfig(tight, n_pod=2, seed=1,
                    presets={"podnn": {"dims": [2, 20, 20, "n_pod"], "acts": ["leaky_relu"] * 2 + ["identity"]}})
    model = build_rom("podnn", snaps, ops8, SINES_2D, solver8, cfg)
    rep = evaluate_model(model, snaps, ops8)
    assert rep.l2.max() <= 1e-6
    assert np.all(rep.hdiv <= rep.l2 + 1e-12)


def test_curl_potential_space_is_smaller(ops8, solver8):
    assert KernelMap("curl", ops8).dim == ops8.mesh.n_nodes < ops8.mesh.n_edges == \
        KernelMap("projection", ops8, solver=solver8).dim


def test_spt_smoke_and_round_trip(tmp_path, ops8, solver8, sines8):
    snaps = sines8[:10]
    small = {
        "phi": {"dims": [2, 3], "acts": ["identity"]},
        "psi": {"dims": ["latent", "dim_R"], "acts": ["identity"]},
        "encoder": {"dims": ["n_flux", "latent"], "acts": ["identity"]},
    }
    model = build_rom("spt_dlrom", snaps, ops8, SINES_2D, solver8,
                      RomConfig(TrainConfig(epochs=3), presets=small))
    assert "encoder" not in model.nets
    assert np.all(np.diff(model.history) <= 0)
    rep = evaluate_model(model, snaps, ops8)
    F = np.array([s.f_vec for s in snaps])
    assert np.all(rep.residual <= 1e-10 * (1 + np.abs(F).max(axis=1)))
    assert np.all(rep.hdiv <= rep.l2 + 1e-12)
    model.save(tmp_path)
    back = RomModel.load(tmp_path, SINES_2D, ops8, solver8)
    MU = np.array([s.mu for s in snaps])
    for a, b in zip(model.evaluate_batch(MU), back.evaluate_batch(MU)):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        RomModel.load(tmp_path, FORCHHEIMER_2D, ops8, solver8)


def test_blackbox_is_not_conservative(ops8, solver8, sines8):
    model = build_rom("blackbox_l2", sines8, ops8, SINES_2D, solver8,
                      RomConfig(TrainConfig(epochs=2), presets={"blackbox": {"dims": [2, 8, "n_flux"], "acts": ["leaky_relu", "identity"]}}))
    rep = evaluate_model(model, sines8, ops8)
    assert rep.residual.max() > 1e-8


def test_out_of_bounds(ops8, solver8, sines8):
    model = _untrained("curl_dlrom", ops8, solver8, sines8)
    with pytest.raises(DomainError):
        model.evaluate(np.array([0.5, 2.0]))
    with pytest.raises(DomainError):
        model.evaluate(np.array([2.0, 2.0, 2.0]))


def test_dimension_mismatch(ops8, solver8):
    net = DenseNetwork.init([2, 5], ["identity"], Rng(0))
    with pytest.raises(ValueError):
        RomModel("curl_dlrom", SINES_2D, ops8, solver8, {"net": net}, KernelMap("curl", ops8))
    with pytest.raises(ValueError):
        build_rom("pca", [], ops8, SINES_2D, solver8)


def test_report_table_rows_in_order(ops8, sines8):
    Q = np.array([s.q for s in sines8])
    P = np.array([s.p for s in sines8])
    reps = [error_metrics(v, Q, P, sines8, ops8) for v in ("podnn", "curl_dlrom", "blackbox_hdiv")]
    lines = report_table(reps, {"podnn": 12}).splitlines()
    assert len(lines) == 4
    assert lines[1].startswith("Conservative POD-NN\tPOD\t")
    assert lines[1].endswith("\t12")
    assert lines[2].startswith("Conservative Curl DL-ROM\tCurl\t")
    assert lines[3].startswith("Black-box H(div)\t-\t") and lines[3].endswith("\t-")


def test_test_point_conservation_contrast(ops8, solver8, sines8):
    mu = np.array([1.332, 1.423])
    snap = solve_problem(SINES_2D, ops8, mu)
    cons = _untrained("spt_dlrom", ops8, solver8, sines8)
    res, bound = _bound(cons, mu[None])
    assert res[0] <= bound[0]
    assert np.max(np.abs(ops8.B @ snap.q - snap.f_vec)) <= bound[0]
