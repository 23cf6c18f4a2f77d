import json
from pathlib import Path

import numpy as np
import pytest

from consrom.cli import (
    EXIT_CONFIG, EXIT_MISMATCH, EXIT_MISSING, EXIT_OK, EXIT_SOLVER, EXIT_TRAINING,
    load_config, main, parse_config, quartiles,
)
from consrom.errors import ConfigError
from consrom.fem import assemble_operators
from consrom.fom import SINES_2D, load_snapshots
from consrom.mesh import load_mesh
from consrom.rom import VARIANTS, RomModel
from consrom.tree import AveragedSolver

TOY = """
[run]
case = Sines2D
seed = 7
n_trees = 3
variants = {variants}

[mesh]
n = 8

[data]
n_train = 10
n_test = 5

[train]
epochs = {epochs}

[rom]
n_pod = 5
"""

ALL = ", ".join(VARIANTS + ("fom",))


def _cfg(tmp, text, name="run.ini"):
    p = Path(tmp) / name
    p.write_text(text)
    return str(p)


def _run(cmd, cfg, out, *extra):
    return main([cmd, "--config", cfg, "--out", str(out), "-q", *extra])


def _files(d):
    d = Path(d)
    return {str(f.relative_to(d)): f.read_bytes() for f in sorted(d.rglob("*"))
            if f.is_file() and f.name != "timings.json"}


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("toy")
    cfg = _cfg(tmp, TOY.format(variants=ALL, epochs=3))
    assert _run("run", cfg, tmp / "a") == EXIT_OK
    return tmp, cfg


def test_generate_is_deterministic(tmp_path):
    cfg = _cfg(tmp_path, TOY.format(variants="podnn", epochs=1))
    assert _run("generate", cfg, tmp_path / "a") == EXIT_OK
    assert _run("generate", cfg, tmp_path / "b") == EXIT_OK
    a = _files(tmp_path / "a")
    assert a == _files(tmp_path / "b")
    snaps, meta = load_snapshots(tmp_path / "a" / "train")
    assert len(snaps) == 10 and meta["seed"] == 7
    ops = assemble_operators(load_mesh(tmp_path / "a" / "mesh.txt"))
    assert all(s.conservation_residual(ops) <= 1e-10 * (1 + np.abs(s.f_vec).max()) for s in snaps)
    # idempotent: a rerun leaves the archive untouched
    assert _run("generate", cfg, tmp_path / "a") == EXIT_OK
    assert _files(tmp_path / "a") == a
    test, _ = load_snapshots(tmp_path / "a" / "test")
    train_mu = {tuple(s.mu) for s in snaps}
    assert not any(tuple(s.mu) in train_mu for s in test)


def test_invalid_bounds_exit_code(tmp_path, caplog):
    text = TOY.format(variants="podnn", epochs=1).replace("n_test = 5", "n_test = 5\nbounds = [[4, 1], [1, 4]]")
    assert _run("generate", _cfg(tmp_path, text), tmp_path / "o") == EXIT_CONFIG
    assert "data.bounds" in caplog.text
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.field == "data.bounds"


@pytest.mark.parametrize("patch, field", [
    (("seed = 7", "seed = seven"), "run.seed"),
    (("[rom]", "[rom]\ncolour = red"), "rom.colour"),
    (("n = 8", "n = 0"), "mesh.n"),
    (("variants = podnn", "variants = podnn, lasso"), "run.variants"),
])
def test_config_errors_name_the_field(patch, field):
    text = TOY.format(variants="podnn", epochs=1).replace(*patch)
    with pytest.raises(ConfigError) as ei:
        parse_config(text)
    assert ei.value.field == field


def test_inline_network_spec_and_seed_override(tmp_path):
    text = TOY.format(variants="podnn", epochs=1) + "\n[network.podnn]\ndims = 2, 7, n_pod\nacts = leaky_relu, identity\n"
    cfg = load_config(_cfg(tmp_path, text), seed=3)
    assert cfg.seed == 3
    assert cfg.networks["podnn"]["dims"][1] in (7, "7")
    with pytest.raises(ConfigError):
        parse_config(text.replace("acts = leaky_relu", "acts = tanh"))


def test_forchheimer_metadata_records_iterations(tmp_path):
    text = TOY.format(variants="podnn", epochs=1).replace("Sines2D", "Forchheimer2D") \
        .replace("n_train = 10", "n_train = 5").replace("n_test = 5", "n_test = 1")
    assert _run("generate", _cfg(tmp_path, text), tmp_path / "o") == EXIT_OK
    snaps, meta = load_snapshots(tmp_path / "o" / "train")
    assert len(snaps) == 5
    assert all(1 <= s.iterations < 200 for s in snaps)
    assert meta["solver"]["picard"]["max_iter"] == 200


def test_solver_failure_exit_code(tmp_path):
    text = TOY.format(variants="podnn", epochs=1).replace("Sines2D", "Forchheimer2D") \
        .replace("[train]", "[picard]\nmax_iter = 2\n\n[train]")
    assert _run("generate", _cfg(tmp_path, text), tmp_path / "o") == EXIT_SOLVER


def test_only_podnn_gives_one_checkpoint(tmp_path):
    cfg = _cfg(tmp_path, TOY.format(variants="podnn", epochs=2))
    assert _run("generate", cfg, tmp_path) == EXIT_OK
    assert _run("train", cfg, tmp_path) == EXIT_OK
    assert [p.name for p in (tmp_path / "models").iterdir()] == ["podnn"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_exit_code(tmp_path, caplog):
    text = TOY.format(variants="blackbox_l2", epochs=5).replace("epochs = 5", "epochs = 5\noptimizer = adam\nlr = 1e300")
    cfg = _cfg(tmp_path, text)
    assert _run("generate", cfg, tmp_path) == EXIT_OK
    assert _run("train", cfg, tmp_path) == EXIT_TRAINING
    assert "epoch" in caplog.text


def test_all_variants_load(toy_run):
    tmp, _ = toy_run
    out = tmp / "a"
    ops = assemble_operators(load_mesh(out / "mesh.txt"))
    solver = AveragedSolver.load(out / "trees", ops)
    for v in VARIANTS:
        model = RomModel.load(out / "models" / v, SINES_2D, ops, solver)
        assert model.variant == v
        hist = np.loadtxt(out / "models" / v / "history.csv", delimiter=",", skiprows=1)
        assert np.all(np.diff(hist[:, 1]) <= 0)


def test_rerun_is_bitwise_identical(toy_run):
    tmp, cfg = toy_run
    assert _run("run", cfg, tmp / "b") == EXIT_OK
    assert _files(tmp / "a") == _files(tmp / "b")


def test_fom_debug_variant_has_zero_errors(toy_run):
    out = toy_run[0] / "a"
    s = np.loadtxt(out / "eval" / "fom.csv", delimiter=",", skiprows=1)
    assert not np.any(s[:, 2:5])


def test_residual_column(toy_run):
    out = toy_run[0] / "a"
    rows = [l.split(",") for l in (out / "eval" / "residuals.csv").read_text().splitlines()[1:]]
    test, _ = load_snapshots(out / "test")
    fmax = {k: np.abs(s.f_vec).max() for k, s in enumerate(test)}
    for v, k, res, rel, cons in rows:
        if cons == "1":
            assert float(res) <= 1e-10 * (1 + fmax[int(k)])
    bb = [float(r[2]) for r in rows if r[0] == "blackbox_l2"]
    assert max(bb) > 0.0
    for v in ("podnn", "curl_dlrom", "spt_dlrom"):
        s = np.loadtxt(out / "eval" / f"{v}.csv", delimiter=",", skiprows=1)
        assert np.all(s[:, 3] <= s[:, 2] + 1e-12)


def test_report_table_and_quartiles(toy_run):
    out = toy_run[0] / "a"
    lines = (out / "report" / "table.tsv").read_text().splitlines()
    assert [l.split("\t")[0] for l in lines[1:]] == [
        "Conservative POD-NN", "Conservative Curl DL-ROM", "Conservative SpT DL-ROM",
        "Black-box L2", "Black-box H(div)", "Full-order model"]
    assert (out / "report" / "table.tsv").read_text() == (out / "eval" / "table.tsv").read_text()
    q = [l.split("\t") for l in (out / "report" / "quartiles.tsv").read_text().splitlines()[1:]]
    for v, metric, *vals in q:
        s = np.loadtxt(out / "eval" / f"{v}.csv", delimiter=",", skiprows=1)
        col = {"l2_error": 2, "hdiv_error": 3, "pressure_error": 4, "residual": 5}[metric]
        ref = np.percentile(s[:, col], [0, 25, 50, 75, 100])
        np.testing.assert_allclose([float(x) for x in vals], ref, rtol=1e-12, atol=1e-300)


def test_single_variant_report(tmp_path):
    cfg = _cfg(tmp_path, TOY.format(variants="curl_dlrom", epochs=1))
    assert _run("run", cfg, tmp_path) == EXIT_OK
    assert len((tmp_path / "report" / "table.tsv").read_text().splitlines()) == 2


def test_missing_stage_exit_code(tmp_path):
    cfg = _cfg(tmp_path, TOY.format(variants="podnn", epochs=1))
    assert _run("report", cfg, tmp_path / "o") == EXIT_MISSING
    assert _run("train", cfg, tmp_path / "o") == EXIT_MISSING


def test_changed_config_is_a_mismatch(toy_run, tmp_path):
    tmp, _ = toy_run
    other = _cfg(tmp_path, TOY.format(variants=ALL, epochs=4))
    assert _run("evaluate", other, tmp / "a") == EXIT_MISMATCH
    # the data stage does not depend on training settings
    assert _run("generate", other, tmp / "a") == EXIT_OK


def test_quartiles():
    assert quartiles([1.0, 2.0, 3.0, 4.0, 5.0]) == [1.0, 2.0, 3.0, 4.0, 5.0]
    assert all(np.isnan(quartiles([np.nan])))


def test_inline_comments():
    cfg = parse_config("[run]\ncase = Forchheimer2D   ; the nonlinear case\nseed = 4 ; four\n")
    assert cfg.case == "Forchheimer2D" and cfg.seed == 4
