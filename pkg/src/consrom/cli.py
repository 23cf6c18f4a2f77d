"""Command-line driver for the offline/online protocol.

Subcommands ``generate``, ``train``, ``evaluate`` and ``report`` (plus ``run``
for all four) share one INI config and one output directory::

    out/
      mesh.txt            mesh used by every stage
      train/, test/       snapshot archives (independent Latin-hypercube draws)
      trees/              spanning trees of the averaged right-inverse
      models/<variant>/   checkpoints and loss histories
      eval/               table.tsv, <variant>.csv, residuals.csv
      report/             table.tsv, quartiles.tsv
      timings.json        wall-clock per stage (kept out of the reports)

Every stage writes ``stage.json`` with the hash of the config fields it
depends on and refuses inputs whose recorded hash differs.
"""

import argparse
import configparser
import hashlib
import json
import logging
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import (
    ArtifactMismatchError, ConfigError, ConsromError, DomainError, MeshFormatError,
    MeshValidationError, SolverError, TrainingError,
)
from .fem import assemble_operators
from .fom import PROBLEMS, generate_snapshots, load_snapshots, save_snapshots, solve_problem
from .mesh import load_mesh, save_mesh, structured_unit_square
from .nn import PRESETS, TrainConfig, resolve_spec
from .numerics import Rng, latin_hypercube
from .rom import (
    CONSERVATIVE, VARIANTS, EvalReport, FomModel, RomConfig, RomModel, build_rom,
    evaluate_model, per_sample_csv, report_table,
)
from .tree import AveragedSolver, build_averaged

log = logging.getLogger("consrom")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_TRAINING = 4
EXIT_MISMATCH = 5
EXIT_MISSING = 6

TEST_SEED_OFFSET = 2**32
TREE_SEED_OFFSET = 2**33
ROLES = ("podnn", "phi", "psi", "encoder", "blackbox")


class MissingStageError(ConsromError):
    """An upstream stage has not produced its outputs."""


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass
class RunConfig:
    case: str = "Sines2D"
    seed: int = 0
    n_trees: int = 10
    variants: tuple = VARIANTS
    pressure: str = "first"
    workers: int = 1
    n: int = 16
    mesh_file: str = None
    n_train: int = 300
    n_test: int = 100
    bounds: tuple = None
    picard: dict = field(default_factory=lambda: {"tol": 1e-12, "res_tol": 1e-8, "max_iter": 200})
    train: TrainConfig = field(default_factory=TrainConfig)
    n_pod: int = None
    networks: dict = field(default_factory=dict)

    @property
    def problem(self):
        p = PROBLEMS[self.case]
        return p if self.bounds is None else replace(p, bounds=self.bounds)

    def _groups(self) -> dict:
        data = {
            "case": self.case, "seed": self.seed, "n": self.n, "mesh_file": self.mesh_file,
            "n_train": self.n_train, "n_test": self.n_test,
            "bounds": None if self.bounds is None else [list(b) for b in self.bounds],
            "picard": self.picard,
        }
        model = dict(data, n_trees=self.n_trees, n_pod=self.n_pod,
                     train=self.train.to_dict(), networks=self.networks)
        evaluation = dict(model, pressure=self.pressure)
        return {"data": data, "model": model, "eval": evaluation}

    def hash(self, stage: str) -> str:
        """Hash of the config fields that stage ``stage`` depends on."""
        blob = json.dumps(self._groups()[stage], sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def rom_config(self) -> RomConfig:
        return RomConfig(train=self.train, n_pod=self.n_pod, seed=self.seed,
                         pressure=self.pressure, presets=self.networks)


_SCHEMA = {
    "run": {"case", "seed", "n_trees", "variants", "pressure", "workers"},
    "mesh": {"n", "file"},
    "data": {"n_train", "n_test", "bounds"},
    "picard": {"tol", "res_tol", "max_iter"},
    "train": {f.name for f in fields(TrainConfig)} - {"seed"},
    "rom": {"n_pod"},
}


def _num(section, key, raw, kind, minimum=None):
    name = f"{section}.{key}"
    try:
        val = kind(raw)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {kind.__name__}, got {raw!r}") from None
    if kind is float and not np.isfinite(val):
        raise ConfigError(name, "must be finite")
    if minimum is not None and val < minimum:
        raise ConfigError(name, f"must be >= {minimum}, got {val}")
    return val


def _parse_bounds(raw, problem):
    try:
        b = json.loads(raw)
        arr = np.asarray(b, dtype=float)
    except (ValueError, TypeError):
        raise ConfigError("data.bounds", f"expected a JSON list of [lo, hi] pairs, got {raw!r}") from None
    if arr.shape != (problem.n_params, 2):
        raise ConfigError("data.bounds", f"{problem.tag} needs {problem.n_params} [lo, hi] pairs")
    if not np.all(np.isfinite(arr)) or np.any(arr[:, 0] >= arr[:, 1]):
        raise ConfigError("data.bounds", f"every pair needs finite lo < hi, got {arr.tolist()}")
    return tuple(tuple(map(float, r)) for r in arr)


def _parse_network(section, items):
    name = section.split(".", 1)[1]
    if name not in ROLES:
        raise ConfigError(section, f"unknown network role; choose from {ROLES}")
    unknown = set(items) - {"dims", "acts", "feature"}
    if unknown:
        raise ConfigError(f"{section}.{sorted(unknown)[0]}", "unknown key")
    if "dims" not in items or "acts" not in items:
        raise ConfigError(section, "needs both 'dims' and 'acts'")
    spec = {
        "dims": [d.strip() for d in items["dims"].split(",") if d.strip()],
        "acts": [a.strip() for a in items["acts"].split(",") if a.strip()],
        "feature": items.get("feature", "").strip() or None,
    }
    spec["dims"] = [int(d) if d.lstrip("-").isdigit() else d for d in spec["dims"]]
    if len(spec["acts"]) != len(spec["dims"]) - 1:
        raise ConfigError(f"{section}.acts", "need one activation per layer (len(dims) - 1)")
    if any(isinstance(d, int) and d < 1 for d in spec["dims"]):
        raise ConfigError(f"{section}.dims", "widths must be >= 1")
    try:
        # symbolic widths are filled in at build time; check everything else now
        resolve_spec(spec, **{s: 1 for s in ("n_pod", "latent", "dim_R", "n_flux")})
    except ValueError as exc:
        raise ConfigError(f"{section}.dims", str(exc)) from None
    return name, spec


def parse_config(text: str, base_dir=".") -> RunConfig:
    """Parse INI text into a validated :class:`RunConfig`."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", str(exc).splitlines()[0]) from None
    cfg = RunConfig()
    for sec in cp.sections():
        if sec.startswith("network."):
            role, spec = _parse_network(sec, dict(cp[sec]))
            cfg.networks[role] = spec
            continue
        if sec not in _SCHEMA:
            raise ConfigError(sec, "unknown section")
        unknown = set(cp[sec]) - _SCHEMA[sec]
        if unknown:
            raise ConfigError(f"{sec}.{sorted(unknown)[0]}", "unknown key")

    run = cp["run"] if cp.has_section("run") else {}
    if "case" in run:
        cfg.case = run["case"].strip()
    if cfg.case not in PROBLEMS:
        raise ConfigError("run.case", f"unknown case {cfg.case!r}; choose from {sorted(PROBLEMS)}")
    if "seed" in run:
        cfg.seed = _num("run", "seed", run["seed"], int, 0)
    if "n_trees" in run:
        cfg.n_trees = _num("run", "n_trees", run["n_trees"], int, 1)
    if "workers" in run:
        cfg.workers = _num("run", "workers", run["workers"], int, 1)
    if "variants" in run:
        vs = tuple(v.strip() for v in run["variants"].split(",") if v.strip())
        bad = [v for v in vs if v not in VARIANTS and v != "fom"]
        if not vs or bad:
            raise ConfigError("run.variants", f"unknown variant {bad[0] if bad else ''!r}; choose from {VARIANTS + ('fom',)}")
        if len(set(vs)) != len(vs):
            raise ConfigError("run.variants", "duplicate variant")
        cfg.variants = vs
    if "pressure" in run:
        cfg.pressure = run["pressure"].strip()
        if cfg.pressure not in ("first", "average"):
            raise ConfigError("run.pressure", "must be 'first' or 'average'")

    mesh = cp["mesh"] if cp.has_section("mesh") else {}
    if "n" in mesh:
        cfg.n = _num("mesh", "n", mesh["n"], int, 1)
    if mesh.get("file", "").strip():
        path = Path(mesh["file"].strip())
        cfg.mesh_file = str(path if path.is_absolute() else (Path(base_dir) / path).resolve())

    data = cp["data"] if cp.has_section("data") else {}
    if "n_train" in data:
        cfg.n_train = _num("data", "n_train", data["n_train"], int, 1)
    if "n_test" in data:
        cfg.n_test = _num("data", "n_test", data["n_test"], int, 1)
    if "bounds" in data:
        cfg.bounds = _parse_bounds(data["bounds"], PROBLEMS[cfg.case])

    if cp.has_section("picard"):
        sec = cp["picard"]
        for key in sec:
            kind = int if key == "max_iter" else float
            cfg.picard[key] = _num("picard", key, sec[key], kind, 1 if kind is int else 0.0)

    tr = {}
    if cp.has_section("train"):
        sec = cp["train"]
        for key in sec:
            raw = sec[key].strip()
            if key == "optimizer":
                tr[key] = raw
            elif key == "lr" and raw == "":
                tr[key] = None
            else:
                kind = int if key in ("epochs", "max_iter", "history_size") else float
                tr[key] = _num("train", key, raw, kind, 1 if kind is int else 0.0)
    try:
        cfg.train = TrainConfig(seed=cfg.seed, **tr)
    except ValueError as exc:
        raise ConfigError("train", str(exc)) from None

    if cp.has_section("rom") and cp["rom"].get("n_pod", "").strip():
        cfg.n_pod = _num("rom", "n_pod", cp["rom"]["n_pod"], int, 1)
        if cfg.n_pod > cfg.n_train:
            raise ConfigError("rom.n_pod", f"cannot exceed data.n_train={cfg.n_train}")
    for v in cfg.variants:
        roles = {"podnn": ["podnn"], "curl_dlrom": ["phi", "psi", "encoder"],
                 "spt_dlrom": ["phi", "psi", "encoder"]}.get(v, ["blackbox"] if v != "fom" else [])
        for role in roles:
            if role not in cfg.networks and (cfg.case, role) not in PRESETS:
                raise ConfigError(f"network.{role}", f"no preset for case {cfg.case}; give an inline spec")
    return cfg


def load_config(path, seed=None) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError("file", f"cannot read {p}: {exc.strerror}") from None
    cfg = parse_config(text, p.parent)
    if seed is not None:
        if seed < 0:
            raise ConfigError("run.seed", "must be >= 0")
        cfg.seed = seed
        cfg.train = replace(cfg.train, seed=seed)
    return cfg


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------


def _content_hash(directory, pattern="*.crom") -> str:
    d = hashlib.sha256()
    for f in sorted(Path(directory).glob(pattern)):
        d.update(f.name.encode())
        d.update(f.read_bytes())
    return d.hexdigest()[:16]


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _read_stage(directory, what):
    f = Path(directory) / "stage.json"
    if not f.is_file():
        raise MissingStageError(f"{what} not found at {directory}; run the upstream stage first")
    return json.loads(f.read_text())


def _expect(record, key, value, what):
    if record.get(key) != value:
        raise ArtifactMismatchError(
            f"{what}: recorded {key} {record.get(key)!r} does not match {value!r}"
        )


def _record_timing(out, stage, values) -> None:
    f = Path(out) / "timings.json"
    data = json.loads(f.read_text()) if f.is_file() else {}
    data[stage] = values
    _write_json(f, data)


def _mesh_for(cfg: RunConfig):
    if cfg.mesh_file:
        return load_mesh(cfg.mesh_file)
    return structured_unit_square(cfg.n)


def _load_run_mesh(cfg, out):
    f = Path(out) / "mesh.txt"
    if not f.is_file():
        raise MissingStageError(f"mesh not found at {f}; run generate first")
    mesh = load_mesh(f)
    if mesh.hash() != _mesh_for(cfg).hash():
        raise ArtifactMismatchError("mesh on disk differs from the configured mesh")
    return mesh


def _load_archive(cfg, out, split):
    d = Path(out) / split
    rec = _read_stage(d, f"{split} archive")
    _expect(rec, "config_hash", cfg.hash("data"), f"{split} archive")
    if _content_hash(d) != rec["data_hash"]:
        raise ArtifactMismatchError(f"{split} archive content changed since it was written")
    snaps, meta = load_snapshots(d)
    return snaps, meta, rec


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------

_WORKER = {}


def _worker_init(mesh_text, case, bounds, picard):
    import tempfile
    with tempfile.NamedTemporaryFile("w", suffix=".txt", delete=False) as fh:
        fh.write(mesh_text)
    problem = PROBLEMS[case] if bounds is None else replace(PROBLEMS[case], bounds=bounds)
    _WORKER.update(ops=assemble_operators(load_mesh(fh.name)), problem=problem, picard=picard)
    Path(fh.name).unlink()


def _worker_solve(mu):
    # exceptions with custom constructors do not survive pickling; return the message
    try:
        return solve_problem(_WORKER["problem"], _WORKER["ops"], mu, **_WORKER["picard"])
    except ConsromError as exc:
        return f"{type(exc).__name__}: {exc}"


def _snapshots(cfg, ops, rng, n, out):
    problem = cfg.problem
    if cfg.workers == 1:
        return generate_snapshots(problem, ops, rng, n, **cfg.picard)
    # the parameter design is drawn up front; each solve is a pure function of mu
    mus = latin_hypercube(rng, n, problem.bounds)
    text = (Path(out) / "mesh.txt").read_text()
    with ProcessPoolExecutor(cfg.workers, initializer=_worker_init,
                             initargs=(text, cfg.case, cfg.bounds, cfg.picard)) as pool:
        snaps = list(pool.map(_worker_solve, mus, chunksize=max(1, n // (4 * cfg.workers))))
    for mu, s in zip(mus, snaps):
        if isinstance(s, str):
            raise SolverError(mu, s)
    return snaps


def cmd_generate(cfg: RunConfig, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    mesh = _mesh_for(cfg)
    save_mesh(mesh, out / "mesh.txt")
    ops = assemble_operators(mesh)
    timings = {}
    for split, n, rng in (("train", cfg.n_train, Rng(cfg.seed)),
                          ("test", cfg.n_test, Rng(cfg.seed).derive(TEST_SEED_OFFSET))):
        d = out / split
        rec_file = d / "stage.json"
        if rec_file.is_file():
            rec = json.loads(rec_file.read_text())
            if rec.get("config_hash") == cfg.hash("data") and _content_hash(d) == rec.get("data_hash"):
                log.info("%s archive up to date (%s)", split, rec["data_hash"])
                continue
        t0 = time.perf_counter()
        snaps = _snapshots(cfg, ops, rng, n, out)
        timings[split] = time.perf_counter() - t0
        meta = {
            "case": cfg.case, "split": split, "seed": rng.seed, "rng": rng.algorithm,
            "mesh_hash": mesh.hash(), "bounds": [list(b) for b in cfg.problem.bounds],
            "solver": {"linear": "sparse LU", **({"picard": cfg.picard} if cfg.problem.nonlinear else {})},
            "config_hash": cfg.hash("data"),
        }
        save_snapshots(d, snaps, meta)
        _write_json(rec_file, {"stage": "generate", "split": split, "config_hash": cfg.hash("data"),
                               "mesh_hash": mesh.hash(), "data_hash": _content_hash(d)})
        log.info("%s: %d snapshots (%.1fs)", split, n, timings[split])
    _record_timing(out, "generate", timings)


def cmd_train(cfg: RunConfig, out) -> None:
    out = Path(out)
    mesh = _load_run_mesh(cfg, out)
    snaps, meta, rec = _load_archive(cfg, out, "train")
    _expect(meta, "mesh_hash", mesh.hash(), "train archive")
    ops = assemble_operators(mesh)
    solver = build_averaged(ops, Rng(cfg.seed).derive(TREE_SEED_OFFSET), cfg.n_trees)
    solver.save(out / "trees")
    _write_json(out / "trees" / "stage.json", {"stage": "train", "config_hash": cfg.hash("model"),
                                               "mesh_hash": mesh.hash()})
    timings = {}
    for v in cfg.variants:
        if v == "fom":
            continue
        log.info("training %s", v)
        model = build_rom(v, snaps, ops, cfg.problem, solver, cfg.rom_config())
        model.info.update(config_hash=cfg.hash("model"), data_hash=rec["data_hash"])
        d = out / "models" / v
        model.save(d)
        hist = "epoch,loss\n" + "".join(f"{k},{l!r}\n" for k, l in enumerate(model.history))
        (d / "history.csv").write_text(hist)
        _write_json(d / "stage.json", {"stage": "train", "variant": v, "config_hash": cfg.hash("model"),
                                       "mesh_hash": mesh.hash(), "data_hash": rec["data_hash"]})
        timings[v] = model.train_time
        log.info("%s: loss %.3e -> %.3e in %d epochs (%.1fs)", v, model.history[0], model.history[-1],
                 model.info["epochs_run"], model.train_time)
    _record_timing(out, "train", timings)


def cmd_evaluate(cfg: RunConfig, out) -> None:
    out = Path(out)
    mesh = _load_run_mesh(cfg, out)
    test, meta, rec = _load_archive(cfg, out, "test")
    ops = assemble_operators(mesh)
    MU = np.array([s.mu for s in test])
    need_trees = any(v != "fom" for v in cfg.variants)
    if need_trees:
        trec = _read_stage(out / "trees", "spanning trees")
        _expect(trec, "config_hash", cfg.hash("model"), "spanning trees")
        solver = AveragedSolver.load(out / "trees", ops)
    d_eval = out / "eval"
    d_eval.mkdir(parents=True, exist_ok=True)
    reports, evaluations, timings = [], {}, {}
    residual_rows = ["variant,sample,residual,residual_rel,conservative"]
    for v in cfg.variants:
        if v == "fom":
            model = FomModel(test)
        else:
            d = out / "models" / v
            mrec = _read_stage(d, f"{v} checkpoint")
            _expect(mrec, "config_hash", cfg.hash("model"), f"{v} checkpoint")
            _expect(mrec, "mesh_hash", mesh.hash(), f"{v} checkpoint")
            model = RomModel.load(d, cfg.problem, ops, solver)
            model.pressure = cfg.pressure
            evaluations[v] = model.info["evaluations"]
        r = evaluate_model(model, test, ops)
        timings[v] = r.eval_time
        reports.append(r)
        (d_eval / f"{v}.csv").write_text(per_sample_csv(r, MU))
        cons = v in CONSERVATIVE or v == "fom"
        for k in range(len(test)):
            residual_rows.append(f"{v},{k},{float(r.residual[k])!r},{float(r.residual_rel[k])!r},{int(cons)}")
        if cons and np.any(r.residual_rel > 1e-10):
            log.error("%s violates the conservation bound: max relative residual %.3e", v, r.residual_rel.max())
        log.info("%s: L2 %.4e  H(div) %.4e  pressure %.4e", v, r.mean_l2, r.mean_hdiv, r.mean_pressure)
    (d_eval / "table.tsv").write_text(report_table(reports, evaluations))
    (d_eval / "residuals.csv").write_text("\n".join(residual_rows) + "\n")
    _write_json(d_eval / "stage.json", {
        "stage": "evaluate", "config_hash": cfg.hash("eval"), "mesh_hash": mesh.hash(),
        "data_hash": rec["data_hash"], "variants": list(cfg.variants), "evaluations": evaluations,
    })
    _record_timing(out, "evaluate", timings)


def _read_samples(path):
    with open(path) as fh:
        head = fh.readline().strip().split(",")
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return {h: arr[:, i] for i, h in enumerate(head)}


QUARTILE_METRICS = ("l2_error", "hdiv_error", "pressure_error", "residual")


def quartiles(values) -> list:
    """``[min, q1, median, q3, max]`` over finite values (linear interpolation)."""
    v = np.asarray(values, dtype=float)
    v = v[np.isfinite(v)]
    if v.size == 0:
        return [float("nan")] * 5
    return [float(x) for x in np.percentile(v, [0, 25, 50, 75, 100])]


def cmd_report(cfg: RunConfig, out) -> None:
    out = Path(out)
    d_eval = out / "eval"
    rec = _read_stage(d_eval, "evaluation outputs")
    _expect(rec, "config_hash", cfg.hash("eval"), "evaluation outputs")
    order = [v for v in VARIANTS + ("fom",) if v in rec["variants"]]
    reports, rows = [], ["variant\tmetric\tmin\tq1\tmedian\tq3\tmax"]
    for v in order:
        f = d_eval / f"{v}.csv"
        if not f.is_file():
            raise MissingStageError(f"per-sample file {f} missing; rerun evaluate")
        s = _read_samples(f)
        reports.append(EvalReport(v, s["l2_error"], s["hdiv_error"], s["pressure_error"],
                                  s["residual"], s["residual_rel"]))
        for m in QUARTILE_METRICS:
            rows.append("\t".join([v, m] + [f"{x:.17g}" for x in quartiles(s[m])]))
    d = out / "report"
    d.mkdir(parents=True, exist_ok=True)
    (d / "table.tsv").write_text(report_table(reports, rec.get("evaluations")))
    (d / "quartiles.tsv").write_text("\n".join(rows) + "\n")
    _write_json(d / "stage.json", {"stage": "report", "config_hash": cfg.hash("eval"),
                                   "data_hash": rec["data_hash"]})
    sys.stdout.write((d / "table.tsv").read_text())


STAGES = {"generate": cmd_generate, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}


def _exit_code(exc) -> int:
    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, SolverError):
        return EXIT_SOLVER
    if isinstance(exc, TrainingError):
        return EXIT_TRAINING
    if isinstance(exc, ArtifactMismatchError):
        return EXIT_MISMATCH
    if isinstance(exc, MissingStageError):
        return EXIT_MISSING
    if isinstance(exc, (MeshFormatError, MeshValidationError, DomainError)):
        return EXIT_CONFIG
    return 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="consrom", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in list(STAGES) + ["run"]:
        p = sub.add_parser(name, help="all four stages in order" if name == "run" else f"{name} stage")
        p.add_argument("--config", required=True, help="INI run configuration")
        p.add_argument("--out", required=True, help="run directory")
        p.add_argument("--seed", type=int, default=None, help="override run.seed")
        p.add_argument("-q", "--quiet", action="store_true", help="log warnings and errors only")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cfg = load_config(args.config, args.seed)
        stages = list(STAGES) if args.command == "run" else [args.command]
        for s in stages:
            STAGES[s](cfg, args.out)
    except SolverError as exc:
        log.error("solver failure at mu=%s: %s", list(map(float, exc.mu)), exc.cause)
        return EXIT_SOLVER
    except ConsromError as exc:
        log.error("%s", exc)
        return _exit_code(exc)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
