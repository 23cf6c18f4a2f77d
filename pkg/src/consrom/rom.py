"""Reduced-order surrogates: offline pipeline, three-step online evaluation,
pressure postprocessing and error metrics.

Conservative variants return ``q = S_I f + S0 N(mu)``, which satisfies
``B q = f`` whatever the network outputs because ``B S0 = 0`` and
``B S_I = I``.  Black-box variants regress the flux directly.
"""

import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fem import OperatorSet, batch_sq_norms, pressure_l2
from .fom import ProblemSpec
from .kernelmaps import KernelMap, PodBasis, build_pod, homogeneous_part
from .nn import (
    DEFAULT_POD_DIM, DenseNetwork, TrainConfig, build_network, preset_spec,
    resolve_spec, train_blackbox, train_dlrom, train_podnn,
)
from .numerics import Rng
from .tree import AveragedSolver

VARIANTS = ("podnn", "curl_dlrom", "spt_dlrom", "blackbox_l2", "blackbox_hdiv")
CONSERVATIVE = ("podnn", "curl_dlrom", "spt_dlrom")
LABELS = {
    "podnn": ("Conservative POD-NN", "POD"),
    "curl_dlrom": ("Conservative Curl DL-ROM", "Curl"),
    "spt_dlrom": ("Conservative SpT DL-ROM", "I - S_I B"),
    "blackbox_l2": ("Black-box L2", "-"),
    "blackbox_hdiv": ("Black-box H(div)", "-"),
    "fom": ("Full-order model", "-"),
}
_KMAP = {"podnn": "pod", "curl_dlrom": "curl", "spt_dlrom": "projection"}
_SEED_OFFSET = {v: 100 * (i + 1) for i, v in enumerate(VARIANTS)}


@dataclass
class RomConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    n_pod: int = None
    seed: int = 0
    pressure: str = "first"   # or "average"
    presets: dict = field(default_factory=dict)   # role -> explicit layer spec override


class RomModel:
    """A trained surrogate bound to one mesh, problem and tree solver."""

    def __init__(self, variant, problem: ProblemSpec, ops: OperatorSet, solver: AveragedSolver,
                 nets: dict, kmap: KernelMap = None, pressure="first", info=None):
        if variant not in VARIANTS and variant != "fom":
            raise ValueError(f"unknown variant {variant!r}")
        if pressure not in ("first", "average"):
            raise ValueError("pressure must be 'first' or 'average'")
        self.variant = variant
        self.problem = problem
        self.ops = ops
        self.solver = solver
        self.nets = nets
        self.kmap = kmap
        self.pressure = pressure
        self.info = dict(info or {})
        if self.conservative:
            out = self.nets["psi"].out_dim if "psi" in nets else self.nets["net"].out_dim
            if out != kmap.dim:
                raise ValueError(f"network output {out} does not match potential dimension {kmap.dim}")

    @property
    def conservative(self) -> bool:
        return self.variant in CONSERVATIVE

    def potential(self, MU):
        if "psi" in self.nets:
            return self.nets["psi"](self.nets["phi"](MU))
        return self.nets["net"](MU)

    def _check_mu(self, MU):
        MU = np.atleast_2d(np.asarray(MU, dtype=float))
        for mu in MU:
            self.problem.check(mu)
        return MU

    def flux(self, MU, F=None):
        """Predicted fluxes, rows ``(N, n_edges)``; ``F`` optionally holds the source vectors."""
        MU = self._check_mu(MU)
        mesh = self.ops.mesh
        if not self.conservative:
            return self.nets["net"](MU)
        if F is None:
            F = np.array([self.problem.f_vec(mesh, mu) for mu in MU])
        qf = self.solver.apply(F.T).T
        return qf + self.kmap.apply_rows(self.potential(MU))

    def pressure_from_flux(self, MU, Q, G=None):
        """``p = S_I^*(A(q) q - g)`` with ``A`` assembled once at the given flux."""
        MU = np.atleast_2d(MU)
        mesh = self.ops.mesh
        if G is None:
            G = np.array([self.problem.g_vec(mesh, mu) for mu in MU])
        if self.problem.nonlinear:
            AQ = np.array([self.problem.flux_operator(self.ops, mu, q) @ q for mu, q in zip(MU, Q)])
        else:
            AQ = (self.ops.M_q @ Q.T).T
        adj = self.solver.trees[0].apply_adjoint if self.pressure == "first" else self.solver.apply_adjoint
        return adj((AQ - G).T).T

    def evaluate_batch(self, MU):
        MU = self._check_mu(MU)
        mesh = self.ops.mesh
        F = np.array([self.problem.f_vec(mesh, mu) for mu in MU])
        Q = self.flux(MU, F)
        return Q, self.pressure_from_flux(MU, Q)

    def evaluate(self, mu):
        Q, P = self.evaluate_batch(np.atleast_2d(mu))
        return Q[0], P[0]

    # -- persistence -------------------------------------------------------

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, net in self.nets.items():
            net.save(d, name)
        if self.kmap is not None and self.kmap.variant == "pod":
            self.kmap.pod.save(d)
        meta = {
            "variant": self.variant,
            "case": self.problem.tag,
            "pressure": self.pressure,
            "networks": sorted(self.nets),
            "info": self.info,
        }
        (d / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory, problem: ProblemSpec, ops: OperatorSet, solver: AveragedSolver) -> "RomModel":
        d = Path(directory)
        meta = json.loads((d / "model.json").read_text())
        if meta["case"] != problem.tag:
            raise ValueError(f"model was trained for {meta['case']}, not {problem.tag}")
        nets = {name: DenseNetwork.load(d, name) for name in meta["networks"]}
        kmap = None
        variant = meta["variant"]
        if variant in CONSERVATIVE:
            pod = PodBasis.load(d) if variant == "podnn" else None
            kmap = KernelMap(_KMAP[variant], ops, solver=solver, pod=pod)
        return cls(variant, problem, ops, solver, nets, kmap, meta["pressure"], meta["info"])


class FomModel:
    """Debug stand-in returning the stored full-order solution for known parameters."""

    variant = "fom"
    conservative = True

    def __init__(self, snapshots):
        self._lookup = {tuple(s.mu.tolist()): s for s in snapshots}

    def evaluate_batch(self, MU):
        snaps = [self._lookup[tuple(np.asarray(mu, float).tolist())] for mu in np.atleast_2d(MU)]
        return np.array([s.q for s in snaps]), np.array([s.p for s in snaps])


def _arrays(snapshots):
    return (np.array([s.mu for s in snapshots]), np.array([s.q for s in snapshots]))


def _normalization(problem):
    lo, hi = np.asarray(problem.bounds, dtype=float).T
    return lo, 1.0 / (hi - lo)


def build_rom(variant, snapshots, ops: OperatorSet, problem: ProblemSpec, solver: AveragedSolver,
              cfg: RomConfig = None) -> RomModel:
    """Offline pipeline: homogeneous split, kernel map, network training, packaging."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    cfg = cfg or RomConfig()
    MU, Q = _arrays(snapshots)
    mesh = ops.mesh
    rng = Rng(cfg.seed).derive(_SEED_OFFSET[variant])
    shift, scale = _normalization(problem)
    case = problem.tag
    sizes = {"n_flux": mesh.n_edges}

    if "phi" in cfg.presets:
        sizes["latent"] = int(cfg.presets["phi"]["dims"][-1])

    def net_for(role, k, **extra):
        if role in cfg.presets:
            spec = resolve_spec(cfg.presets[role], **sizes, **extra)
        else:
            spec = preset_spec(case, role, **sizes, **extra)
        takes_mu = role in ("podnn", "phi", "blackbox")
        return build_network(spec, rng.derive(k), *((shift, scale) if takes_mu else (None, None)))

    t0 = time.perf_counter()
    kmap = None
    if variant in CONSERVATIVE:
        Q0 = homogeneous_part(solver, Q)
    if variant == "podnn":
        n_pod = cfg.n_pod or min(DEFAULT_POD_DIM.get(case, 10), len(snapshots))
        pod = build_pod(Q, solver, ops, n_pod)
        kmap = KernelMap("pod", ops, pod=pod)
        C = pod.coefficients(ops, Q0.T).T
        nets = {"net": net_for("podnn", 1, n_pod=n_pod)}
        result = train_podnn(nets["net"], MU, C, cfg.train)
        extra = {"n_pod": n_pod, "truncation_energy": pod.truncation_energy}
    elif variant in ("curl_dlrom", "spt_dlrom"):
        kmap = KernelMap(_KMAP[variant], ops, solver=solver)
        nets = {
            "phi": net_for("phi", 1),
            "psi": net_for("psi", 2, dim_R=kmap.dim),
            "encoder": net_for("encoder", 3),
        }
        result = train_dlrom(nets["phi"], nets["psi"], nets["encoder"], MU, Q0, kmap, ops.M_q, cfg.train)
        # the encoder only regularizes training
        del nets["encoder"]
        extra = {"potential_dim": kmap.dim}
    else:
        nets = {"net": net_for("blackbox", 1)}
        norm = "L2" if variant == "blackbox_l2" else "Hdiv"
        result = train_blackbox(nets["net"], MU, Q, norm, ops, cfg.train)
        extra = {"norm": norm}
    train_time = time.perf_counter() - t0
    info = {
        "train": cfg.train.to_dict(),
        "seed": cfg.seed,
        "n_trees": solver.n_trees,
        "epochs_run": result.epochs_run,
        "evaluations": result.evaluations,
        "loss_initial": result.history[0],
        "loss_final": result.history[-1],
        "mesh_hash": mesh.hash(),
        **extra,
    }
    model = RomModel(variant, problem, ops, solver, nets, kmap, cfg.pressure, info)
    model.history = result.history
    model.train_time = train_time
    return model


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


@dataclass
class EvalReport:
    variant: str
    l2: np.ndarray
    hdiv: np.ndarray
    pressure: np.ndarray
    residual: np.ndarray          # ||B q - f||_inf
    residual_rel: np.ndarray      # residual / (1 + ||f||_inf)
    eval_time: float = 0.0
    train_time: float = 0.0

    def _mean(self, a):
        a = a[np.isfinite(a)]
        return float(a.mean()) if a.size else float("nan")

    @property
    def mean_l2(self):
        return self._mean(self.l2)

    @property
    def mean_hdiv(self):
        return self._mean(self.hdiv)

    @property
    def mean_pressure(self):
        return self._mean(self.pressure)

    @property
    def label(self):
        return LABELS[self.variant]


def _ratio(num, den, what):
    out = np.full(num.shape, np.nan)
    ok = den > 0
    if not ok.all():
        warnings.warn(f"{int((~ok).sum())} test samples have zero {what} reference norm; excluded")
    out[ok] = np.sqrt(num[ok] / den[ok])
    return out


def error_metrics(variant, Q_pred, P_pred, test_snapshots, ops: OperatorSet) -> EvalReport:
    """Per-sample relative flux errors (L2 and H(div)), relative pressure error
    and conservation residual against the test snapshots."""
    if len(test_snapshots) == 0:
        raise ValueError("empty test set")
    Q = np.array([s.q for s in test_snapshots])
    P = np.array([s.p for s in test_snapshots])
    F = np.array([s.f_vec for s in test_snapshots])
    el2, ehd = batch_sq_norms(ops, Q - Q_pred)
    rl2, rhd = batch_sq_norms(ops, Q)
    ep = pressure_l2(ops.mesh, P - P_pred) ** 2
    rp = pressure_l2(ops.mesh, P) ** 2
    res = np.max(np.abs((ops.B @ Q_pred.T).T - F), axis=1)
    return EvalReport(
        variant, _ratio(el2, rl2, "L2 flux"), _ratio(ehd, rhd, "H(div) flux"), _ratio(ep, rp, "pressure"),
        res, res / (1.0 + np.max(np.abs(F), axis=1)),
    )


def evaluate_model(model, test_snapshots, ops) -> EvalReport:
    MU = np.array([s.mu for s in test_snapshots])
    t0 = time.perf_counter()
    Q, P = model.evaluate_batch(MU)
    rep = error_metrics(model.variant, Q, P, test_snapshots, ops)
    rep.eval_time = time.perf_counter() - t0
    rep.train_time = getattr(model, "train_time", 0.0)
    return rep


TABLE_HEADER = ["Model", "Map onto kernel", "L2 flux error", "H(div) flux error",
                "L2 pressure error", "Training evaluations"]


def _fmt(x):
    return f"{x:.6e}"


def report_table(reports, evaluations=None) -> str:
    """Tab-separated comparison table; wall-clock times are kept out so the
    table is reproducible byte for byte."""
    evaluations = evaluations or {}
    lines = ["\t".join(TABLE_HEADER)]
    for r in reports:
        name, kmap = r.label
        lines.append("\t".join([
            name, kmap, _fmt(r.mean_l2), _fmt(r.mean_hdiv), _fmt(r.mean_pressure),
            str(evaluations.get(r.variant, "-")),
        ]))
    return "\n".join(lines) + "\n"


def per_sample_csv(report: EvalReport, MU) -> str:
    MU = np.atleast_2d(MU)
    head = ",".join([f"mu{i}" for i in range(MU.shape[1])] +
                    ["l2_error", "hdiv_error", "pressure_error", "residual", "residual_rel"])
    rows = [head]
    for k in range(len(report.l2)):
        vals = list(MU[k]) + [report.l2[k], report.hdiv[k], report.pressure[k],
                              report.residual[k], report.residual_rel[k]]
        rows.append(",".join(repr(float(v)) for v in vals))
    return "\n".join(rows) + "\n"
