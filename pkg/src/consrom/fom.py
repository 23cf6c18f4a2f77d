"""Full-order mixed solvers for the parametrized Darcy and Darcy-Forchheimer
problems, and the snapshot archive."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from .errors import ConvergenceError, DomainError, FactorizationError, NumericalError, SolverError
from .fem import OperatorSet, assemble_rhs_g, project_source
from .numerics import Rng, SparseLU, latin_hypercube, read_matrix, write_matrix

CONSERVATION_RTOL = 1e-10


# ---------------------------------------------------------------------------
# problem catalog
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProblemSpec:
    """A parametrized problem: data closures plus the flux law.

    Callables take points of shape ``(..., 2)`` and a parameter vector.
    ``kappas(mu)`` returns ``(k0, k1)`` for the Forchheimer law or ``None``
    for linear Darcy with unit conductivity.
    """

    tag: str
    bounds: tuple
    source: callable
    vector_source: callable = None
    boundary_pressure: callable = None
    kappas: callable = None

    @property
    def n_params(self) -> int:
        return len(self.bounds)

    @property
    def nonlinear(self) -> bool:
        return self.kappas is not None

    def check(self, mu) -> np.ndarray:
        mu = np.asarray(mu, dtype=float)
        if mu.shape != (self.n_params,):
            raise DomainError(f"{self.tag} expects {self.n_params} parameters, got shape {mu.shape}")
        lo, hi = np.asarray(self.bounds).T
        if not np.all(np.isfinite(mu)) or np.any(mu < lo) or np.any(mu > hi):
            raise DomainError(f"parameter {mu.tolist()} outside bounds {[list(b) for b in self.bounds]}")
        return mu

    def f_vec(self, mesh, mu) -> np.ndarray:
        return project_source(mesh, self.source, mu)

    def g_vec(self, mesh, mu) -> np.ndarray:
        return assemble_rhs_g(mesh, self.vector_source, self.boundary_pressure, mu)

    def flux_coefficient(self, ops: OperatorSet, mu, q) -> np.ndarray:
        """Cellwise coefficient of the flux law at flux ``q``."""
        if not self.nonlinear:
            return np.ones(ops.mesh.n_cells)
        k0, k1 = self.kappas(mu)
        return forchheimer_coefficient(ops, q, k0, k1)

    def flux_operator(self, ops: OperatorSet, mu, q) -> sps.csr_array:
        return ops.M_q if not self.nonlinear else ops.mass_matrix(self.flux_coefficient(ops, mu, q))


def _sines_source(x, mu):
    return np.sin(mu[0] * 2 * np.pi * x[..., 0]) * np.sin(mu[1] * 2 * np.pi * x[..., 1])


def _unit_x(x, mu):
    out = np.zeros(x.shape)
    out[..., 0] = 1.0
    return out


def _forch_source(x, mu):
    return mu[0] * np.sin(2 * np.pi * x[..., 0]) + (1 - mu[0]) * np.sin(2 * np.pi * x[..., 1])


def _forch_boundary(x, mu):
    return mu[1] * x[..., 0] * x[..., 1]


def _forch_kappas(mu):
    return 10.0 ** mu[2], 10.0 ** mu[3]


SINES_2D = ProblemSpec("Sines2D", ((1.0, 4.0), (1.0, 4.0)), _sines_source, vector_source=_unit_x)
FORCHHEIMER_2D = ProblemSpec(
    "Forchheimer2D", ((0.0, 1.0), (0.0, 1.0), (-2.0, 1.0), (0.0, 2.0)),
    _forch_source, boundary_pressure=_forch_boundary, kappas=_forch_kappas,
)
PROBLEMS = {p.tag: p for p in (SINES_2D, FORCHHEIMER_2D)}


def get_problem(tag: str) -> ProblemSpec:
    try:
        return PROBLEMS[tag]
    except KeyError:
        raise ValueError(f"unknown case {tag!r}; choose from {sorted(PROBLEMS)}") from None


# ---------------------------------------------------------------------------
# solvers
# ---------------------------------------------------------------------------


@dataclass
class Snapshot:
    mu: np.ndarray
    q: np.ndarray
    p: np.ndarray
    f_vec: np.ndarray
    g_vec: np.ndarray
    iterations: int = 1

    def conservation_residual(self, ops) -> float:
        return float(np.max(np.abs(ops.B @ self.q - self.f_vec)))


def _saddle_matrix(ops, mass):
    return sps.bmat([[mass, -ops.B.T], [ops.B, None]], format="csc")


def check_conservation(ops, q, f_vec):
    res = np.max(np.abs(ops.B @ q - f_vec))
    if res > CONSERVATION_RTOL * (1.0 + np.max(np.abs(f_vec))):
        raise NumericalError(f"discrete conservation violated: ||Bq - f||_inf = {res:.3e}")
    return res


class DarcySolver:
    """Factor the linear saddle-point system once and reuse it."""

    def __init__(self, ops: OperatorSet, mass=None):
        self.ops = ops
        self._lu = SparseLU(_saddle_matrix(ops, ops.M_q if mass is None else mass))

    def solve(self, f_vec, g_vec):
        E = self.ops.mesh.n_edges
        x = self._lu.solve(np.concatenate([g_vec, f_vec]))
        q, p = x[:E], x[E:]
        check_conservation(self.ops, q, f_vec)
        return q, p


def solve_darcy(ops: OperatorSet, f_vec, g_vec, mass=None):
    """Solve ``[M, -B^T; B, 0][q; p] = [g; f]`` (``M`` defaults to the unit-coefficient mass)."""
    return DarcySolver(ops, mass).solve(np.asarray(f_vec, float), np.asarray(g_vec, float))


def forchheimer_coefficient(ops: OperatorSet, q, k0, k1) -> np.ndarray:
    qx, qy = ops.centroid_values(q)
    return (1.0 + np.hypot(qx, qy) / k1) / k0


def forchheimer_residual(ops, q, p, g_vec, k0, k1) -> float:
    """Relative residual of the nonlinear flux equation."""
    aq = ops.mass_matrix(forchheimer_coefficient(ops, q, k0, k1)) @ q
    btp = ops.B.T @ p
    r = aq - btp - g_vec
    scale = max(np.max(np.abs(aq)), np.max(np.abs(btp)), np.max(np.abs(g_vec)), 1e-300)
    return float(np.max(np.abs(r)) / scale)


@dataclass
class PicardInfo:
    iterations: int = 0
    increments: list = field(default_factory=list)
    residual: float = np.inf


def solve_forchheimer(ops: OperatorSet, f_vec, g_vec, k0, k1, tol=1e-12, res_tol=1e-8,
                      max_iter=200, relax=2.0 / 3.0, info: PicardInfo = None):
    """Damped Picard iteration on the frozen-coefficient Darcy system.

    Each step assembles the mass matrix with the cellwise coefficient
    ``(1 + |q_k|/k1)/k0`` (``|q_k|`` at the centroid), solves, and blends
    ``q_{k+1} = (1-relax) q_k + relax q_hat``.  Blending two conservative
    fluxes keeps every iterate conservative.  Stops once the L2 increment is
    below ``tol (1 + ||q||)`` and the nonlinear residual below ``res_tol``.
    """
    if k0 <= 0 or k1 <= 0:
        raise ValueError("k0 and k1 must be positive")
    if not 0 < relax <= 1:
        raise ValueError("relax must lie in (0, 1]")
    f_vec = np.asarray(f_vec, float)
    g_vec = np.asarray(g_vec, float)
    info = info if info is not None else PicardInfo()
    q, p = solve_darcy(ops, f_vec, g_vec, ops.M_q / k0)
    info.iterations = 1
    if not np.any(q) and not np.any(g_vec):
        info.residual = 0.0
        return q, p
    m = ops.M_q
    for it in range(2, max_iter + 1):
        mass = ops.mass_matrix(forchheimer_coefficient(ops, q, k0, k1))
        q_hat, p_hat = solve_darcy(ops, f_vec, g_vec, mass)
        q_new = (1 - relax) * q + relax * q_hat
        p = (1 - relax) * p + relax * p_hat
        d = q_new - q
        inc = np.sqrt(max(d @ (m @ d), 0.0))
        nq = np.sqrt(max(q_new @ (m @ q_new), 0.0))
        q = q_new
        info.iterations = it
        info.increments.append(inc)
        if inc <= tol * (1 + nq):
            info.residual = forchheimer_residual(ops, q, p, g_vec, k0, k1)
            if info.residual <= res_tol:
                check_conservation(ops, q, f_vec)
                return q, p
    info.residual = forchheimer_residual(ops, q, p, g_vec, k0, k1)
    raise ConvergenceError(
        f"Picard iteration did not converge in {max_iter} iterations", info.residual, max_iter
    )


def solve_problem(problem: ProblemSpec, ops: OperatorSet, mu, linear_solver: DarcySolver = None,
                  **picard) -> Snapshot:
    mu = problem.check(mu)
    mesh = ops.mesh
    f_vec = problem.f_vec(mesh, mu)
    g_vec = problem.g_vec(mesh, mu)
    if problem.nonlinear:
        k0, k1 = problem.kappas(mu)
        info = PicardInfo()
        q, p = solve_forchheimer(ops, f_vec, g_vec, k0, k1, info=info, **picard)
        return Snapshot(mu, q, p, f_vec, g_vec, info.iterations)
    solver = linear_solver or DarcySolver(ops)
    q, p = solver.solve(f_vec, g_vec)
    return Snapshot(mu, q, p, f_vec, g_vec, 1)


def generate_snapshots(problem: ProblemSpec, ops: OperatorSet, rng: Rng, n: int, **picard) -> list:
    """Latin-hypercube parameters and their full-order solutions."""
    if n < 1:
        raise ValueError("n must be >= 1")
    mus = latin_hypercube(rng, n, problem.bounds)
    linear = None if problem.nonlinear else DarcySolver(ops)
    out = []
    for mu in mus:
        try:
            out.append(solve_problem(problem, ops, mu, linear, **picard))
        except (ConvergenceError, NumericalError, FactorizationError) as exc:
            raise SolverError(mu, exc) from exc
    return out


# ---------------------------------------------------------------------------
# archive
# ---------------------------------------------------------------------------

_FIELDS = {"params": "mu", "flux": "q", "pressure": "p", "source": "f_vec", "rhs_g": "g_vec"}


def save_snapshots(directory, snapshots, metadata: dict) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for fname, attr in _FIELDS.items():
        write_matrix(d / f"{fname}.crom", np.array([getattr(s, attr) for s in snapshots]))
    meta = dict(metadata)
    meta["n_samples"] = len(snapshots)
    meta["iterations"] = [int(s.iterations) for s in snapshots]
    (d / "metadata.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def load_snapshots(directory):
    d = Path(directory)
    meta = json.loads((d / "metadata.json").read_text())
    arrays = {attr: read_matrix(d / f"{fname}.crom") for fname, attr in _FIELDS.items()}
    its = meta.get("iterations", [1] * arrays["mu"].shape[0])
    snaps = [
        Snapshot(arrays["mu"][i], arrays["q"][i], arrays["p"][i], arrays["f_vec"][i], arrays["g_vec"][i], its[i])
        for i in range(arrays["mu"].shape[0])
    ]
    return snaps, meta
