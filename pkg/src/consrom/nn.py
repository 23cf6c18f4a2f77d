"""Dense feedforward networks with hand-written backpropagation, the losses of
the conservative surrogates, and full-batch L-BFGS / Adam training.

Batches are row-major: inputs ``(N, d_in)``, outputs ``(N, d_out)``.  A layer
computes ``act(A W^T + b)`` with ``W`` of shape ``(out, in)``.
"""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .errors import TrainingError
from .numerics import Rng, read_matrix, write_matrix

SLOPE = 0.1
ACTIVATIONS = ("leaky_relu", "identity")


def leaky_relu(x):
    return np.where(x >= 0.0, x, SLOPE * x)


def _act(name, z):
    return leaky_relu(z) if name == "leaky_relu" else z


def _act_grad(name, z):
    return np.where(z >= 0.0, 1.0, SLOPE) if name == "leaky_relu" else 1.0


# ---------------------------------------------------------------------------
# feature layer
# ---------------------------------------------------------------------------

_J = np.arange(1, 226)
_FEAT_A = (_J % 15) / 14.0
_FEAT_B = (_J - _J % 15) / (14.0 * 15.0)


def feature_layer_case1(mu):
    """Source-term samples on a 15 x 15 grid: 2 parameters -> 225 features."""
    mu = np.asarray(mu, dtype=float)
    m = np.atleast_2d(mu)
    out = np.sin(2 * np.pi * m[:, :1] * _FEAT_A) * np.sin(2 * np.pi * m[:, 1:2] * _FEAT_B)
    return out[0] if mu.ndim == 1 else out


FEATURES = {"case1": (2, 225, feature_layer_case1)}


# ---------------------------------------------------------------------------
# networks
# ---------------------------------------------------------------------------


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.b.shape != (self.W.shape[0],):
            raise ValueError("bias length must equal the output dimension")


class DenseNetwork:
    """Sequence of dense layers, optionally preceded by a fixed feature map
    or by an affine input normalization ``(x - shift) * scale``."""

    def __init__(self, layers, feature=None, shift=None, scale=None):
        if not layers:
            raise ValueError("a network needs at least one layer")
        for a, b in zip(layers, layers[1:]):
            if a.W.shape[0] != b.W.shape[1]:
                raise ValueError(f"layer dimensions do not compose: {a.W.shape} then {b.W.shape}")
        if feature is not None:
            if feature not in FEATURES:
                raise ValueError(f"unknown feature layer {feature!r}")
            if FEATURES[feature][1] != layers[0].W.shape[1]:
                raise ValueError("feature output does not match the first dense layer")
        self.layers = list(layers)
        self.feature = feature
        d = self.in_dim
        self.shift = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
        self.scale = np.ones(d) if scale is None else np.asarray(scale, dtype=float)
        self._feat_cache = None

    @classmethod
    def init(cls, dims, activations, rng: Rng, feature=None, shift=None, scale=None):
        """Glorot-uniform weights, zero biases.  ``dims`` lists the dense widths."""
        if len(activations) != len(dims) - 1:
            raise ValueError("need one activation per dense layer")
        gen = rng.generator
        layers = []
        for fan_in, fan_out, act in zip(dims[:-1], dims[1:], activations):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            layers.append(Layer(gen.uniform(-lim, lim, (fan_out, fan_in)), np.zeros(fan_out), act))
        return cls(layers, feature, shift, scale)

    @property
    def in_dim(self) -> int:
        return FEATURES[self.feature][0] if self.feature else self.layers[0].W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].W.shape[0]

    @property
    def n_params(self) -> int:
        return sum(l.W.size + l.b.size for l in self.layers)

    def get_params(self) -> np.ndarray:
        return np.concatenate([np.concatenate([l.W.ravel(), l.b]) for l in self.layers])

    def set_params(self, theta) -> None:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got {theta.shape}")
        k = 0
        for l in self.layers:
            l.W = theta[k:k + l.W.size].reshape(l.W.shape).copy()
            k += l.W.size
            l.b = theta[k:k + l.b.size].copy()
            k += l.b.size

    def _pre(self, X):
        if self.feature:
            # training reuses one input array; the fixed feature map is computed once
            hit = self._feat_cache
            if hit is not None and hit[0] is X:
                return hit[1]
            out = FEATURES[self.feature][2](X)
            self._feat_cache = (X, out)
            return out
        return (X - self.shift) * self.scale

    def forward(self, X, keep=False):
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.in_dim:
            raise ValueError(f"input has {X.shape[1]} features, network expects {self.in_dim}")
        A = self._pre(X)
        cache = []
        for l in self.layers:
            Z = A @ l.W.T + l.b
            cache.append((A, Z))
            A = _act(l.activation, Z)
        if keep:
            return A, cache
        return A[0] if single else A

    __call__ = forward

    def backward(self, cache, dY, input_grad=False):
        """Flat parameter gradient for upstream gradient ``dY`` (and ``dL/dX``
        after the input map when ``input_grad``; not defined through a feature layer)."""
        g = np.empty(self.n_params)
        end = g.size
        dA = np.atleast_2d(dY)
        for i in range(len(self.layers) - 1, -1, -1):
            l = self.layers[i]
            A, Z = cache[i]
            dZ = dA * _act_grad(l.activation, Z) if l.activation == "leaky_relu" else dA
            nw, nb = l.W.size, l.b.size
            g[end - nb:end] = dZ.sum(axis=0)
            np.matmul(dZ.T, A, out=g[end - nb - nw:end - nb].reshape(l.W.shape))
            end -= nw + nb
            if i > 0 or input_grad:
                dA = dZ @ l.W
        if not input_grad:
            return g
        if self.feature:
            raise ValueError("input gradient through a feature layer is not supported")
        return g, dA * self.scale

    def to_meta(self) -> dict:
        return {
            "dims": [self.layers[0].W.shape[1]] + [l.W.shape[0] for l in self.layers],
            "activations": [l.activation for l in self.layers],
            "feature": self.feature,
            "shift": self.shift.tolist(),
            "scale": self.scale.tolist(),
        }

    def save(self, directory, name: str) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / f"{name}.json").write_text(json.dumps(self.to_meta(), indent=2, sort_keys=True) + "\n")
        for i, l in enumerate(self.layers):
            write_matrix(d / f"{name}_W{i}.crom", l.W)
            write_matrix(d / f"{name}_b{i}.crom", l.b)

    @classmethod
    def load(cls, directory, name: str) -> "DenseNetwork":
        d = Path(directory)
        meta = json.loads((d / f"{name}.json").read_text())
        layers = []
        for i, act in enumerate(meta["activations"]):
            W = read_matrix(d / f"{name}_W{i}.crom")
            b = read_matrix(d / f"{name}_b{i}.crom")[:, 0]
            layers.append(Layer(W, b, act))
        return cls(layers, meta["feature"], meta["shift"], meta["scale"])


class ParamPack:
    """Concatenated parameter vector of several networks."""

    def __init__(self, nets):
        self.nets = list(nets)
        self.sizes = [n.n_params for n in self.nets]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])

    @property
    def n_params(self) -> int:
        return int(self.offsets[-1])

    def get(self):
        return np.concatenate([n.get_params() for n in self.nets])

    def set(self, theta):
        for n, a, b in zip(self.nets, self.offsets[:-1], self.offsets[1:]):
            n.set_params(theta[a:b])


# ---------------------------------------------------------------------------
# losses (value and flat gradient)
# ---------------------------------------------------------------------------


def _rows_quadform(R, G):
    """Per-row ``r^T G r`` and ``G r`` for a symmetric (sparse or dense) ``G``."""
    GR = (G @ R.T).T
    return np.einsum("ij,ij->i", R, GR), GR


def podnn_loss(net, X, C):
    """Mean squared coefficient mismatch ``(1/N) sum ||c_i - N(mu_i)||^2``."""
    Y, cache = net.forward(X, keep=True)
    R = C - Y
    n = X.shape[0]
    return float(np.sum(R * R) / n), net.backward(cache, -2.0 * R / n)


def kernel_loss(net, X, Q0, kmap, M):
    """Flux mismatch through the kernel map: ``(1/N) sum ||q0_i - S0 N(mu_i)||_M^2``."""
    Y, cache = net.forward(X, keep=True)
    R = Q0 - kmap.apply_rows(Y)
    val, MR = _rows_quadform(R, M)
    n = X.shape[0]
    dY = kmap.adjoint_rows(-2.0 * MR / n)
    return float(val.sum() / n), net.backward(cache, dY)


def dlrom_loss(phi, psi, enc, X, Q0, kmap, M, lam):
    """Reconstruction through ``S0 Psi phi`` plus ``lam`` times the latent
    mismatch between the encoder ``Psi'(q0)`` and ``phi(mu)``."""
    if lam < 0:
        raise ValueError("lam must be non-negative")
    n = X.shape[0]
    Z, c_phi = phi.forward(X, keep=True)
    Y, c_psi = psi.forward(Z, keep=True)
    R = Q0 - kmap.apply_rows(Y)
    val, MR = _rows_quadform(R, M)
    loss = val.sum() / n
    g_psi, dZ = psi.backward(c_psi, kmap.adjoint_rows(-2.0 * MR / n), input_grad=True)
    if lam > 0:
        E, c_enc = enc.forward(Q0, keep=True)
        D = E - Z
        loss += lam * np.sum(D * D) / n
        dZ = dZ - 2.0 * lam * D / n
        g_enc = enc.backward(c_enc, 2.0 * lam * D / n)
    else:
        g_enc = np.zeros(enc.n_params)
    g_phi = phi.backward(c_phi, dZ)
    return float(loss), np.concatenate([g_phi, g_psi, g_enc])


def blackbox_loss(net, X, Q, G):
    """``(1/N) sum ||q_i - Phi(mu_i)||_X^2`` with Gram matrix ``G`` of the X norm."""
    Y, cache = net.forward(X, keep=True)
    R = Q - Y
    val, GR = _rows_quadform(R, G)
    n = X.shape[0]
    return float(val.sum() / n), net.backward(cache, -2.0 * GR / n)


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------


@dataclass
class TrainConfig:
    optimizer: str = "lbfgs"
    epochs: int = 500
    lr: float = None
    lam: float = 1.0
    seed: int = 0
    max_iter: int = 20          # L-BFGS iterations per epoch
    history_size: int = 10
    tolerance_grad: float = 1e-7
    tolerance_change: float = 1e-9

    def __post_init__(self):
        if self.optimizer not in ("lbfgs", "adam"):
            raise ValueError(f"optimizer must be 'lbfgs' or 'adam', got {self.optimizer!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.lr is None:
            self.lr = 1.0 if self.optimizer == "lbfgs" else 1e-3

    def to_dict(self):
        return asdict(self)


def _cubic_min(x1, f1, g1, x2, f2, g2, lo=None, hi=None):
    """Minimizer of the cubic interpolating two points with slopes, clipped to ``[lo, hi]``."""
    if lo is None:
        lo, hi = min(x1, x2), max(x1, x2)
    with np.errstate(all="ignore"):
        d1 = g1 + g2 - 3 * (f1 - f2) / (x1 - x2)
        d2sq = d1 * d1 - g1 * g2
        if d2sq >= 0:
            d2 = np.sqrt(d2sq)
            if x1 <= x2:
                pos = x2 - (x2 - x1) * ((g2 + d2 - d1) / (g2 - g1 + 2 * d2))
            else:
                pos = x1 - (x1 - x2) * ((g1 + d2 - d1) / (g1 - g2 + 2 * d2))
            if np.isfinite(pos):
                return float(min(max(pos, lo), hi))
    return 0.5 * (lo + hi)


def strong_wolfe(fg, x, t, d, f0, g0, gtd0, c1=1e-4, c2=0.9, tol_change=1e-9, max_ls=25):
    """Bracketing + zoom line search with cubic interpolation.

    Returns ``(f, g, t, evals)`` for the best accepted point; ``t = 0`` (and
    the starting values) if no point with sufficient decrease was found.
    """
    d_norm = np.max(np.abs(d))
    f_new, g_new = fg(x + t * d)
    evals = 1
    gtd_new = g_new @ d
    t_prev, f_prev, g_prev, gtd_prev = 0.0, f0, g0, gtd0
    done = False
    it = 0
    while it < max_ls:
        if not np.isfinite(f_new):
            br, brf, brg, brgtd = [t_prev, t], [f_prev, np.inf], [g_prev, g_new], [gtd_prev, np.inf]
            break
        if f_new > f0 + c1 * t * gtd0 or (it > 1 and f_new >= f_prev):
            br, brf, brg, brgtd = [t_prev, t], [f_prev, f_new], [g_prev, g_new], [gtd_prev, gtd_new]
            break
        if abs(gtd_new) <= -c2 * gtd0:
            br, brf, brg, brgtd = [t], [f_new], [g_new], [gtd_new]
            done = True
            break
        if gtd_new >= 0:
            br, brf, brg, brgtd = [t_prev, t], [f_prev, f_new], [g_prev, g_new], [gtd_prev, gtd_new]
            break
        t_next = _cubic_min(t_prev, f_prev, gtd_prev, t, f_new, gtd_new, t + 0.01 * (t - t_prev), 10 * t)
        t_prev, f_prev, g_prev, gtd_prev = t, f_new, g_new, gtd_new
        t = t_next
        f_new, g_new = fg(x + t * d)
        evals += 1
        gtd_new = g_new @ d
        it += 1
    else:
        br, brf, brg, brgtd = [0.0, t], [f0, f_new], [g0, g_new], [gtd0, gtd_new]

    insuf = False
    lo, hi = (0, 1) if len(brf) == 1 or brf[0] <= brf[-1] else (1, 0)
    while not done and it < max_ls and len(br) == 2:
        if abs(br[1] - br[0]) * d_norm < tol_change:
            break
        if np.isfinite(brf[hi]):
            t = _cubic_min(br[0], brf[0], brgtd[0], br[1], brf[1], brgtd[1])
        else:
            t = 0.5 * (br[0] + br[1])
        bmax, bmin = max(br), min(br)
        eps = 0.1 * (bmax - bmin)
        if min(bmax - t, t - bmin) < eps:
            if insuf or t >= bmax or t <= bmin:
                t = bmax - eps if abs(t - bmax) < abs(t - bmin) else bmin + eps
                insuf = False
            else:
                insuf = True
        else:
            insuf = False
        f_new, g_new = fg(x + t * d)
        evals += 1
        gtd_new = g_new @ d
        it += 1
        if not np.isfinite(f_new) or f_new > f0 + c1 * t * gtd0 or f_new >= brf[lo]:
            br[hi], brf[hi], brg[hi], brgtd[hi] = t, f_new, g_new, gtd_new
            lo, hi = (0, 1) if brf[0] <= brf[1] else (1, 0)
        else:
            if abs(gtd_new) <= -c2 * gtd0:
                done = True
            elif gtd_new * (br[hi] - br[lo]) >= 0:
                br[hi], brf[hi], brg[hi], brgtd[hi] = br[lo], brf[lo], brg[lo], brgtd[lo]
            br[lo], brf[lo], brg[lo], brgtd[lo] = t, f_new, g_new, gtd_new
    k = lo if len(br) == 2 else 0
    if not np.isfinite(brf[k]) or brf[k] > f0:
        return f0, g0, 0.0, evals
    return brf[k], brg[k], br[k], evals


class LBFGS:
    """Full-batch limited-memory BFGS with strong-Wolfe line search.

    One :meth:`step` runs up to ``max_iter`` iterations (and at most
    ``max_eval`` loss evaluations), keeping curvature pairs across steps.
    The inverse-Hessian product uses the compact representation
    ``H = gamma I + [S  gamma Y] K [S  gamma Y]^T`` over preallocated
    history buffers, so a direction costs a handful of BLAS passes.
    """

    def __init__(self, fg, x0, lr=1.0, max_iter=20, history_size=10,
                 tolerance_grad=1e-7, tolerance_change=1e-9, max_eval=None):
        self.fg = fg
        self.x = np.array(x0, dtype=float)
        self.lr = lr
        self.max_iter = max_iter
        self.max_eval = max_eval or (max_iter * 5) // 4
        self.m = history_size
        self.tol_grad = tolerance_grad
        self.tol_change = tolerance_change
        n = self.x.size
        # rows [0, m) hold s vectors, rows [m, 2m) the matching y vectors
        self.Z = np.zeros((2 * self.m, n))
        self.Sb = self.Z[:self.m]
        self.Yb = self.Z[self.m:]
        self.StY = np.zeros((self.m, self.m))   # StY[i, j] = s_i . y_j (buffer slots)
        self.YtY = np.zeros((self.m, self.m))
        self.slots = []                          # buffer slots, oldest first
        self.d = None
        self.t = None
        self.g_prev = None
        self.n_iter = 0
        self.f, self.g = fg(self.x)
        self.converged = False

    def _push(self, s, y):
        if len(self.slots) < self.m:
            r = len(self.slots)
        else:
            r = self.slots.pop(0)
        self.Sb[r] = s
        self.Yb[r] = y
        self.slots.append(r)
        m = self.m
        zy = self.Z @ y
        zs = self.Yb @ s
        self.StY[:, r] = zy[:m]
        self.StY[r, :] = zs
        self.YtY[:, r] = zy[m:]
        self.YtY[r, :] = zy[m:]

    def _direction(self, g):
        if not self.slots:
            return -g
        m = self.m
        p = np.array(self.slots)
        last = p[-1]
        gamma = self.StY[last, last] / self.YtY[last, last]
        zg = self.Z @ g
        a, b = zg[:m][p], zg[m:][p]
        sty = self.StY[np.ix_(p, p)]
        R = np.triu(sty)
        D = np.diag(np.diag(sty))
        u = solve_triangular(R, a)                                   # R^{-1} S^T g
        w = solve_triangular(R, (D + gamma * self.YtY[np.ix_(p, p)]) @ u - gamma * b, trans="T")
        c = np.zeros(2 * m)
        c[p] = w
        c[m + p] = -gamma * u
        hg = c @ self.Z
        hg += gamma * g
        return -hg

    def step(self):
        if self.converged:
            return self.f
        f, g = self.f, self.g
        if np.max(np.abs(g)) <= self.tol_grad:
            self.converged = True
            return f
        evals = 0
        for _ in range(self.max_iter):
            if self.d is not None:
                y = g - self.g_prev
                s = self.d * self.t
                if y @ s > 1e-10:
                    self._push(s, y)
            d = self._direction(g)
            t = min(1.0, 1.0 / np.sum(np.abs(g))) * self.lr if self.n_iter == 0 else self.lr
            self.n_iter += 1
            gtd = g @ d
            if gtd > -self.tol_change:
                break
            f_prev = f
            g_prev = g
            f, g, t, ne = strong_wolfe(self.fg, self.x, t, d, f, g, gtd, tol_change=self.tol_change)
            evals += ne
            if t == 0.0:
                # no acceptable point along a descent direction: nothing left to gain
                self.converged = True
                break
            self.g_prev = g_prev
            self.x = self.x + t * d
            self.d, self.t = d, t
            if np.max(np.abs(g)) <= self.tol_grad:
                self.converged = True
                break
            if evals >= self.max_eval or np.max(np.abs(d * t)) <= self.tol_change \
                    or abs(f - f_prev) < self.tol_change:
                break
        self.f, self.g = f, g
        return f


class Adam:
    def __init__(self, fg, x0, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.fg = fg
        self.x = np.array(x0, dtype=float)
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros_like(self.x)
        self.v = np.zeros_like(self.x)
        self.k = 0
        self.f, self.g = fg(self.x)
        self.best_x, self.best_f = self.x.copy(), self.f
        self.converged = False

    def step(self):
        self.k += 1
        g = self.g
        self.m = self.b1 * self.m + (1 - self.b1) * g
        self.v = self.b2 * self.v + (1 - self.b2) * g * g
        mh = self.m / (1 - self.b1**self.k)
        vh = self.v / (1 - self.b2**self.k)
        self.x = self.x - self.lr * mh / (np.sqrt(vh) + self.eps)
        self.f, self.g = self.fg(self.x)
        if np.isfinite(self.f) and self.f < self.best_f:
            self.best_x, self.best_f = self.x.copy(), self.f
        return self.f


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    epochs_run: int = 0
    evaluations: int = 0


def train(pack: ParamPack, loss_of_pack, cfg: TrainConfig) -> TrainResult:
    """Minimize ``loss_of_pack()`` (value and flat gradient at the pack's current
    parameters) over the pack's parameters.  ``history[0]`` is the initial loss,
    ``history[k]`` the loss after epoch ``k``."""
    res = TrainResult()

    def fg(theta):
        pack.set(theta)
        res.evaluations += 1
        f, g = loss_of_pack()
        return f, g

    x0 = pack.get()
    if cfg.optimizer == "lbfgs":
        opt = LBFGS(fg, x0, cfg.lr, cfg.max_iter, cfg.history_size, cfg.tolerance_grad, cfg.tolerance_change)
    else:
        opt = Adam(fg, x0, cfg.lr)
    if not np.isfinite(opt.f):
        raise TrainingError("non-finite initial loss", 0)
    res.history.append(float(opt.f))
    for epoch in range(1, cfg.epochs + 1):
        f = opt.step()
        if not np.isfinite(f):
            raise TrainingError("non-finite loss", epoch)
        # Adam is not monotone; it reports and returns its best iterate
        res.history.append(float(f if cfg.optimizer == "lbfgs" else opt.best_f))
        res.epochs_run = epoch
        if opt.converged:
            break
    pack.set(opt.best_x if cfg.optimizer == "adam" else opt.x)
    return res


def train_podnn(net, mu, C, cfg: TrainConfig) -> TrainResult:
    mu, C = np.atleast_2d(mu), np.atleast_2d(C)
    return train(ParamPack([net]), lambda: podnn_loss(net, mu, C), cfg)


def train_dlrom(phi, psi, enc, mu, Q0, kmap, M, cfg: TrainConfig) -> TrainResult:
    if phi.out_dim != psi.in_dim or enc.out_dim != phi.out_dim:
        raise ValueError("latent dimensions of phi, Psi and the encoder must agree")
    mu, Q0 = np.atleast_2d(mu), np.atleast_2d(Q0)
    return train(ParamPack([phi, psi, enc]), lambda: dlrom_loss(phi, psi, enc, mu, Q0, kmap, M, cfg.lam), cfg)


def norm_gram(ops, norm: str):
    if norm == "L2":
        return ops.M_q
    if norm == "Hdiv":
        return ops.hdiv_matrix()
    raise ValueError(f"norm must be 'L2' or 'Hdiv', got {norm!r}")


def train_blackbox(net, mu, Q, norm, ops, cfg: TrainConfig) -> TrainResult:
    G = norm_gram(ops, norm)
    mu, Q = np.atleast_2d(mu), np.atleast_2d(Q)
    return train(ParamPack([net]), lambda: blackbox_loss(net, mu, Q, G), cfg)


# ---------------------------------------------------------------------------
# architecture presets
# ---------------------------------------------------------------------------

L, I = "leaky_relu", "identity"

PRESETS = {
    # potential network for POD-NN; the last width is the POD dimension
    ("Sines2D", "podnn"): {"feature": "case1", "dims": [225, 100, 100, "n_pod"], "acts": [L, L, I]},
    ("Sines2D", "phi"): {"feature": "case1", "dims": [225, 100], "acts": [L]},
    ("Sines2D", "psi"): {"dims": ["latent", 200, "dim_R"], "acts": [L, I]},
    ("Sines2D", "encoder"): {"dims": ["n_flux", 100, "latent"], "acts": [L, L]},
    ("Sines2D", "blackbox"): {"feature": "case1", "dims": [225, 100, 200, 500, "n_flux"], "acts": [L, L, L, I]},
    ("Forchheimer2D", "podnn"): {"dims": [4, 50, 50, 100, "n_pod"], "acts": [L, L, L, I]},
    ("Forchheimer2D", "phi"): {"dims": [4, 50, 50, 4], "acts": [L, L, L]},
    ("Forchheimer2D", "psi"): {"dims": ["latent", 50, "dim_R"], "acts": [L, I]},
    ("Forchheimer2D", "encoder"): {"dims": ["n_flux", "latent"], "acts": [L]},
    ("Forchheimer2D", "blackbox"): {"dims": [4, 50, 50, 4, 50, "n_flux"], "acts": [L, L, L, L, I]},
}
DEFAULT_POD_DIM = {"Sines2D": 100, "Forchheimer2D": 4}


def resolve_spec(spec: dict, **sizes) -> dict:
    """Replace symbolic widths (``n_pod``, ``latent``, ``dim_R``, ``n_flux``) by integers."""
    dims = []
    for d in spec["dims"]:
        if isinstance(d, str) and not d.strip().lstrip("-").isdigit():
            if d not in sizes:
                raise ValueError(f"layer spec needs size {d!r}")
            d = sizes[d]
        dims.append(int(d))
    acts = list(spec["acts"])
    bad = [a for a in acts if a not in ACTIVATIONS]
    if bad:
        raise ValueError(f"unknown activation {bad[0]!r}; choose from {ACTIVATIONS}")
    feature = spec.get("feature")
    if feature is not None and feature not in FEATURES:
        raise ValueError(f"unknown feature layer {feature!r}")
    return {"feature": feature, "dims": dims, "acts": acts}


def preset_spec(case: str, role: str, **sizes) -> dict:
    """Resolve the preset for ``(case, role)``; ``latent`` defaults to the width
    of the case's latent-map output."""
    try:
        spec = PRESETS[(case, role)]
    except KeyError:
        raise ValueError(f"no preset for case {case!r}, role {role!r}") from None
    if "latent" not in sizes:
        sizes["latent"] = PRESETS[(case, "phi")]["dims"][-1]
    return resolve_spec(spec, **sizes)


def build_network(spec: dict, rng: Rng, shift=None, scale=None) -> DenseNetwork:
    return DenseNetwork.init(spec["dims"], spec["acts"], rng, spec.get("feature"),
                             None if spec.get("feature") else shift,
                             None if spec.get("feature") else scale)
