"""Feed-forward Cox network trained on the batch partial likelihood.

The network maps standardized covariates to a log-risk ``h(x)`` through
softplus hidden layers and a bias-free linear output (a bias is not
identified under the partial likelihood). Training uses Adam on the average
negative Breslow log partial likelihood computed over within-batch risk sets,
plus ``kappa`` times the squared norm of the weight matrices.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..survcore import TimeGrid
from .base import FittedModel, Method, cumhaz_to_survival
from .cox import RiskSetIndex, breslow_baseline


def softplus(a):
    return np.logaddexp(0.0, a)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


@dataclass
class MlpParams:
    weights: list
    biases: list
    dropout: float = 0.0
    kappa: float = 0.0

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                         self.dropout, self.kappa)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.weights + self.biases])

    def set_flat(self, v) -> None:
        pos = 0
        for a in self.weights + self.biases:
            a[...] = v[pos:pos + a.size].reshape(a.shape)
            pos += a.size


def init_params(p: int, hidden, rng, dropout=0.0, kappa=0.0) -> MlpParams:
    sizes = [p, *hidden, 1]
    weights, biases = [], []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        limit = np.sqrt(6.0 / (a + b))
        weights.append(rng.uniform(-limit, limit, size=(a, b)))
        if i < len(sizes) - 2:
            biases.append(np.zeros(b))
    return MlpParams(weights, biases, dropout, kappa)


def forward(params: MlpParams, X, masks=None):
    """Log-risk plus the cached activations needed for backprop."""
    acts = [X]
    pre = []
    a = X
    n_hidden = len(params.biases)
    for i in range(n_hidden):
        z = a @ params.weights[i] + params.biases[i]
        pre.append(z)
        a = softplus(z)
        if masks is not None:
            a = a * masks[i]
        acts.append(a)
    h = (a @ params.weights[-1])[:, 0]
    return h, acts, pre


def neg_partial_loglik(h, rs: RiskSetIndex):
    """Average negative Breslow log partial likelihood and its h-gradient."""
    hs = h[rs.order]
    shift = hs.max()
    w = np.exp(hs - shift)
    S0 = rs.rev_cumsum(w)
    d = rs.delta
    n_ev = max(d.sum(), 1.0)
    loss = -np.sum(d * (hs - shift - np.log(S0))) / n_ev
    A = np.cumsum(d / S0)[rs.end]
    g_sorted = -(d - w * A) / n_ev
    g = np.empty_like(h)
    g[rs.order] = g_sorted
    return float(loss), g


def loss_and_grad(params: MlpParams, X, y, delta, masks=None):
    """Penalized batch loss and gradients ``(dW list, db list)``."""
    X = np.asarray(X, dtype=float)
    rs = RiskSetIndex(y, delta)
    h, acts, pre = forward(params, X, masks)
    loss, gh = neg_partial_loglik(h, rs)
    loss += params.kappa * sum(float(np.sum(W * W)) for W in params.weights)
    dW = [None] * len(params.weights)
    db = [None] * len(params.biases)
    upstream = gh[:, None]
    dW[-1] = acts[-1].T @ upstream
    back = upstream @ params.weights[-1].T
    for i in range(len(params.biases) - 1, -1, -1):
        if masks is not None:
            back = back * masks[i]
        dz = back * _sigmoid(pre[i])
        dW[i] = acts[i].T @ dz
        db[i] = dz.sum(axis=0)
        back = dz @ params.weights[i].T
    for i, W in enumerate(params.weights):
        dW[i] = dW[i] + 2.0 * params.kappa * W
    return loss, dW, db


class _Adam:
    def __init__(self, params: MlpParams, lr, b1=0.9, b2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(a) for a in params.weights + params.biases]
        self.v = [np.zeros_like(a) for a in params.weights + params.biases]
        self.t = 0

    def step(self, params: MlpParams, grads):
        self.t += 1
        c1 = 1 - self.b1 ** self.t
        c2 = 1 - self.b2 ** self.t
        for k, (a, g) in enumerate(zip(params.weights + params.biases, grads)):
            self.m[k] = self.b1 * self.m[k] + (1 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1 - self.b2) * g * g
            a -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class DeepSurvModel(FittedModel):
    params: MlpParams
    mean: np.ndarray
    scale: np.ndarray
    event_times: np.ndarray
    hazard_jumps: np.ndarray
    p: int
    epochs_run: int
    restarts: int
    method: Method = Method.DEEPSURV

    def risk_score(self, X) -> np.ndarray:
        X = (self._check_X(X) - self.mean) / self.scale
        return forward(self.params, X)[0]

    def linear_coef(self) -> np.ndarray:
        """Raw-scale coefficients in linear debug mode (no hidden layers)."""
        if self.params.biases:
            raise ValueError("only defined without hidden layers")
        return self.params.weights[0][:, 0] / self.scale

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        knots = np.concatenate([[0.0], self.event_times])
        H0 = np.concatenate([[0.0], np.cumsum(self.hazard_jumps)])
        idx = np.searchsorted(knots, grid.times, side="right") - 1
        return cumhaz_to_survival(np.exp(self.risk_score(X))[:, None] * H0[idx][None, :])


def _time_sorted_batches(n, batch_size, y, rng):
    perm = rng.permutation(n)
    if batch_size is None or batch_size >= n:
        return [perm]
    out = []
    for start in range(0, n, batch_size):
        b = perm[start:start + batch_size]
        out.append(b[np.argsort(y[b], kind="stable")])
    return out


def _train(X, y, d, tr, va, hidden, dropout, kappa, lr, epochs, batch_size, patience, rng):
    params = init_params(X.shape[1], hidden, rng, dropout, kappa)
    opt = _Adam(params, lr)
    best = params.copy()
    best_val = np.inf
    rs_va = RiskSetIndex(y[va], d[va]) if len(va) else None
    stale = 0
    epoch = 0
    for epoch in range(1, epochs + 1):
        for b in _time_sorted_batches(len(tr), batch_size, y[tr], rng):
            idx = tr[b]
            if d[idx].sum() == 0:
                continue
            masks = None
            if dropout > 0:
                masks = [(rng.random((len(idx), k)) >= dropout) / (1.0 - dropout)
                         for k in hidden]
            loss, dW, db = loss_and_grad(params, X[idx], y[idx], d[idx], masks)
            if not np.isfinite(loss):
                return None, epoch
            opt.step(params, dW + db)
        if rs_va is None:
            continue
        val, _ = neg_partial_loglik(forward(params, X[va])[0], rs_va)
        if not np.isfinite(val):
            return None, epoch
        if val < best_val - 1e-8:
            best_val, best, stale = val, params.copy(), 0
        else:
            stale += 1
            if stale >= patience:
                break
    if rs_va is None:
        best = params
    if not np.all(np.isfinite(best.flat())):
        return None, epoch
    return best, epoch


def fit_deepsurv(X, y, delta, hidden=(32, 32), dropout: float = 0.2, kappa: float = 1e-4,
                 lr: float = 1e-3, epochs: int = 500, batch_size: int | None = 64,
                 val_fraction: float = 0.2, patience: int = 20, max_restarts: int = 3,
                 seed: int = 0) -> DeepSurvModel:
    """Train the network; ``batch_size=None`` uses full-batch steps."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    d = np.asarray(delta, dtype=float)
    if len(np.unique(y[d == 1])) < 2:
        raise ValueError("DeepSurv needs at least 2 distinct event times")
    if not 0.0 <= dropout < 1.0:
        raise ValueError("dropout must lie in [0, 1)")
    hidden = tuple(int(k) for k in hidden)
    n, p = X.shape
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    scale = np.where(sd > 0, sd, 1.0)
    Xs = (X - mean) / scale
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    n_val = int(round(val_fraction * n)) if val_fraction > 0 else 0
    va, tr = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    params = None
    restarts = 0
    for restarts in range(max_restarts + 1):
        params, epochs_run = _train(Xs, y, d, tr, va, hidden, dropout, kappa, lr, epochs,
                                    batch_size, patience, rng)
        if params is not None:
            break
        warnings.warn("non-finite DeepSurv loss; halving the step size and restarting",
                      RuntimeWarning, stacklevel=2)
        lr *= 0.5
    if params is None:
        raise RuntimeError("DeepSurv training diverged after all restarts")
    h = forward(params, Xs)[0]
    times, jumps = breslow_baseline(y, d, h)
    return DeepSurvModel(params, mean, scale, times, jumps, p, epochs_run, restarts)
