"""Propensity score estimation by a cross-validated stacked ensemble.

Members are a ridge logistic regression (IRLS), gradient-boosted trees and a
random-forest classifier. Stacking weights minimize the out-of-fold log loss
of the convex combination over the probability simplex.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit
from sklearn.ensemble import GradientBoostingClassifier, RandomForestClassifier

CLIP = 1e-6


def _check_xz(X, z):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z)
    if X.shape[0] != len(z):
        raise ValueError("X and z lengths differ")
    if not np.all((z == 0) | (z == 1)):
        raise ValueError("treatment must be binary 0/1")
    if len(np.unique(z)) < 2:
        raise ValueError("both treatment classes must be present")
    return X, z.astype(float)


def log_loss(z, p) -> float:
    p = np.clip(p, CLIP, 1 - CLIP)
    return float(-np.mean(z * np.log(p) + (1 - z) * np.log(1 - p)))


# ---------------------------------------------------------------- members

@dataclass
class LogisticMember:
    coef: np.ndarray          # intercept first
    n_iter: int
    name: str = "logistic"

    @property
    def p(self) -> int:
        return len(self.coef) - 1

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return expit(self.coef[0] + X @ self.coef[1:])


def _irls(X, z, ridge, tol, max_iter):
    n, p = X.shape
    Z = np.column_stack([np.ones(n), X])
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0
    beta = np.zeros(p + 1)

    def objective(b):
        eta = Z @ b
        return float(np.mean(z * eta - np.logaddexp(0.0, eta)) - 0.5 * np.sum(pen * b * b))

    obj = objective(beta)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        mu = expit(Z @ beta)
        w = np.maximum(mu * (1 - mu), 1e-12)
        grad = Z.T @ (z - mu) / n - pen * beta
        H = (Z * w[:, None]).T @ Z / n + np.diag(pen)
        step = np.linalg.solve(H + 1e-12 * np.eye(p + 1), grad)
        t = 1.0
        while True:
            cand = beta + t * step
            new = objective(cand)
            if new >= obj - 1e-15 or t < 1e-10:
                break
            t *= 0.5
        beta = cand
        rel = abs(new - obj) / max(abs(obj), 1e-12)
        obj = new
        if rel < tol:
            converged = True
            break
    return beta, converged, it


def fit_logistic(X, z, ridge: float = 1e-6, tol: float = 1e-8,
                 max_iter: int = 100) -> LogisticMember:
    """Ridge logistic regression by IRLS (intercept unpenalized).

    The penalty is applied to the mean log-likelihood, so duplicating every
    row leaves the fit unchanged.
    """
    X, z = _check_xz(X, z)
    beta, converged, it = _irls(X, z, ridge, tol, max_iter)
    eta = beta[0] + X @ beta[1:]
    separated = np.all((eta > 0) == (z == 1)) and np.min(np.abs(eta)) > 5.0
    if separated or not converged or np.max(np.abs(beta)) > 30:
        warnings.warn("logistic fit separated or unstable; refitting with ridge 1e-2",
                      RuntimeWarning, stacklevel=2)
        beta, _, it = _irls(X, z, 1e-2, tol, max_iter)
    return LogisticMember(beta, it)


@dataclass
class SklearnMember:
    model: object
    p: int
    name: str

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return self.model.predict_proba(X)[:, 1]


def fit_gbt(X, z, seed: int = 0, n_estimators: int = 200, max_depth: int = 3,
            learning_rate: float = 0.1) -> SklearnMember:
    X, z = _check_xz(X, z)
    model = GradientBoostingClassifier(n_estimators=n_estimators, max_depth=max_depth,
                                       learning_rate=learning_rate, random_state=seed)
    model.fit(X, z.astype(int))
    return SklearnMember(model, X.shape[1], "gbt")


def fit_rf_classifier(X, z, seed: int = 0, n_estimators: int = 200) -> SklearnMember:
    X, z = _check_xz(X, z)
    mtry = max(1, math.ceil(math.sqrt(X.shape[1])))
    model = RandomForestClassifier(n_estimators=n_estimators, max_features=mtry,
                                   random_state=seed)
    model.fit(X, z.astype(int))
    return SklearnMember(model, X.shape[1], "rf")


DEFAULT_LIBRARY = {
    "logistic": lambda X, z, seed: fit_logistic(X, z),
    "gbt": lambda X, z, seed: fit_gbt(X, z, seed=seed),
    "rf": lambda X, z, seed: fit_rf_classifier(X, z, seed=seed),
}


# ---------------------------------------------------------------- stacking

def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    k = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / k > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


def simplex_weights(P, z, n_iter: int = 500) -> np.ndarray:
    """Minimize the log loss of ``P @ w`` over the simplex.

    Projected gradient from equal weights with backtracking step halving; the
    result is compared with every vertex so it never loses to a single member.
    """
    P = np.clip(np.asarray(P, dtype=float), CLIP, 1 - CLIP)
    M = P.shape[1]
    w = np.full(M, 1.0 / M)
    loss = log_loss(z, P @ w)
    step = 1.0
    for _ in range(n_iter):
        q = np.clip(P @ w, CLIP, 1 - CLIP)
        grad = -(P.T @ (z / q - (1 - z) / (1 - q))) / len(z)
        while step > 1e-12:
            cand = project_simplex(w - step * grad)
            new = log_loss(z, P @ cand)
            if new <= loss:
                break
            step *= 0.5
        if step <= 1e-12 or np.allclose(cand, w, atol=1e-15):
            break
        w, loss = cand, new
        step *= 2.0
    for m in range(M):
        vertex = np.eye(M)[m]
        if log_loss(z, P[:, m]) < loss:
            w, loss = vertex, log_loss(z, P[:, m])
    return w


def stratified_folds(z, V: int, rng) -> np.ndarray:
    folds = np.empty(len(z), dtype=np.int64)
    for cls in (0, 1):
        idx = np.flatnonzero(z == cls)
        if len(idx) < V:
            raise ValueError(f"class {cls} has fewer members than folds ({V})")
        folds[rng.permutation(idx)] = np.arange(len(idx)) % V
    return folds


@dataclass
class PropensityModel:
    members: list
    weights: np.ndarray
    folds: np.ndarray
    member_cv_loss: np.ndarray = field(default_factory=lambda: np.empty(0))
    cv_loss: float = float("nan")

    @property
    def p(self) -> int:
        return self.members[0].p

    @property
    def names(self) -> list:
        return [m.name for m in self.members]


def fit_stacked(X, z, folds: int = 10, seed: int = 0, library=None) -> PropensityModel:
    """Fit the stacked ensemble with ``folds``-fold out-of-fold stacking."""
    if folds < 2:
        raise ValueError("need at least 2 folds")
    X, z = _check_xz(X, z)
    library = DEFAULT_LIBRARY if library is None else library
    rng = np.random.default_rng(seed)
    fold = stratified_folds(z, folds, rng)
    # sklearn estimators only take 32-bit seeds
    member_seed = int(np.random.SeedSequence(seed).generate_state(1)[0])
    names = list(library)
    oof = np.empty((len(z), len(names)))
    for v in range(folds):
        tr, te = fold != v, fold == v
        for m, name in enumerate(names):
            member = library[name](X[tr], z[tr], member_seed)
            oof[te, m] = member.predict(X[te])
    weights = simplex_weights(oof, z)
    members = [library[name](X, z, member_seed) for name in names]
    for member, name in zip(members, names):
        member.name = name
    member_loss = np.array([log_loss(z, oof[:, m]) for m in range(len(names))])
    return PropensityModel(members, weights, fold, member_loss, log_loss(z, oof @ weights))


def predict_ps(model: PropensityModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.p:
        raise ValueError(f"expected {model.p} covariates, got {X.shape[1]}")
    P = np.column_stack([m.predict(X) for m in model.members])
    return np.clip(P @ model.weights, CLIP, 1 - CLIP)


# ---------------------------------------------------------------- overlap export

def overlap_histogram(ps, z, bins: int = 20):
    """Rows ``(bin_left, bin_right, count_treated, count_control)`` on [0, 1]."""
    ps = np.asarray(ps, dtype=float)
    z = np.asarray(z)
    edges = np.linspace(0.0, 1.0, bins + 1)
    treated, _ = np.histogram(ps[z == 1], bins=edges)
    control, _ = np.histogram(ps[z == 0], bins=edges)
    return [(float(edges[b]), float(edges[b + 1]), int(treated[b]), int(control[b]))
            for b in range(bins)]


def write_overlap_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count_treated", "count_control"])
        w.writerows(rows)
