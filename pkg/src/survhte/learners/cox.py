"""Cox proportional hazards by Newton-Raphson on the Breslow partial likelihood."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from ..survcore import TimeGrid, na_jumps, step_eval
from .base import FittedModel, Method, cumhaz_to_survival


class RiskSetIndex:
    """Sorted-order bookkeeping for risk-set sums with tied times.

    For every subject (in ascending time order) ``start`` is the position of
    the first subject sharing its time, so reverse cumulative sums read at
    ``start`` give sums over the full risk set ``{j : y_j >= y_i}``.
    """

    def __init__(self, y, delta):
        self.order = np.argsort(y, kind="mergesort")
        ys = np.asarray(y, dtype=float)[self.order]
        _, first, counts = np.unique(ys, return_index=True, return_counts=True)
        self.start = np.repeat(first, counts)
        self.end = np.repeat(first + counts - 1, counts)
        self.delta = np.asarray(delta, dtype=float)[self.order]

    def rev_cumsum(self, a):
        return np.cumsum(a[::-1], axis=0)[::-1][self.start]


def cox_partial_loglik(beta, X, rs: RiskSetIndex, penalty=None, derivatives=True):
    """Breslow log partial likelihood, optionally minus ``0.5 beta' P beta``."""
    Xs = X[rs.order]
    eta = Xs @ beta
    shift = eta.max()
    w = np.exp(eta - shift)
    S0 = rs.rev_cumsum(w)
    d = rs.delta
    ll = float(np.sum(d * (eta - shift - np.log(S0))))
    if penalty is not None:
        ll -= 0.5 * float(beta @ penalty @ beta)
    if not derivatives:
        return ll
    S1 = rs.rev_cumsum(w[:, None] * Xs)
    xbar = S1 / S0[:, None]
    grad = (d[:, None] * (Xs - xbar)).sum(axis=0)
    # sum_i d_i S2(t_i)/S0(t_i) == X' diag(w_j * A_j) X, A_j = sum_{t_i <= y_j} d_i/S0_i
    A = np.cumsum(d / S0)[rs.end]
    info = (Xs * (w * A)[:, None]).T @ Xs - (xbar * d[:, None]).T @ xbar
    H = -info
    if penalty is not None:
        grad -= penalty @ beta
        H -= penalty
    return ll, grad, H


def newton_cox(X, rs: RiskSetIndex, penalty=None, tol=1e-9, max_iter=100, beta0=None,
               trace=None):
    p = X.shape[1]
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=float).copy()
    ll, grad, H = cox_partial_loglik(beta, X, rs, penalty)
    if trace is not None:
        trace.append(ll)
    converged = False
    for _ in range(max_iter):
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        t = 1.0
        while t > 1e-12:
            cand = beta + t * step
            ll_new = cox_partial_loglik(cand, X, rs, penalty, derivatives=False)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            t *= 0.5
        if t <= 1e-12:
            break
        beta = cand
        ll, grad, H = cox_partial_loglik(beta, X, rs, penalty)
        if trace is not None:
            trace.append(ll)
    else:
        converged = np.max(np.abs(grad)) < tol
    if np.max(np.abs(grad)) < tol:
        converged = True
    return beta, converged, grad


def breslow_baseline(y, delta, risk_score):
    """Baseline cumulative hazard jumps at distinct event times."""
    return na_jumps(np.asarray(y, dtype=float), np.asarray(delta),
                    np.exp(np.asarray(risk_score, dtype=float)))


@dataclass
class CoxModel(FittedModel):
    beta: np.ndarray
    event_times: np.ndarray
    hazard_jumps: np.ndarray
    p: int
    center: np.ndarray
    method: Method = Method.COX_PH

    def risk_score(self, X) -> np.ndarray:
        return (self._check_X(X) - self.center) @ self.beta

    def baseline_cumhaz(self, times) -> np.ndarray:
        knots = np.concatenate([[0.0], self.event_times])
        vals = np.concatenate([[0.0], np.cumsum(self.hazard_jumps)])
        return step_eval(knots, vals, times)

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        H0 = self.baseline_cumhaz(grid.times)
        return cumhaz_to_survival(np.exp(self.risk_score(X))[:, None] * H0[None, :])


def fit_coxph(X, y, delta, beta=None, ridge: float = 0.0, tol: float = 1e-9,
              max_iter: int = 100) -> CoxModel:
    """Fit a Cox model; pass ``beta`` to fix coefficients (no optimisation)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta)
    ev = delta == 1
    if len(np.unique(y[ev])) < 2:
        raise ValueError("Cox fit needs at least 2 distinct event times")
    n, p = X.shape
    center = X.mean(axis=0)
    Xc = X - center
    if beta is None:
        rs = RiskSetIndex(y, delta)
        penalty = ridge * np.eye(p) if ridge > 0 else None
        beta, _, grad = newton_cox(Xc, rs, penalty, tol=tol, max_iter=max_iter)
        if np.max(np.abs(grad)) > 1e-6 or np.max(np.abs(beta)) > 20:
            warnings.warn("monotone partial likelihood; refitting with ridge stabilisation",
                          RuntimeWarning, stacklevel=2)
            beta, _, _ = newton_cox(Xc, rs, 1e-2 * np.eye(p), tol=tol, max_iter=max_iter)
    beta = np.asarray(beta, dtype=float)
    times, jumps = breslow_baseline(y, delta, Xc @ beta)
    return CoxModel(beta, times, jumps, p, center)
