"""Parametric accelerated failure time models fit by censored maximum likelihood.

``log T = mu + x'beta + sigma W`` with W standard normal (lognormal AFT) or
standard minimum-extreme-value (Weibull AFT). Newton iterations run on
``(mu, beta, log sigma)`` with the analytic Hessian and step halving.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from ..survcore import TimeGrid
from .base import FittedModel, Method

LOG_2PI_HALF = 0.5 * np.log(2 * np.pi)


def _residual_terms(dist, w, delta):
    """Log-likelihood in w plus its first and second w-derivatives."""
    if dist == "weibull":
        ew = np.exp(np.minimum(w, 700.0))
        ll = delta * w - ew
        return ll, delta - ew, -ew
    # lognormal: density for events, upper tail for censored rows
    log_sf = log_ndtr(-w)
    mills = np.exp(-0.5 * w * w - LOG_2PI_HALF - log_sf)
    ll = np.where(delta == 1, -0.5 * w * w - LOG_2PI_HALF, log_sf)
    g = np.where(delta == 1, -w, -mills)
    h = np.where(delta == 1, -1.0, -mills * (mills - w))
    return ll, g, h


def aft_loglik(theta, Z, log_y, delta, dist, derivatives=True):
    """Log-likelihood (up to the -log y Jacobian) with gradient and Hessian.

    ``Z`` already carries the intercept column; ``theta = (coef, log sigma)``.
    """
    k = Z.shape[1]
    coef, s = theta[:k], theta[k]
    inv_sigma = np.exp(-s)
    w = (log_y - Z @ coef) * inv_sigma
    ll_w, g, h = _residual_terms(dist, w, delta)
    ll = float(np.sum(ll_w - delta * s))
    if not derivatives:
        return ll
    grad = np.empty(k + 1)
    grad[:k] = Z.T @ (-g * inv_sigma)
    grad[k] = np.sum(-g * w - delta)
    H = np.empty((k + 1, k + 1))
    H[:k, :k] = (Z * (h * inv_sigma ** 2)[:, None]).T @ Z
    cross = Z.T @ (inv_sigma * (h * w + g))
    H[:k, k] = H[k, :k] = cross
    H[k, k] = np.sum(h * w * w + g * w)
    return ll, grad, H


@dataclass
class ParametricAFT(FittedModel):
    dist: str
    mu: float
    beta: np.ndarray
    sigma: float
    p: int
    n_iter: int = 0

    @property
    def method(self):
        return Method.AFT_LOGNORMAL if self.dist == "lognormal" else Method.AFT_WEIBULL

    def linear_predictor(self, X) -> np.ndarray:
        return self.mu + self._check_X(X) @ self.beta

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        lp = self.linear_predictor(X)[:, None]
        t = grid.times[None, :]
        with np.errstate(divide="ignore"):
            w = (np.log(t) - lp) / self.sigma
        if self.dist == "lognormal":
            S = np.exp(log_ndtr(-w))
        else:
            S = np.exp(-np.exp(np.minimum(w, 700.0)))
        S[:, 0] = 1.0
        return S


def fit_aft_parametric(X, y, delta, dist: str = "weibull", tol: float = 1e-6,
                       max_iter: int = 200) -> ParametricAFT:
    if dist not in ("lognormal", "weibull"):
        raise ValueError(f"unknown AFT distribution {dist!r}")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    delta = np.asarray(delta, dtype=float)
    n, p = X.shape
    if delta.sum() < p + 2:
        raise ValueError("AFT fit needs at least p + 2 events")
    log_y = np.log(y)
    Z = np.column_stack([np.ones(n), X])
    coef0, *_ = np.linalg.lstsq(Z, log_y, rcond=None)
    resid_sd = np.std(log_y - Z @ coef0)
    theta = np.concatenate([coef0, [np.log(max(resid_sd, 1e-3))]])
    ll, grad, H = aft_loglik(theta, Z, log_y, delta, dist)
    for it in range(1, max_iter + 1):
        if np.max(np.abs(grad)) < tol:
            break
        try:
            step = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, -grad, rcond=None)[0]
        if grad @ step <= 0:
            # not an ascent direction: fall back to scaled gradient ascent
            step = grad / max(1.0, np.max(np.abs(np.diag(H))))
        t = 1.0
        while t > 1e-10:
            cand = theta + t * step
            ll_new = aft_loglik(cand, Z, log_y, delta, dist, derivatives=False)
            if np.isfinite(ll_new) and ll_new >= ll - 1e-12:
                break
            t *= 0.5
        theta = cand
        ll, grad, H = aft_loglik(theta, Z, log_y, delta, dist)
    else:
        if np.max(np.abs(grad)) >= tol:
            raise RuntimeError("AFT Newton iterations did not converge")
    return ParametricAFT(dist, float(theta[0]), theta[1:p + 1].copy(), float(np.exp(theta[-1])),
                         p, it)
