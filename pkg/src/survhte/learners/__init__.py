"""Single-arm survival learners and a spec-driven dispatcher."""
from __future__ import annotations

import inspect

import numpy as np

from .aft import ParametricAFT, fit_aft_parametric
from .bart import BartChain, fit_bart, fit_bart_core
from .base import FittedModel, LearnerSpec, Method, cumhaz_to_survival
from .cox import CoxModel, fit_coxph
from .deepsurv import DeepSurvModel, fit_deepsurv
from .gaph import GAPHModel, fit_gaph
from .rsf import RandomSurvivalForest, fit_rsf

__all__ = [
    "BartChain", "CoxModel", "DeepSurvModel", "FittedModel", "GAPHModel", "LearnerSpec",
    "Method", "ParametricAFT", "RandomSurvivalForest", "cumhaz_to_survival", "fit_aft_parametric",
    "fit_bart", "fit_bart_core", "fit_coxph", "fit_deepsurv", "fit_gaph", "fit_learner",
    "fit_rsf",
]

# hyperparameter aliases accepted in configs
_ALIASES = {"ntree": "n_trees"}


def _call(fn, params: dict, **fixed):
    accepted = set(inspect.signature(fn).parameters)
    unknown = sorted(set(params) - accepted)
    if unknown:
        raise ValueError(f"unknown hyperparameters for {fn.__name__}: {', '.join(unknown)}")
    return fn(**{**params, **fixed})


def fit_learner(spec: LearnerSpec, X, y, delta, seed: int | None = None) -> FittedModel:
    """Fit the learner named by ``spec`` to one arm's data."""
    seed = spec.seed if seed is None else int(seed)
    params = dict(spec.params)
    m = spec.method
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if m in (Method.AFT_LOGNORMAL, Method.AFT_WEIBULL):
        dist = "lognormal" if m is Method.AFT_LOGNORMAL else "weibull"
        return _call(fit_aft_parametric, params, X=X, y=y, delta=delta, dist=dist)
    if m is Method.COX_PH:
        return _call(fit_coxph, params, X=X, y=y, delta=delta)
    if m is Method.GAPH:
        return _call(fit_gaph, params, X=X, y=y, delta=delta, seed=seed)
    if m is Method.RSF:
        if "n_trees" in params:
            params["ntree"] = params.pop("n_trees")
        return _call(fit_rsf, params, X=X, y=y, delta=delta, seed=seed)
    if m.bayesian:
        params = {_ALIASES.get(k, k): v for k, v in params.items()}
        residual = "gaussian" if m is Method.AFT_BART_SP else "cdp"
        y = np.asarray(y, dtype=float)
        if np.any(y <= 0):
            raise ValueError("times must be positive")
        return _call(fit_bart_core, params, log_times=np.log(y), delta=delta, X=X,
                     residual=residual, seed=seed, method=m)
    if m is Method.DEEPSURV:
        if "hidden" in params and isinstance(params["hidden"], (int, np.integer)):
            params["hidden"] = (int(params["hidden"]),) * 2
        return _call(fit_deepsurv, params, X=X, y=y, delta=delta, seed=seed)
    raise ValueError(f"unsupported method {m}")
