"""Individual survival treatment effects from two arm-specific learners.

For every subject the counterfactual median under each arm is read off the
predicted curves on a shared grid and contrasted. Bayesian learners give a
draw-by-draw contrast; frequentist learners get replicate contrasts by
refitting on subsamples.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .learners import FittedModel, LearnerSpec, Method, fit_learner
from .propensity import fit_stacked, predict_ps
from .survcore import Dataset, TimeGrid, default_grid

SUMMARIES = ("mean", "median")
INTERVALS = ("percentile", "normal")


def arm_seed(seed: int, arm: int) -> int:
    """Seed for the learner fit on ``arm`` derived from a master seed."""
    return int(np.random.SeedSequence([int(seed) % 2 ** 63, arm]).generate_state(1)[0])


@dataclass
class IsteResult:
    method: str
    grid: TimeGrid
    point: np.ndarray
    capped: np.ndarray                 # either arm's median hit the grid end
    draws: np.ndarray | None = None    # (D, n) posterior draws or (R, n) replicates
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    summary: str = "mean"
    interval: str = ""

    @property
    def n(self) -> int:
        return len(self.point)

    @property
    def capped_rate(self) -> float:
        return float(np.mean(self.capped))

    def rows(self):
        lo = self.lower if self.lower is not None else np.full(self.n, np.nan)
        hi = self.upper if self.upper is not None else np.full(self.n, np.nan)
        return [(i, float(self.point[i]), float(lo[i]), float(hi[i]), int(self.capped[i]))
                for i in range(self.n)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["subject", "point", "lower", "upper", "flag"])
            for row in self.rows():
                w.writerow([row[0], repr(row[1]), repr(row[2]), repr(row[3]), row[4]])


def equal_tailed(draws, level: float = 0.95):
    a = (1.0 - level) / 2.0
    return np.quantile(draws, a, axis=0), np.quantile(draws, 1.0 - a, axis=0)


def _containing(lo, hi, point):
    """Widen intervals where needed so they contain the point estimate."""
    return np.minimum(lo, point), np.maximum(hi, point)


def _default_fitter(spec: LearnerSpec):
    def fit(arm, X, y, delta, seed):
        return fit_learner(spec, X, y, delta, seed=seed)
    return fit


def _augment_with_ps(data: Dataset, seed: int):
    model = fit_stacked(data.X, data.z, seed=seed)
    return data.with_covariate(predict_ps(model, data.X), "ps_hat")


def _check_arms(data: Dataset):
    for arm in (0, 1):
        mask = data.z == arm
        if not mask.any():
            raise ValueError(f"arm {arm} is empty")
        if data.delta[mask].sum() == 0:
            raise ValueError(f"arm {arm} has no events")


def fit_arms(data: Dataset, spec: LearnerSpec, fitter=None, arm_seeds=None):
    """Fit ``M_0`` and ``M_1``; returns the models and the prediction matrix."""
    _check_arms(data)
    if spec.method.uses_ps:
        data = _augment_with_ps(data, spec.seed)
    fitter = _default_fitter(spec) if fitter is None else fitter
    seeds = arm_seeds or (arm_seed(spec.seed, 0), arm_seed(spec.seed, 1))
    models = []
    for arm in (0, 1):
        part = data.arm(arm)
        models.append(fitter(arm, part.X, part.y, part.delta, seeds[arm]))
    return models, data.X


def estimate_iste(data: Dataset, spec: LearnerSpec, grid: TimeGrid | None = None,
                  summary: str = "mean", fitter=None, arm_seeds=None,
                  X_pred=None, level: float = 0.95) -> IsteResult:
    """Median survival contrast for every subject of ``data``.

    ``fitter(arm, X, y, delta, seed)`` overrides learner construction (used to
    inject oracles); ``X_pred`` predicts for other subjects than the sample.
    Bayesian methods summarize per-draw contrasts by ``summary`` and attach
    equal-tailed ``level`` intervals.
    """
    if summary not in SUMMARIES:
        raise ValueError(f"summary must be one of {SUMMARIES}")
    grid = default_grid(data.y) if grid is None else grid
    models, X_aug = fit_arms(data, spec, fitter, arm_seeds)
    if X_pred is None:
        X_pred = X_aug
    elif spec.method.uses_ps:
        raise ValueError("X_pred is not supported with propensity augmentation")
    return contrast(models, X_pred, grid, spec.method, summary, level)


def contrast(models, X, grid: TimeGrid, method, summary: str = "mean",
             level: float = 0.95) -> IsteResult:
    m0, m1 = models
    name = str(getattr(method, "value", method))
    if hasattr(m0, "quantile_draws"):
        th0, c0 = m0.quantile_draws(X, grid)
        th1, c1 = m1.quantile_draws(X, grid)
        draws = th1 - th0
        point = draws.mean(axis=0) if summary == "mean" else np.median(draws, axis=0)
        capped = ((c0 | c1).mean(axis=0)) > 0.5
        lo, hi = _containing(*equal_tailed(draws, level), point)
        return IsteResult(name, grid, point, capped, draws, lo, hi, summary, "credible")
    th0, c0 = m0.predict_medians(X, grid)
    th1, c1 = m1.predict_medians(X, grid)
    return IsteResult(name, grid, th1 - th0, c0 | c1)


def iste_draws(result: IsteResult, level: float = 0.95):
    """Per-subject draw matrix and equal-tailed intervals of a Bayesian result."""
    if result.interval != "credible" or result.draws is None:
        raise ValueError("posterior draws are only available for Bayesian methods")
    lo, hi = _containing(*equal_tailed(result.draws, level), result.point)
    return result.draws, lo, hi


def iste_subsample(data: Dataset, spec: LearnerSpec, reps: int = 1000,
                   fraction: float = 0.2, seed: int = 0, grid: TimeGrid | None = None,
                   interval: str = "percentile", level: float = 0.95, fitter=None,
                   max_retries: int = 10) -> IsteResult:
    """Refit both arms on ``reps`` subsamples of size ``fraction * n`` drawn
    without replacement and predict for every original subject.

    Intervals are percentile (replicate quantiles) or normal (full-sample
    point plus or minus z times the replicate SD).
    """
    if spec.method.bayesian:
        raise ValueError("subsampling is for frequentist methods")
    if interval not in INTERVALS:
        raise ValueError(f"interval must be one of {INTERVALS}")
    if not 0.0 < fraction <= 1.0:
        raise ValueError("fraction must lie in (0, 1]")
    grid = default_grid(data.y) if grid is None else grid
    full = estimate_iste(data, spec, grid, fitter=fitter)
    m = max(2, int(round(fraction * data.n)))
    reps_out = np.empty((reps, data.n))
    for r in range(reps):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        for attempt in range(max_retries + 1):
            idx = np.sort(rng.choice(data.n, size=m, replace=False))
            sub = data.subset(idx)
            try:
                _check_arms(sub)
            except ValueError:
                if attempt == max_retries:
                    raise
                continue
            break
        rep_seed = int(rng.integers(2 ** 63))
        models, _ = fit_arms(sub, spec, fitter, (arm_seed(rep_seed, 0), arm_seed(rep_seed, 1)))
        reps_out[r] = contrast(models, data.X, grid, spec.method).point
    if interval == "percentile":
        lo, hi = equal_tailed(reps_out, level)
    else:
        from scipy.stats import norm
        half = norm.ppf(0.5 + level / 2.0) * reps_out.std(axis=0, ddof=1)
        lo, hi = full.point - half, full.point + half
    lo, hi = _containing(lo, hi, full.point)
    return IsteResult(full.method, grid, full.point, full.capped, reps_out, lo, hi,
                      "mean", interval)
