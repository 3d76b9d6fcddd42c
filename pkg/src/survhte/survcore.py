"""Survival data containers and the nonparametric primitives every learner uses.

Curves are stored on a :class:`TimeGrid` as right-continuous step functions.
Batched code paths work on plain ``(n, G)`` arrays of survival probabilities;
the dataclasses here are the validated single-curve views of the same thing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

DEFAULT_GRID_SIZE = 500
DEFAULT_GRID_QUANTILE = 0.99


@dataclass(frozen=True)
class ObservedRecord:
    x: np.ndarray
    z: int
    y: float
    delta: int

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("covariates must be a finite 1-d vector")
        if self.z not in (0, 1) or self.delta not in (0, 1):
            raise ValueError("z and delta must be 0 or 1")
        if not (np.isfinite(self.y) and self.y > 0):
            raise ValueError(f"observed time must be positive and finite, got {self.y}")
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class Dataset:
    """Column-oriented observed sample ``(X, z, y, delta)``."""

    X: np.ndarray
    z: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    covariate_names: tuple = field(default=())

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim != 2:
            raise ValueError("X must be 2-d")
        n, p = X.shape
        z = np.asarray(self.z).astype(np.int64)
        y = np.asarray(self.y, dtype=float)
        delta = np.asarray(self.delta).astype(np.int64)
        if not (len(z) == len(y) == len(delta) == n):
            raise ValueError("length mismatch between X, z, y and delta")
        if not np.all(np.isfinite(X)):
            raise ValueError("covariates contain missing or non-finite entries")
        if not np.all(np.isin(z, (0, 1))):
            raise ValueError("treatment must be binary 0/1")
        if not np.all(np.isin(delta, (0, 1))):
            raise ValueError("event indicator must be binary 0/1")
        if not np.all(np.isfinite(y) & (y > 0)):
            raise ValueError("observed times must be positive and finite")
        names = tuple(self.covariate_names) or tuple(f"x{j + 1}" for j in range(p))
        if len(names) != p:
            raise ValueError("covariate_names length does not match X")
        for attr, val in (("X", X), ("z", z), ("y", y), ("delta", delta)):
            val.setflags(write=False)
            object.__setattr__(self, attr, val)
        object.__setattr__(self, "covariate_names", names)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @classmethod
    def from_records(cls, records: Sequence[ObservedRecord], covariate_names=()):
        if not records:
            raise ValueError("empty sample")
        return cls(
            X=np.vstack([r.x for r in records]),
            z=np.array([r.z for r in records]),
            y=np.array([r.y for r in records]),
            delta=np.array([r.delta for r in records]),
            covariate_names=covariate_names,
        )

    def records(self) -> list[ObservedRecord]:
        return [ObservedRecord(self.X[i], int(self.z[i]), float(self.y[i]), int(self.delta[i]))
                for i in range(self.n)]

    def arm(self, z: int) -> "Dataset":
        mask = self.z == z
        return Dataset(self.X[mask], self.z[mask], self.y[mask], self.delta[mask],
                       self.covariate_names)

    def with_covariate(self, values, name: str) -> "Dataset":
        X = np.column_stack([self.X, np.asarray(values, dtype=float)])
        return Dataset(X, self.z, self.y, self.delta, self.covariate_names + (name,))

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.z[idx], self.y[idx], self.delta[idx],
                       self.covariate_names)


@dataclass(frozen=True)
class TimeGrid:
    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) == 0:
            raise ValueError("time grid must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(t)):
            raise ValueError("time grid entries must be finite")
        if t[0] != 0.0:
            raise ValueError("time grid must start at 0")
        if np.any(np.diff(t) <= 0):
            raise ValueError("time grid must be strictly increasing")
        t.setflags(write=False)
        object.__setattr__(self, "times", t)

    def __len__(self):
        return len(self.times)

    @property
    def step(self) -> float:
        """Largest spacing between consecutive grid points."""
        return float(np.max(np.diff(self.times))) if len(self.times) > 1 else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @classmethod
    def uniform(cls, horizon: float, size: int = DEFAULT_GRID_SIZE) -> "TimeGrid":
        if not horizon > 0:
            raise ValueError("grid horizon must be positive")
        return cls(np.linspace(0.0, horizon, size))


def default_grid(y, size: int = DEFAULT_GRID_SIZE, quantile: float = DEFAULT_GRID_QUANTILE) -> TimeGrid:
    """0 to the 99th percentile of observed times, equally spaced."""
    return TimeGrid.uniform(float(np.quantile(np.asarray(y, dtype=float), quantile)), size)


@dataclass(frozen=True)
class SurvivalCurve:
    grid: TimeGrid
    probs: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.probs, dtype=float)
        if s.shape != self.grid.times.shape:
            raise ValueError("probs must align with the grid")
        if abs(s[0] - 1.0) > 1e-12:
            raise ValueError("survival curve must equal 1 at t = 0")
        if np.any(s < -1e-12) or np.any(s > 1 + 1e-12):
            raise ValueError("survival probabilities must lie in [0, 1]")
        if np.any(np.diff(s) > 1e-12):
            raise ValueError("survival curve must be nonincreasing")
        s = np.clip(s, 0.0, 1.0)
        s.setflags(write=False)
        object.__setattr__(self, "probs", s)

    def __call__(self, t: float) -> float:
        return curve_eval(self, t)

    def quantile(self, q: float = 0.5) -> tuple[float, bool]:
        return curve_quantile(self, q)


@dataclass(frozen=True)
class CumulativeHazard:
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.times.shape:
            raise ValueError("values must align with the grid")
        if v[0] != 0.0 or np.any(v < 0) or np.any(np.diff(v) < 0):
            raise ValueError("cumulative hazard must start at 0 and be nondecreasing")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def __call__(self, t):
        return step_eval(self.grid.times, self.values, t)

    def to_survival(self) -> SurvivalCurve:
        return SurvivalCurve(self.grid, np.exp(-self.values))


def step_eval(knots, values, t):
    """Right-continuous step interpolation; constant beyond the last knot."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("evaluation time must be nonnegative")
    idx = np.searchsorted(knots, t, side="right") - 1
    return np.asarray(values)[np.maximum(idx, 0)]


def nelson_aalen(times, events, risk_weights=None) -> CumulativeHazard:
    """Nelson-Aalen cumulative hazard on ``[0, distinct event times]``.

    With ``risk_weights`` each subject contributes its weight to the risk set
    denominators while events are counted unweighted, which is the Breslow
    baseline estimator used by the Cox-type learners.
    """
    t = np.asarray(times, dtype=float)
    d = np.asarray(events)
    if t.size == 0:
        raise ValueError("empty sample")
    if t.shape != d.shape:
        raise ValueError("times and events must have the same length")
    if np.any(t <= 0):
        raise ValueError("times must be positive")
    w = np.ones_like(t) if risk_weights is None else np.asarray(risk_weights, dtype=float)
    if w.shape != t.shape or np.any(w <= 0):
        raise ValueError("risk weights must be positive and match times")
    if not np.any(d == 1):
        raise ValueError("no events")
    event_times, jumps = na_jumps(t, d, w)
    grid = TimeGrid(np.concatenate([[0.0], event_times]))
    return CumulativeHazard(grid, np.concatenate([[0.0], np.cumsum(jumps)]))


def na_jumps(t, d, w):
    """Distinct event times and the hazard jump ``d_l / R_l`` at each."""
    order = np.argsort(t, kind="mergesort")
    ts, ds, ws = t[order], d[order], w[order]
    at_risk = np.cumsum(ws[::-1])[::-1]
    uniq, first = np.unique(ts, return_index=True)
    counts = np.add.reduceat(ds, first)
    keep = counts > 0
    return uniq[keep], counts[keep] / at_risk[first][keep]


def curve_eval(curve: SurvivalCurve, t: float) -> float:
    if t < 0:
        raise ValueError("evaluation time must be nonnegative")
    return float(step_eval(curve.grid.times, curve.probs, t))


def curve_quantile(curve: SurvivalCurve, q: float = 0.5) -> tuple[float, bool]:
    """Largest grid time with ``1 - S(t) <= q``.

    Returns ``(time, capped)``; ``capped`` is set when the curve has not
    dropped past ``1 - q`` by the end of the grid, in which case the time is
    the final grid point.
    """
    vals, flags = grid_quantiles(curve.probs[None, :], curve.grid.times, q)
    return float(vals[0]), bool(flags[0])


def grid_quantiles(S, times, q: float = 0.5):
    """Vectorised :func:`curve_quantile` over the rows of ``S``."""
    if not 0.0 < q < 1.0:
        raise ValueError("q must lie in (0, 1)")
    S = np.atleast_2d(S)
    # rows are nonincreasing, so the admissible set is a prefix
    ok = (1.0 - S) <= q + 1e-12
    idx = ok.sum(axis=1) - 1
    return np.asarray(times)[np.maximum(idx, 0)], ok[:, -1]
