"""Benchmark performance measures.

Per-subclass estimators take lists with one entry per replication: estimates,
truths and a :class:`SubclassIndex` built from that replication's propensity
scores. Within-subclass means are formed first, then averaged over
replications.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

UNDEFINED_DENOMINATOR = 1e-8


@dataclass(frozen=True)
class SubclassIndex:
    K: int
    ids: np.ndarray        # 0-based subclass id per subject

    def sizes(self) -> np.ndarray:
        return np.bincount(self.ids, minlength=self.K)


@dataclass
class MetricsTable:
    scenario: str
    method: str
    pehe: np.ndarray                     # one value per successful replication
    relbias: np.ndarray
    rmse: np.ndarray
    regret: np.ndarray
    coverage: np.ndarray
    n_failed: int = 0
    pct_increase: np.ndarray = field(default_factory=lambda: np.empty(0))
    capped_rate: float = float("nan")

    @property
    def pehe_mean(self) -> float:
        return float(np.mean(self.pehe)) if len(self.pehe) else float("nan")

    @property
    def pehe_sd(self) -> float:
        return float(np.std(self.pehe, ddof=1)) if len(self.pehe) > 1 else float("nan")

    def long_rows(self):
        """Rows ``(scenario, method, metric, k, value)`` with 1-based ``k``."""
        rows = [(self.scenario, self.method, "PEHE", "", self.pehe_mean)]
        for name, vals in (("RelBias", self.relbias), ("RMSE", self.rmse),
                           ("Regret", self.regret), ("Coverage", self.coverage)):
            rows.extend((self.scenario, self.method, name, k + 1, float(v))
                        for k, v in enumerate(vals))
        return rows


def pehe(est, truth) -> float:
    est = np.asarray(est, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if est.size == 0:
        raise ValueError("empty input")
    if est.shape != truth.shape:
        raise ValueError("estimate and truth lengths differ")
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def subclass_assign(e_true, K: int) -> SubclassIndex:
    """Rank-based K-quantile partition; ties keep subject order."""
    e = np.asarray(e_true, dtype=float)
    n = len(e)
    if not 1 <= K <= n:
        raise ValueError("need 1 <= K <= n")
    ranks = np.empty(n, dtype=np.int64)
    ranks[np.argsort(e, kind="stable")] = np.arange(n)
    return SubclassIndex(K, (ranks * K) // n)


def _subclass_means(values, index: SubclassIndex) -> np.ndarray:
    sizes = index.sizes()
    sums = np.bincount(index.ids, weights=values, minlength=index.K)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(sizes > 0, sums / np.maximum(sizes, 1), np.nan)


def _as_reps(x):
    if isinstance(x, np.ndarray) and x.ndim == 1:
        return [x]
    return [np.asarray(v, dtype=float) for v in x]


def _as_index_reps(index):
    return [index] if isinstance(index, SubclassIndex) else list(index)


def relbias_by_subclass(est, truth, index) -> np.ndarray:
    """Ratio of replication-averaged subclass mean error to mean truth.

    Entries whose denominator is below 1e-8 in magnitude are NaN (undefined).
    """
    est, truth, index = _as_reps(est), _as_reps(truth), _as_index_reps(index)
    num = np.nanmean([_subclass_means(e - t, g) for e, t, g in zip(est, truth, index)], axis=0)
    den = np.nanmean([_subclass_means(t, g) for t, g in zip(truth, index)], axis=0)
    out = np.full_like(num, np.nan)
    ok = np.abs(den) >= UNDEFINED_DENOMINATOR
    out[ok] = num[ok] / den[ok]
    return out


def rmse_by_subclass(est, truth, index) -> np.ndarray:
    est, truth, index = _as_reps(est), _as_reps(truth), _as_index_reps(index)
    mse = np.nanmean([_subclass_means((e - t) ** 2, g) for e, t, g in zip(est, truth, index)],
                     axis=0)
    return np.sqrt(mse)


def regret_by_subclass(est, truth, index) -> np.ndarray:
    """Average forgone benefit ``1[sign rule wrong] * |truth|`` per subclass."""
    est, truth, index = _as_reps(est), _as_reps(truth), _as_index_reps(index)
    per_rep = []
    for e, t, g in zip(est, truth, index):
        wrong = (e > 0) != (t > 0)
        per_rep.append(_subclass_means(wrong * np.abs(t), g))
    return np.nanmean(per_rep, axis=0)


def coverage_by_subclass(lower, upper, truth, index) -> np.ndarray:
    """Containment fraction per subclass, pooling subjects over replications."""
    lower, upper = _as_reps(lower), _as_reps(upper)
    truth, index = _as_reps(truth), _as_index_reps(index)
    K = index[0].K
    hits = np.zeros(K)
    counts = np.zeros(K)
    for lo, hi, t, g in zip(lower, upper, truth, index):
        inside = (lo <= t) & (t <= hi)
        hits += np.bincount(g.ids, weights=inside, minlength=K)
        counts += np.bincount(g.ids, minlength=K)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(counts > 0, hits / np.maximum(counts, 1), np.nan)


def pct_increase_pehe(pehe_matrix) -> np.ndarray:
    """Percent increase over the best method, row-wise; shape (B, methods)."""
    P = np.atleast_2d(np.asarray(pehe_matrix, dtype=float))
    if P.shape[1] < 2:
        raise ValueError("need at least two methods per replication")
    best = np.nanmin(P, axis=1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = (P / best - 1.0) * 100.0
    out[P == best] = 0.0
    return out
