"""Random survival forest with log-rank splitting and Nelson-Aalen leaves.

Trees are grown on bootstrap samples; at each node ``mtry`` covariates are
tried, each at ``nsplit`` randomly drawn thresholds (``nsplit=0`` searches all
observed values). Leaves keep their Nelson-Aalen hazard jumps indexed by the
forest's distinct training event times, so ensemble cumulative hazards are
accumulated per subject without materialising per-leaf curves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

from ..survcore import TimeGrid
from .base import FittedModel, Method, cumhaz_to_survival


@nb.njit(cache=True)
def _logrank(order_t, y, d, go_left, start, end):
    """|log-rank| statistic for a node; ``order_t`` holds node rows by time desc."""
    Y = 0.0
    Y1 = 0.0
    num = 0.0
    var = 0.0
    k = start
    while k < end:
        t = y[order_t[k]]
        dd = 0.0
        d1 = 0.0
        j = k
        while j < end and y[order_t[j]] == t:
            r = order_t[j]
            Y += 1.0
            if go_left[r]:
                Y1 += 1.0
                d1 += d[r]
            dd += d[r]
            j += 1
        if dd > 0 and Y > 1.0:
            frac = Y1 / Y
            num += d1 - frac * dd
            var += frac * (1.0 - frac) * (Y - dd) / (Y - 1.0) * dd
        k = j
    if var <= 0.0:
        return 0.0
    return abs(num) / math.sqrt(var)


@nb.njit(cache=True)
def _grow_forest(X, y, d, event_idx, ntree, mtry, nodesize, nsplit, max_depth,
                 bootstrap, seed):
    np.random.seed(seed)
    n, p = X.shape
    cap_nodes = ntree * (2 * n + 1)
    split_var = np.full(cap_nodes, -1, np.int64)
    split_thr = np.zeros(cap_nodes)
    left = np.full(cap_nodes, -1, np.int64)
    leaf_ptr = np.full(cap_nodes, -1, np.int64)      # into leaf_start
    tree_root = np.zeros(ntree, np.int64)
    cap_leaf = ntree * n + 1
    leaf_start = np.zeros(cap_leaf, np.int64)
    cap_jump = ntree * n + 1
    jump_idx = np.zeros(cap_jump, np.int64)
    jump_val = np.zeros(cap_jump)
    inbag = np.zeros((ntree, n), np.int32)

    n_nodes = 0
    n_leaves = 0
    n_jumps = 0
    rows = np.empty(n, np.int64)
    tmp = np.empty(n, np.int64)
    go_left = np.zeros(n, np.bool_)
    stack_node = np.empty(2 * n + 2, np.int64)
    stack_lo = np.empty(2 * n + 2, np.int64)
    stack_hi = np.empty(2 * n + 2, np.int64)
    stack_depth = np.empty(2 * n + 2, np.int64)
    vars_perm = np.arange(p)
    order_t = np.empty(n, np.int64)
    neg_y = -y

    for b in range(ntree):
        # bootstrap, redrawn when the sample holds no events
        for attempt in range(11):
            if bootstrap:
                for i in range(n):
                    rows[i] = np.random.randint(0, n)
            else:
                for i in range(n):
                    rows[i] = i
            ev = 0.0
            for i in range(n):
                ev += d[rows[i]]
            if ev > 0:
                break
        for i in range(n):
            inbag[b, rows[i]] += 1

        root = n_nodes
        n_nodes += 1
        tree_root[b] = root
        top = 0
        stack_node[0] = root
        stack_lo[0] = 0
        stack_hi[0] = n
        stack_depth[0] = 0
        top = 1
        while top > 0:
            top -= 1
            node = stack_node[top]
            lo = stack_lo[top]
            hi = stack_hi[top]
            depth = stack_depth[top]
            size = hi - lo
            n_ev = 0.0
            for k in range(lo, hi):
                n_ev += d[rows[k]]
            best_stat = 0.0
            best_var = -1
            best_thr = 0.0
            splittable = size >= 2 * nodesize and n_ev > 0
            if max_depth >= 0 and depth >= max_depth:
                splittable = False
            if splittable:
                # node rows ordered by decreasing time for the log-rank scan
                sub = np.empty(size, np.int64)
                for k in range(size):
                    sub[k] = rows[lo + k]
                srt = np.argsort(neg_y[sub], kind="mergesort")
                for k in range(size):
                    order_t[k] = sub[srt[k]]
                # partial Fisher-Yates to choose mtry covariates
                for k in range(p):
                    vars_perm[k] = k
                for k in range(min(mtry, p)):
                    j = k + np.random.randint(0, p - k)
                    tv = vars_perm[k]
                    vars_perm[k] = vars_perm[j]
                    vars_perm[j] = tv
                for kk in range(min(mtry, p)):
                    v = vars_perm[kk]
                    vmin = X[rows[lo], v]
                    vmax = vmin
                    for k in range(lo, hi):
                        xv = X[rows[k], v]
                        if xv < vmin:
                            vmin = xv
                        if xv > vmax:
                            vmax = xv
                    if vmax <= vmin:
                        continue
                    n_cand = nsplit if nsplit > 0 else size
                    for c in range(n_cand):
                        if nsplit > 0:
                            thr = X[rows[lo + np.random.randint(0, size)], v]
                        else:
                            thr = X[rows[lo + c], v]
                        if thr >= vmax:
                            continue
                        nl = 0
                        for k in range(lo, hi):
                            r = rows[k]
                            g = X[r, v] <= thr
                            go_left[r] = g
                            if g:
                                nl += 1
                        if nl < nodesize or size - nl < nodesize:
                            continue
                        stat = _logrank(order_t, y, d, go_left, 0, size)
                        if stat > best_stat:
                            best_stat = stat
                            best_var = v
                            best_thr = thr
            if best_var < 0:
                # leaf: Nelson-Aalen jumps over the in-bag rows of this node
                leaf_ptr[node] = n_leaves
                leaf_start[n_leaves] = n_jumps
                n_leaves += 1
                sub = np.empty(size, np.int64)
                for k in range(size):
                    sub[k] = rows[lo + k]
                srt = np.argsort(neg_y[sub], kind="mergesort")
                at_risk = 0.0
                k = 0
                first_jump = n_jumps
                while k < size:
                    t = y[sub[srt[k]]]
                    dd = 0.0
                    j = k
                    while j < size and y[sub[srt[j]]] == t:
                        at_risk += 1.0
                        dd += d[sub[srt[j]]]
                        j += 1
                    if dd > 0:
                        jump_idx[n_jumps] = event_idx[sub[srt[k]]]
                        jump_val[n_jumps] = dd / at_risk
                        n_jumps += 1
                    k = j
                # stored in decreasing time order; order is irrelevant for sums
                continue
            # partition rows[lo:hi] by the chosen split
            nl = 0
            nr = 0
            for k in range(lo, hi):
                r = rows[k]
                if X[r, best_var] <= best_thr:
                    rows[lo + nl] = r
                    nl += 1
                else:
                    tmp[nr] = r
                    nr += 1
            for k in range(nr):
                rows[lo + nl + k] = tmp[k]
            split_var[node] = best_var
            split_thr[node] = best_thr
            lc = n_nodes
            left[node] = lc
            n_nodes += 2
            stack_node[top] = lc
            stack_lo[top] = lo
            stack_hi[top] = lo + nl
            stack_depth[top] = depth + 1
            top += 1
            stack_node[top] = lc + 1
            stack_lo[top] = lo + nl
            stack_hi[top] = hi
            stack_depth[top] = depth + 1
            top += 1
    leaf_start[n_leaves] = n_jumps
    return (split_var[:n_nodes].copy(), split_thr[:n_nodes].copy(), left[:n_nodes].copy(),
            leaf_ptr[:n_nodes].copy(), tree_root, leaf_start[:n_leaves + 1].copy(),
            jump_idx[:n_jumps].copy(), jump_val[:n_jumps].copy(), inbag)


@nb.njit(cache=True)
def _find_leaf(x, root, split_var, split_thr, left):
    node = root
    while split_var[node] >= 0:
        if x[split_var[node]] <= split_thr[node]:
            node = left[node]
        else:
            node = left[node] + 1
    return node


@nb.njit(cache=True)
def _accumulate_hazard(X, split_var, split_thr, left, leaf_ptr, tree_root, leaf_start,
                       jump_idx, jump_val, m, inbag, oob_only):
    n = X.shape[0]
    ntree = tree_root.shape[0]
    acc = np.zeros((n, m))
    counts = np.zeros(n)
    for b in range(ntree):
        root = tree_root[b]
        for i in range(n):
            if oob_only and inbag[b, i] > 0:
                continue
            node = _find_leaf(X[i], root, split_var, split_thr, left)
            lf = leaf_ptr[node]
            for k in range(leaf_start[lf], leaf_start[lf + 1]):
                acc[i, jump_idx[k]] += jump_val[k]
            counts[i] += 1.0
    return acc, counts


@dataclass
class RandomSurvivalForest(FittedModel):
    event_times: np.ndarray
    split_var: np.ndarray
    split_thr: np.ndarray
    left: np.ndarray
    leaf_ptr: np.ndarray
    tree_root: np.ndarray
    leaf_start: np.ndarray
    jump_idx: np.ndarray
    jump_val: np.ndarray
    inbag: np.ndarray
    X_train: np.ndarray
    p: int
    method: Method = Method.RSF

    @property
    def ntree(self) -> int:
        return len(self.tree_root)

    def root_splits(self) -> np.ndarray:
        """Split covariate at each tree's root (-1 for a root leaf)."""
        return self.split_var[self.tree_root]

    def _hazard_on_grid(self, acc, counts, grid):
        H = np.cumsum(acc, axis=1) / np.maximum(counts, 1.0)[:, None]
        idx = np.searchsorted(self.event_times, grid.times, side="right") - 1
        out = np.where(idx[None, :] >= 0, H[:, np.maximum(idx, 0)], 0.0)
        return out

    def predict_cumhaz(self, X, grid: TimeGrid) -> np.ndarray:
        X = self._check_X(X)
        acc, counts = _accumulate_hazard(X, self.split_var, self.split_thr, self.left,
                                         self.leaf_ptr, self.tree_root, self.leaf_start,
                                         self.jump_idx, self.jump_val, len(self.event_times),
                                         self.inbag, False)
        return self._hazard_on_grid(acc, counts, grid)

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        return cumhaz_to_survival(self.predict_cumhaz(X, grid))

    def predict_oob_survival(self, grid: TimeGrid) -> np.ndarray:
        """Out-of-bag curves for the training rows (training data only)."""
        acc, counts = _accumulate_hazard(self.X_train, self.split_var, self.split_thr,
                                         self.left, self.leaf_ptr, self.tree_root,
                                         self.leaf_start, self.jump_idx, self.jump_val,
                                         len(self.event_times), self.inbag, True)
        return cumhaz_to_survival(self._hazard_on_grid(acc, counts, grid))


def fit_rsf(X, y, delta, ntree: int = 1000, mtry: int | None = None, nodesize: int = 3,
            nsplit: int = 10, max_depth: int | None = None, bootstrap: bool = True,
            seed: int = 0) -> RandomSurvivalForest:
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    y = np.asarray(y, dtype=float)
    d = np.asarray(delta, dtype=float)
    n, p = X.shape
    if d.sum() < nodesize:
        raise ValueError("RSF needs at least nodesize events")
    if mtry is None:
        mtry = max(1, math.ceil(p / 3))
    event_times = np.unique(y[d == 1])
    event_idx = np.searchsorted(event_times, y).astype(np.int64)
    out = _grow_forest(X, y, d, event_idx, int(ntree), int(mtry), int(nodesize), int(nsplit),
                       -1 if max_depth is None else int(max_depth), bool(bootstrap),
                       int(seed) % (2 ** 32))
    return RandomSurvivalForest(event_times, *out, X_train=X, p=p)
