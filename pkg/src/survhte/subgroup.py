"""Second-stage exploration of estimated treatment effects.

Two tools: per-draw least squares of ISTE on covariates (coefficient
distributions over posterior draws or subsample replicates), and a
"fit-the-fit" regression tree grown on covariates added by forward stepwise
selection until R^2 stops improving.
"""
from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import qr

MIN_LEAF = 20


# ---------------------------------------------------------------- linear second stage

@dataclass
class RegressionSummary:
    names: list
    point: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    coef_draws: np.ndarray = field(repr=False, default=None)   # (D, k)
    dropped: list = field(default_factory=list)

    def rows(self):
        return [(n, float(p), float(lo), float(hi))
                for n, p, lo, hi in zip(self.names, self.point, self.lower, self.upper)]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["term", "estimate", "lower", "upper"])
            for name, p, lo, hi in self.rows():
                w.writerow([name, repr(p), repr(lo), repr(hi)])


def _independent_columns(Z, tol=1e-10):
    """Indices of a maximal linearly independent column subset (pivoted QR)."""
    _, R, piv = qr(Z, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(diag.max(initial=0.0), 1.0)))
    return np.sort(piv[:rank])


def second_stage_linear(draws, X, names=None, ridge: float = 1e-8,
                        level: float = 0.95) -> RegressionSummary:
    """OLS of every draw's ISTE vector on ``[1, X]``; intervals over draws."""
    Y = np.atleast_2d(np.asarray(draws, dtype=float))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    if Y.shape[1] != n:
        raise ValueError("draws must have one column per subject")
    if Y.shape[0] < 2:
        raise ValueError("need at least 2 draws")
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    Z = np.column_stack([np.ones(n), X])
    terms = ["(intercept)"] + names
    keep = _independent_columns(Z)
    if 0 not in keep:
        keep = np.concatenate([[0], keep[:-1]])
    dropped = [terms[j] for j in range(len(terms)) if j not in keep]
    if dropped:
        warnings.warn(f"dropping collinear columns: {', '.join(dropped)}", RuntimeWarning,
                      stacklevel=2)
    Z = Z[:, keep]
    if n <= Z.shape[1] or np.linalg.matrix_rank(Z) < Z.shape[1]:
        raise ValueError("design is rank deficient")
    A = Z.T @ Z + ridge * np.eye(Z.shape[1])
    coefs = np.linalg.solve(A, Z.T @ Y.T).T        # (D, k)
    a = (1.0 - level) / 2.0
    point = coefs.mean(axis=0)
    lo = np.minimum(np.quantile(coefs, a, axis=0), point)
    hi = np.maximum(np.quantile(coefs, 1.0 - a, axis=0), point)
    return RegressionSummary([terms[j] for j in keep], point, lo, hi, coefs, dropped)


# ---------------------------------------------------------------- regression tree

@dataclass
class CartNode:
    idx: np.ndarray
    mean: float
    var: int = -1              # original covariate index; -1 for a leaf
    threshold: float = np.nan
    left: "CartNode | None" = None
    right: "CartNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.var < 0

    @property
    def n(self) -> int:
        return len(self.idx)


@dataclass
class CartTree:
    root: CartNode
    r2: float
    selected: list                      # covariate indices in order of selection
    names: list
    path: list = field(default_factory=list)     # R^2 after each selection step

    def leaves(self) -> list:
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend([node.right, node.left])
        return out

    def apply(self, X) -> np.ndarray:
        """Leaf position (in :meth:`leaves` order) for each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        leaves = self.leaves()
        pos = {id(leaf): k for k, leaf in enumerate(leaves)}
        out = np.empty(len(X), dtype=np.int64)
        for i, x in enumerate(X):
            node = self.root
            while not node.is_leaf:
                node = node.left if x[node.var] <= node.threshold else node.right
            out[i] = pos[id(node)]
        return out

    def predict(self, X) -> np.ndarray:
        means = np.array([leaf.mean for leaf in self.leaves()])
        return means[self.apply(X)]

    def to_text(self, effects=None) -> str:
        lines = []
        eff = {} if effects is None else {e["leaf"]: e for e in effects}
        leaf_ids = {id(leaf): k for k, leaf in enumerate(self.leaves())}

        def walk(node, depth):
            pad = "  " * depth
            if node.is_leaf:
                k = leaf_ids[id(node)]
                extra = ""
                if k in eff:
                    e = eff[k]
                    extra = f" effect={e['mean']:.4g} [{e['lower']:.4g}, {e['upper']:.4g}]"
                lines.append(f"{pad}leaf {k}: n={node.n} mean={node.mean:.4g}{extra}")
                return
            name = self.names[node.var]
            lines.append(f"{pad}{name} <= {node.threshold:.6g}")
            walk(node.left, depth + 1)
            lines.append(f"{pad}{name} > {node.threshold:.6g}")
            walk(node.right, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines)

    def to_dict(self, effects=None) -> dict:
        eff = {} if effects is None else {e["leaf"]: e for e in effects}
        leaf_ids = {id(leaf): k for k, leaf in enumerate(self.leaves())}

        def conv(node):
            if node.is_leaf:
                k = leaf_ids[id(node)]
                d = {"leaf": k, "n": node.n, "mean": node.mean}
                if k in eff:
                    d.update(lower=eff[k]["lower"], upper=eff[k]["upper"],
                             effect=eff[k]["mean"])
                return d
            return {"split": self.names[node.var], "threshold": node.threshold,
                    "left": conv(node.left), "right": conv(node.right)}

        return {"r2": self.r2, "selected": [self.names[j] for j in self.selected],
                "path": self.path, "tree": conv(self.root)}

    def to_json(self, path, effects=None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(effects), fh, indent=2)


def _best_split(y, X, idx, columns, min_leaf):
    """Largest squared-error reduction over midpoints of the given columns."""
    yy = y[idx]
    n = len(idx)
    total = yy.sum()
    base = float(np.sum((yy - yy.mean()) ** 2))
    best = (0.0, -1, np.nan)
    if n < 2 * min_leaf:
        return best
    for j in columns:
        x = X[idx, j]
        order = np.argsort(x, kind="stable")
        xs, ys = x[order], yy[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        nl = np.arange(1, n)
        valid = (xs[1:] > xs[:-1]) & (nl >= min_leaf) & (n - nl >= min_leaf)
        if not valid.any():
            continue
        sl, ql = csum[:-1], csq[:-1]
        sr, qr_ = total - sl, csq[-1] - ql
        sse = (ql - sl * sl / nl) + (qr_ - sr * sr / (n - nl))
        gain = np.where(valid, base - sse, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best[0] + 1e-12:
            best = (float(gain[k]), int(j), 0.5 * (xs[k] + xs[k + 1]))
    return best


def fit_cart(target, X, min_improve: float = 0.01, columns=None, min_leaf: int = MIN_LEAF,
             names=None) -> CartTree:
    """Greedy variance-reduction tree on ``columns`` of ``X``.

    A split is kept only if it raises the overall R^2 by at least
    ``min_improve``; a single split can never add more than the whole
    variance, so ``min_improve >= 1`` always returns the root.
    """
    y = np.asarray(target, dtype=float)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, p = X.shape
    if n < 4:
        raise ValueError("need at least 4 subjects")
    columns = list(range(p)) if columns is None else list(columns)
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    sst = float(np.sum((y - y.mean()) ** 2))
    root = CartNode(np.arange(n), float(y.mean()))
    if sst <= 1e-12 * max(1.0, float(np.sum(y * y))) or min_improve >= 1.0:
        return CartTree(root, 0.0, [], names)
    sse = sst
    stack = [root]
    while stack:
        node = stack.pop()
        gain, j, thr = _best_split(y, X, node.idx, columns, min_leaf)
        if j < 0 or gain / sst < min_improve:
            continue
        go_left = X[node.idx, j] <= thr
        li, ri = node.idx[go_left], node.idx[~go_left]
        node.var, node.threshold = j, float(thr)
        node.left = CartNode(li, float(y[li].mean()))
        node.right = CartNode(ri, float(y[ri].mean()))
        sse -= gain
        stack.extend([node.right, node.left])
    return CartTree(root, max(0.0, 1.0 - sse / sst), [], names)


def fit_the_fit(iste_mean, X, names=None, min_improve: float = 0.01, mode: str = "relative",
                split_improve: float = 0.01, min_leaf: int = MIN_LEAF) -> CartTree:
    """Forward stepwise covariate selection for a CART fit of the ISTE.

    Each round adds the covariate whose tree (on the selected set plus that
    covariate) has the highest R^2, ties going to the lower index. Selection
    stops when the R^2 gain is below ``min_improve``, relative to the previous
    R^2 (``mode="relative"``) or in absolute terms (``mode="absolute"``).
    """
    if mode not in ("relative", "absolute"):
        raise ValueError("mode must be 'relative' or 'absolute'")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    p = X.shape[1]
    names = list(names) if names is not None else [f"x{j + 1}" for j in range(p)]
    selected: list = []
    path: list = []
    r2_prev = 0.0
    best_tree = fit_cart(iste_mean, X, 1.0, columns=[], min_leaf=min_leaf, names=names)
    while len(selected) < p:
        round_best = None
        for j in range(p):
            if j in selected:
                continue
            tree = fit_cart(iste_mean, X, split_improve, columns=selected + [j],
                            min_leaf=min_leaf, names=names)
            if round_best is None or tree.r2 > round_best[1].r2 + 1e-12:
                round_best = (j, tree)
        j, tree = round_best
        gain = tree.r2 - r2_prev
        if mode == "relative":
            gain /= max(r2_prev, 1e-8)
        if gain < min_improve:
            break
        selected.append(j)
        path.append(tree.r2)
        r2_prev = tree.r2
        best_tree = tree
    best_tree.selected = selected
    best_tree.path = path
    return best_tree


def node_effects(tree: CartTree, draws, level: float = 0.95) -> list:
    """Per-leaf subject-averaged effect for each draw, summarized by mean and
    equal-tailed interval."""
    D = np.atleast_2d(np.asarray(draws, dtype=float))
    a = (1.0 - level) / 2.0
    out = []
    for k, leaf in enumerate(tree.leaves()):
        per_draw = D[:, leaf.idx].mean(axis=1)
        out.append({"leaf": k, "n": leaf.n, "mean": float(per_draw.mean()),
                    "lower": float(np.quantile(per_draw, a)),
                    "upper": float(np.quantile(per_draw, 1.0 - a)),
                    "draws": per_draw})
    return out
