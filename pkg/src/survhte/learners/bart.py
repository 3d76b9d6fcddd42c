"""Accelerated failure time BART with Gaussian or centered DP-mixture residuals.

``log T = f(x) + eps`` where ``f`` is a sum of regression trees. With
``residual="gaussian"`` eps ~ N(0, sigma^2) (semiparametric variant); with
``residual="cdp"`` eps follows a location mixture ``sum_l pi_l N(tau_l, sigma^2)``
under a truncated stick-breaking prior, recentered so that ``sum_l pi_l tau_l = 0``
after every sweep (nonparametric variant). Censored log-times are imputed
from the truncated normal each sweep.

Trees are stored in heap layout while sampling (children of node k at 2k+1
and 2k+2) and covariates are pre-binned onto at most ``n_cuts`` cutpoints.
Retained draws are compacted into flat node arrays for prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np
from scipy.stats import chi2

from ..survcore import TimeGrid
from .aft import fit_aft_parametric
from .base import FittedModel, Method

SQRT2 = math.sqrt(2.0)
TAIL_SWITCH = 6.0


# ---------------------------------------------------------------- normal helpers

@nb.njit(cache=True)
def norm_cdf(x):
    return 0.5 * math.erfc(-x / SQRT2)


@nb.njit(cache=True)
def norm_ppf(p):
    """Acklam's rational approximation polished by one Halley step."""
    if p <= 0.0:
        return -np.inf
    if p >= 1.0:
        return np.inf
    a1, a2, a3 = -3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02
    a4, a5, a6 = 1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00
    b1, b2, b3 = -5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02
    b4, b5 = 6.680131188771972e+01, -1.328068155288572e+01
    c1, c2, c3 = -7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00
    c4, c5, c6 = -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00
    d1, d2, d3, d4 = 7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00, \
        3.754408661907416e+00
    plow = 0.02425
    if p < plow:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / \
            ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    elif p <= 1.0 - plow:
        q = p - 0.5
        r = q * q
        x = (((((a1 * r + a2) * r + a3) * r + a4) * r + a5) * r + a6) * q / \
            (((((b1 * r + b2) * r + b3) * r + b4) * r + b5) * r + 1.0)
    else:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -(((((c1 * q + c2) * q + c3) * q + c4) * q + c5) * q + c6) / \
            ((((d1 * q + d2) * q + d3) * q + d4) * q + 1.0)
    e = norm_cdf(x) - p
    u = e * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@nb.njit(cache=True)
def rtnorm_above(a):
    """Standard normal draw conditioned on exceeding ``a``."""
    if a > TAIL_SWITCH:
        # exponential-proposal rejection sampler, stable far in the tail
        lam = 0.5 * (a + math.sqrt(a * a + 4.0))
        while True:
            z = a + np.random.exponential(1.0 / lam)
            if np.random.random() <= math.exp(-0.5 * (z - lam) ** 2):
                return z
    # inverse CDF on the upper tail: z = -Phi^{-1}(U * Phi(-a))
    tail = norm_cdf(-a)
    u = np.random.random() * tail
    if u <= 0.0:
        u = 1e-300
    z = -norm_ppf(u)
    return z if z > a else a


# ---------------------------------------------------------------- sampler

@nb.njit(cache=True)
def _depth(k):
    d = 0
    while k > 0:
        k = (k - 1) // 2
        d += 1
    return d


@nb.njit(cache=True)
def _split_ranges(k, var_j, cut_j, ncut, lo, hi):
    """Admissible cut-index range per covariate for heap node ``k``."""
    for v in range(ncut.shape[0]):
        lo[v] = 0
        hi[v] = ncut[v] - 1
    child = k
    while child > 0:
        parent = (child - 1) // 2
        v = var_j[parent]
        c = cut_j[parent]
        if child == 2 * parent + 1:
            if c - 1 < hi[v]:
                hi[v] = c - 1
        else:
            if c + 1 > lo[v]:
                lo[v] = c + 1
        child = parent


@nb.njit(cache=True)
def _pick_rule(k, var_j, cut_j, ncut, lo, hi):
    _split_ranges(k, var_j, cut_j, ncut, lo, hi)
    n_ok = 0
    for v in range(ncut.shape[0]):
        if lo[v] <= hi[v]:
            n_ok += 1
    if n_ok == 0:
        return -1, -1
    pick = np.random.randint(0, n_ok)
    for v in range(ncut.shape[0]):
        if lo[v] <= hi[v]:
            if pick == 0:
                return v, lo[v] + np.random.randint(0, hi[v] - lo[v] + 1)
            pick -= 1
    return -1, -1


@nb.njit(cache=True)
def _log_marg(cnt, s, sig2, tau2):
    denom = sig2 + cnt * tau2
    return 0.5 * math.log(sig2 / denom) + tau2 * s * s / (2.0 * sig2 * denom)


@nb.njit(cache=True)
def _update_tree(j, r, Xb, ncut, status, var, cut, mu, leaf_of, maxnode, sig2, tau2,
                 alpha, beta, M, lo, hi, leaves, nogs, cnt, sm):
    n = r.shape[0]
    st = status[j]
    var_j = var[j]
    cut_j = cut[j]
    lf = leaf_of[j]
    n_leaves = 0
    n_nogs = 0
    for k in range(maxnode[j] + 1):
        if st[k] == 1:
            leaves[n_leaves] = k
            n_leaves += 1
        elif st[k] == 2 and st[2 * k + 1] == 1 and st[2 * k + 2] == 1:
            nogs[n_nogs] = k
            n_nogs += 1
    u = np.random.random()
    if n_leaves == 1 or u < 0.25:
        move = 0
    elif u < 0.5:
        move = 1
    else:
        move = 2
    if move == 0:
        k = leaves[np.random.randint(0, n_leaves)]
        if 2 * k + 2 < M:
            v, c = _pick_rule(k, var_j, cut_j, ncut, lo, hi)
            if v >= 0:
                nl = 0.0
                nr = 0.0
                sl = 0.0
                sr = 0.0
                for i in range(n):
                    if lf[i] == k:
                        if Xb[i, v] <= c:
                            nl += 1.0
                            sl += r[i]
                        else:
                            nr += 1.0
                            sr += r[i]
                if nl > 0 and nr > 0:
                    d = _depth(k)
                    pg = alpha * (1.0 + d) ** (-beta)
                    pg1 = alpha * (2.0 + d) ** (-beta)
                    w2_new = n_nogs + 1
                    if k > 0:
                        sib = k + 1 if k % 2 == 1 else k - 1
                        if st[sib] == 1:
                            w2_new -= 1
                    p_grow = 1.0 if n_leaves == 1 else 0.25
                    log_r = (math.log(pg) + 2.0 * math.log(1.0 - pg1) - math.log(1.0 - pg)
                             + math.log(0.25) - math.log(p_grow)
                             + math.log(n_leaves) - math.log(w2_new)
                             + _log_marg(nl, sl, sig2, tau2) + _log_marg(nr, sr, sig2, tau2)
                             - _log_marg(nl + nr, sl + sr, sig2, tau2))
                    if math.log(np.random.random()) < log_r:
                        st[k] = 2
                        var_j[k] = v
                        cut_j[k] = c
                        st[2 * k + 1] = 1
                        st[2 * k + 2] = 1
                        for i in range(n):
                            if lf[i] == k:
                                lf[i] = 2 * k + 1 if Xb[i, v] <= c else 2 * k + 2
                        if 2 * k + 2 > maxnode[j]:
                            maxnode[j] = 2 * k + 2
    elif move == 1:
        k = nogs[np.random.randint(0, n_nogs)]
        cl = 2 * k + 1
        cr = 2 * k + 2
        nl = 0.0
        nr = 0.0
        sl = 0.0
        sr = 0.0
        for i in range(n):
            if lf[i] == cl:
                nl += 1.0
                sl += r[i]
            elif lf[i] == cr:
                nr += 1.0
                sr += r[i]
        d = _depth(k)
        pg = alpha * (1.0 + d) ** (-beta)
        pg1 = alpha * (2.0 + d) ** (-beta)
        leaves_new = n_leaves - 1
        p_grow_new = 1.0 if leaves_new == 1 else 0.25
        log_r = (math.log(1.0 - pg) - math.log(pg) - 2.0 * math.log(1.0 - pg1)
                 + math.log(p_grow_new) - math.log(0.25)
                 + math.log(n_nogs) - math.log(leaves_new)
                 + _log_marg(nl + nr, sl + sr, sig2, tau2)
                 - _log_marg(nl, sl, sig2, tau2) - _log_marg(nr, sr, sig2, tau2))
        if math.log(np.random.random()) < log_r:
            st[k] = 1
            st[cl] = 0
            st[cr] = 0
            for i in range(n):
                if lf[i] == cl or lf[i] == cr:
                    lf[i] = k
            while maxnode[j] > 0 and st[maxnode[j]] == 0:
                maxnode[j] -= 1
    else:
        k = nogs[np.random.randint(0, n_nogs)]
        cl = 2 * k + 1
        cr = 2 * k + 2
        v, c = _pick_rule(k, var_j, cut_j, ncut, lo, hi)
        if v >= 0:
            ol = 0.0
            orr = 0.0
            osl = 0.0
            osr = 0.0
            nl = 0.0
            nr = 0.0
            sl = 0.0
            sr = 0.0
            for i in range(n):
                if lf[i] == cl or lf[i] == cr:
                    if lf[i] == cl:
                        ol += 1.0
                        osl += r[i]
                    else:
                        orr += 1.0
                        osr += r[i]
                    if Xb[i, v] <= c:
                        nl += 1.0
                        sl += r[i]
                    else:
                        nr += 1.0
                        sr += r[i]
            if nl > 0 and nr > 0:
                log_r = (_log_marg(nl, sl, sig2, tau2) + _log_marg(nr, sr, sig2, tau2)
                         - _log_marg(ol, osl, sig2, tau2) - _log_marg(orr, osr, sig2, tau2))
                if math.log(np.random.random()) < log_r:
                    var_j[k] = v
                    cut_j[k] = c
                    for i in range(n):
                        if lf[i] == cl or lf[i] == cr:
                            lf[i] = cl if Xb[i, v] <= c else cr
    # conjugate leaf draws
    top = maxnode[j] + 1
    for k in range(top):
        cnt[k] = 0.0
        sm[k] = 0.0
    for i in range(n):
        cnt[lf[i]] += 1.0
        sm[lf[i]] += r[i]
    for k in range(top):
        if st[k] == 1:
            prec = cnt[k] / sig2 + 1.0 / tau2
            mu[j, k] = (sm[k] / sig2) / prec + np.random.normal() / math.sqrt(prec)


@nb.njit(cache=True)
def _grow_store(arr, need):
    if need <= arr.shape[0]:
        return arr
    out = np.empty(max(need, 2 * arr.shape[0]), arr.dtype)
    out[:arr.shape[0]] = arr
    return out


@nb.njit(cache=True)
def _sample(Xb, cut_values, ncut, log_y, delta, offset0, sigma0, lam, nu, tau_leaf, J, L,
            cdp, sigma_tau, alpha_tree, beta_tree, burnin, draws, thin, max_depth, seed):
    np.random.seed(seed)
    n, p = Xb.shape
    M = 2 ** (max_depth + 1) - 1
    status = np.zeros((J, M), np.int8)
    var = np.zeros((J, M), np.int64)
    cut = np.zeros((J, M), np.int64)
    mu = np.zeros((J, M))
    leaf_of = np.zeros((J, n), np.int64)
    maxnode = np.zeros(J, np.int64)
    for j in range(J):
        status[j, 0] = 1
    lo = np.empty(p, np.int64)
    hi = np.empty(p, np.int64)
    leaves = np.empty(M, np.int64)
    nogs = np.empty(M, np.int64)
    cnt = np.empty(M)
    sm = np.empty(M)
    ftree = np.zeros(n)
    ylat = log_y.copy()
    r = np.empty(n)
    sig2 = sigma0 * sigma0
    tau2 = tau_leaf * tau_leaf
    offset = offset0

    # residual mixture state (a single zero-located cluster when Gaussian)
    Lc = L if cdp else 1
    tau = np.zeros(Lc)
    pi = np.zeros(Lc)
    V = np.zeros(Lc)
    alpha_dp = 1.0
    k_of = np.zeros(n, np.int64)
    pi[0] = 1.0
    if cdp:
        rest = 1.0
        for l in range(Lc - 1):
            V[l] = np.random.beta(1.0, alpha_dp)
            pi[l] = V[l] * rest
            rest *= 1.0 - V[l]
        V[Lc - 1] = 1.0
        pi[Lc - 1] = rest
    logw = np.empty(Lc)
    n_l = np.zeros(Lc)
    s_l = np.zeros(Lc)

    total = burnin + draws * thin
    out_sigma = np.empty(draws)
    out_offset = np.empty(draws)
    out_pi = np.zeros((draws, Lc))
    out_tau = np.zeros((draws, Lc))
    out_alpha = np.empty(draws)
    tree_start = np.zeros(draws * J + 1, np.int64)
    cap = max(16, draws * J * 3)
    node_var = np.empty(cap, np.int64)
    node_thr = np.empty(cap)
    node_left = np.empty(cap, np.int64)
    node_val = np.empty(cap)
    n_nodes = 0
    heap_to_compact = np.empty(M, np.int64)
    kept = 0

    for it in range(total):
        sigma = math.sqrt(sig2)
        # impute censored log-times above the censoring point
        for i in range(n):
            if delta[i] == 0:
                m = offset + ftree[i] + tau[k_of[i]]
                z = rtnorm_above((log_y[i] - m) / sigma)
                ylat[i] = m + sigma * z
        # trees, one at a time against partial residuals
        for j in range(J):
            for i in range(n):
                own = mu[j, leaf_of[j, i]]
                ftree[i] -= own
                r[i] = ylat[i] - offset - tau[k_of[i]] - ftree[i]
            _update_tree(j, r, Xb, ncut, status, var, cut, mu, leaf_of, maxnode, sig2, tau2,
                         alpha_tree, beta_tree, M, lo, hi, leaves, nogs, cnt, sm)
            for i in range(n):
                ftree[i] += mu[j, leaf_of[j, i]]
        # residual scale
        ss = 0.0
        for i in range(n):
            e = ylat[i] - offset - ftree[i] - tau[k_of[i]]
            ss += e * e
        sig2 = (nu * lam + ss) / 2.0 / np.random.gamma(0.5 * (nu + n), 1.0)
        # blocked Gibbs for the truncated DP mixture
        if cdp:
            sigma = math.sqrt(sig2)
            for l in range(Lc):
                n_l[l] = 0.0
                s_l[l] = 0.0
            for i in range(n):
                e = ylat[i] - offset - ftree[i]
                mx = -np.inf
                for l in range(Lc):
                    if pi[l] > 0.0:
                        dz = (e - tau[l]) / sigma
                        logw[l] = math.log(pi[l]) - 0.5 * dz * dz
                    else:
                        logw[l] = -np.inf
                    if logw[l] > mx:
                        mx = logw[l]
                tot = 0.0
                for l in range(Lc):
                    logw[l] = math.exp(logw[l] - mx)
                    tot += logw[l]
                u = np.random.random() * tot
                acc = 0.0
                pick = Lc - 1
                for l in range(Lc):
                    acc += logw[l]
                    if u <= acc:
                        pick = l
                        break
                k_of[i] = pick
                n_l[pick] += 1.0
                s_l[pick] += e
            tail = 0.0
            for l in range(Lc - 1, -1, -1):
                later = tail
                tail += n_l[l]
                if l < Lc - 1:
                    V[l] = np.random.beta(1.0 + n_l[l], alpha_dp + later)
            V[Lc - 1] = 1.0
            rest = 1.0
            log_rest = 0.0
            for l in range(Lc):
                pi[l] = V[l] * rest
                rest *= 1.0 - V[l]
                if l < Lc - 1:
                    log_rest += math.log(max(1.0 - V[l], 1e-300))
            for l in range(Lc):
                prec = n_l[l] / sig2 + 1.0 / (sigma_tau * sigma_tau)
                tau[l] = (s_l[l] / sig2) / prec + np.random.normal() / math.sqrt(prec)
            alpha_dp = np.random.gamma(1.0 + Lc - 1.0, 1.0 / (1.0 - log_rest))
            # recenter so the mixture has mean zero; the offset absorbs the shift
            psum = 0.0
            c = 0.0
            for l in range(Lc):
                psum += pi[l]
                c += pi[l] * tau[l]
            for l in range(Lc):
                pi[l] /= psum
            c /= psum
            for l in range(Lc):
                tau[l] -= c
            offset += c
        if it >= burnin and (it - burnin) % thin == 0 and kept < draws:
            out_sigma[kept] = math.sqrt(sig2)
            out_offset[kept] = offset
            out_alpha[kept] = alpha_dp
            for l in range(Lc):
                out_pi[kept, l] = pi[l]
                out_tau[kept, l] = tau[l]
            for j in range(J):
                slot = kept * J + j
                tree_start[slot] = n_nodes
                m = 0
                for k in range(maxnode[j] + 1):
                    if status[j, k] > 0:
                        heap_to_compact[k] = m
                        m += 1
                need = n_nodes + m
                node_var = _grow_store(node_var, need)
                node_thr = _grow_store(node_thr, need)
                node_left = _grow_store(node_left, need)
                node_val = _grow_store(node_val, need)
                for k in range(maxnode[j] + 1):
                    if status[j, k] == 0:
                        continue
                    pos = n_nodes + heap_to_compact[k]
                    if status[j, k] == 2:
                        v = var[j, k]
                        node_var[pos] = v
                        node_thr[pos] = cut_values[v, cut[j, k]]
                        node_left[pos] = heap_to_compact[2 * k + 1]
                        node_val[pos] = 0.0
                    else:
                        node_var[pos] = -1
                        node_thr[pos] = 0.0
                        node_left[pos] = -1
                        node_val[pos] = mu[j, k]
                n_nodes += m
            kept += 1
    tree_start[draws * J] = n_nodes
    return (out_sigma, out_offset, out_pi, out_tau, out_alpha, tree_start,
            node_var[:n_nodes].copy(), node_thr[:n_nodes].copy(), node_left[:n_nodes].copy(),
            node_val[:n_nodes].copy())


# ---------------------------------------------------------------- prediction kernels

@nb.njit(cache=True)
def _predict_trees(X, D, J, tree_start, node_var, node_thr, node_left, node_val):
    n = X.shape[0]
    out = np.zeros((D, n))
    for d in range(D):
        for j in range(J):
            base = tree_start[d * J + j]
            for i in range(n):
                k = 0
                while node_var[base + k] >= 0:
                    if X[i, node_var[base + k]] <= node_thr[base + k]:
                        k = node_left[base + k]
                    else:
                        k = node_left[base + k] + 1
                out[d, i] += node_val[base + k]
    return out


@nb.njit(cache=True)
def _mix_cdf(lt, f, sigma, pi_d, tau_d):
    acc = 0.0
    for l in range(pi_d.shape[0]):
        if pi_d[l] > 1e-12:
            acc += pi_d[l] * norm_cdf((lt - f - tau_d[l]) / sigma)
    return acc


@nb.njit(cache=True)
def _draw_quantiles(F, sigma, pi, tau, log_t, q):
    """Largest grid index with F(t) <= q for every (draw, subject)."""
    D, n = F.shape
    G = log_t.shape[0]
    idx = np.zeros((D, n), np.int64)
    capped = np.zeros((D, n), np.bool_)
    for d in range(D):
        for i in range(n):
            f = F[d, i]
            if _mix_cdf(log_t[G - 1], f, sigma[d], pi[d], tau[d]) <= q + 1e-12:
                idx[d, i] = G - 1
                capped[d, i] = True
                continue
            lo = 0
            hi = G - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if _mix_cdf(log_t[mid], f, sigma[d], pi[d], tau[d]) <= q + 1e-12:
                    lo = mid
                else:
                    hi = mid
            idx[d, i] = lo
    return idx, capped


@nb.njit(cache=True)
def _mean_survival(F, sigma, pi, tau, log_t):
    D, n = F.shape
    G = log_t.shape[0]
    S = np.zeros((n, G))
    for d in range(D):
        for i in range(n):
            for g in range(G):
                S[i, g] += 1.0 - _mix_cdf(log_t[g], F[d, i], sigma[d], pi[d], tau[d])
    return S / D


# ---------------------------------------------------------------- public API

def make_cutpoints(X, n_cuts: int = 100):
    """Per-covariate cutpoints (padded matrix) and binned covariates."""
    X = np.asarray(X, dtype=float)
    n, p = X.shape
    cuts = []
    for v in range(p):
        u = np.unique(X[:, v])
        if len(u) <= n_cuts + 1:
            c = 0.5 * (u[:-1] + u[1:])
        else:
            c = np.unique(np.quantile(X[:, v], np.arange(1, n_cuts + 1) / (n_cuts + 1)))
        cuts.append(c)
    ncut = np.array([len(c) for c in cuts], dtype=np.int64)
    table = np.full((p, max(1, ncut.max(initial=0))), np.inf)
    Xb = np.empty((n, p), dtype=np.int64)
    for v, c in enumerate(cuts):
        table[v, :len(c)] = c
        Xb[:, v] = np.searchsorted(c, X[:, v], side="left")
    return table, ncut, Xb


@dataclass
class BartChain(FittedModel):
    """Retained posterior draws of an AFT-BART fit."""

    residual: str
    p: int
    n_trees: int
    sigma: np.ndarray
    offset: np.ndarray
    pi: np.ndarray
    tau: np.ndarray
    alpha_dp: np.ndarray
    tree_start: np.ndarray
    node_var: np.ndarray
    node_thr: np.ndarray
    node_left: np.ndarray
    node_val: np.ndarray
    method: Method = Method.AFT_BART_SP

    @property
    def n_draws(self) -> int:
        return len(self.sigma)

    def f_draws(self, X) -> np.ndarray:
        """Per-draw regression function ``f(x)`` (shape D x n), offset included."""
        X = np.ascontiguousarray(self._check_X(X))
        trees = _predict_trees(X, self.n_draws, self.n_trees, self.tree_start, self.node_var,
                               self.node_thr, self.node_left, self.node_val)
        return trees + self.offset[:, None]

    def _log_grid(self, grid: TimeGrid) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(grid.times)

    def quantile_draws(self, X, grid: TimeGrid, q: float = 0.5):
        """Per-draw curve quantiles on ``grid`` and capped flags, each D x n."""
        F = self.f_draws(X)
        idx, capped = _draw_quantiles(F, self.sigma, self.pi, self.tau, self._log_grid(grid),
                                      float(q))
        return grid.times[idx], capped

    def predict_survival_draws(self, X, grid: TimeGrid) -> np.ndarray:
        """Per-draw curves, shape (D, n, G); intended for small inputs."""
        F = self.f_draws(X)
        lt = self._log_grid(grid)
        S = np.empty((self.n_draws, F.shape[1], len(lt)))
        for d in range(self.n_draws):
            S[d] = _mean_survival(F[d:d + 1], self.sigma[d:d + 1], self.pi[d:d + 1],
                                  self.tau[d:d + 1], lt)
        return S

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        """Posterior mean curve."""
        F = self.f_draws(X)
        S = _mean_survival(F, self.sigma, self.pi, self.tau, self._log_grid(grid))
        S[:, 0] = 1.0
        return np.minimum.accumulate(np.clip(S, 0.0, 1.0), axis=1)


def _ls_sigma(X, log_y) -> float:
    Z = np.column_stack([np.ones(len(log_y)), X])
    coef, *_ = np.linalg.lstsq(Z, log_y, rcond=None)
    dof = max(len(log_y) - Z.shape[1], 1)
    s = float(np.sqrt(np.sum((log_y - Z @ coef) ** 2) / dof))
    return s if s > 0 else float(np.std(log_y)) or 1.0


def _centering(log_y, delta) -> float:
    """Intercept of an intercept-only lognormal AFT fit; mean log-time fallback."""
    try:
        fit = fit_aft_parametric(np.empty((len(log_y), 0)), np.exp(log_y), delta,
                                 dist="lognormal")
        if np.isfinite(fit.mu):
            return float(fit.mu)
    except (ValueError, RuntimeError):
        pass
    return float(np.mean(log_y))


def fit_bart_core(log_times, delta, X, residual: str = "gaussian", n_trees: int = 200,
                  draws: int = 1000, burnin: int = 100, thin: int = 1, k: float = 2.0,
                  alpha: float = 0.95, beta: float = 2.0, nu: float = 3.0, q: float = 0.9,
                  L: int = 50, max_depth: int = 10, n_cuts: int = 100,
                  offset: float | None = None, seed: int = 0,
                  method: Method | None = None) -> BartChain:
    """Run the AFT-BART sampler on (possibly right-censored) log-times.

    ``n_trees=0`` runs the residual model alone around a fixed ``offset``.
    """
    if residual not in ("gaussian", "cdp"):
        raise ValueError(f"unknown residual model {residual!r}")
    log_y = np.ascontiguousarray(np.asarray(log_times, dtype=float))
    d = np.ascontiguousarray(np.asarray(delta, dtype=np.int64))
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] != len(log_y):
        X = X.reshape(len(log_y), -1)
    if d.sum() < 1:
        raise ValueError("BART needs at least one event")
    if draws < 1 or burnin < 0 or thin < 1 or n_trees < 0:
        raise ValueError("invalid chain length settings")
    n, p = X.shape
    table, ncut, Xb = make_cutpoints(X, n_cuts) if p else (np.full((1, 1), np.inf),
                                                          np.zeros(0, np.int64),
                                                          np.zeros((n, 0), np.int64))
    if p and ncut.sum() == 0:
        n_trees = 0
    sigma_hat = _ls_sigma(X, log_y)
    lam = sigma_hat ** 2 * chi2.ppf(1.0 - q, nu) / nu
    center = _centering(log_y, d) if offset is None else float(offset)
    spread = float(np.ptp(log_y)) or 1.0
    tau_leaf = spread / (2.0 * k * np.sqrt(max(n_trees, 1)))
    out = _sample(np.ascontiguousarray(Xb), np.ascontiguousarray(table), ncut, log_y, d,
                  center, sigma_hat, lam, float(nu), tau_leaf, int(n_trees), int(L),
                  residual == "cdp", sigma_hat, float(alpha), float(beta), int(burnin),
                  int(draws), int(thin), int(max_depth), int(seed) % (2 ** 32))
    if method is None:
        method = Method.AFT_BART_NP if residual == "cdp" else Method.AFT_BART_SP
    return BartChain(residual, p, int(n_trees), *out, method=Method(method))


def fit_bart(X, y, delta, residual: str = "gaussian", **kwargs) -> BartChain:
    """AFT-BART on observed times ``y`` (log taken internally)."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("times must be positive")
    return fit_bart_core(np.log(y), delta, X, residual=residual, **kwargs)
