"""Simulation design: confounded treatment, Weibull counterfactual times, censoring.

Event times use ``T(z) = {d_z (-log U) / exp(m_z(X))}^(1/eta)``, a Weibull
with shape ``eta`` and scale ``(d_z / exp(m_z))^(1/eta)`` in months.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from .learners.base import FittedModel
from .survcore import Dataset, TimeGrid

P = 10
D0, D1 = 1200.0, 2000.0
HS_SETTINGS = ("i", "ii", "iii", "iv")
MASKS = {
    "none": (),
    "x3": (2,),
    "x3x5": (2, 4),
    "x3x5x6": (2, 4, 5),
}
# slopes on (X1, X2, X3, X5, X6, X7, X9, X10) per unit psi; X10 has no printed value
BASE_SLOPES = np.array([-0.1, -0.9, -0.3, -0.1, -0.2, -0.4, 0.5, 0.0])
PS_COLUMNS = np.array([0, 1, 2, 4, 5, 6, 8, 9])
CORR_X2_X4 = 0.6
MIN_CENSOR_RATE = 1e-4
LOG_TIME_CLIP = 700.0
CALIBRATION_DRAWS = 100_000


@dataclass(frozen=True)
class ScenarioConfig:
    n: int = 500
    hs: str = "i"
    psi: float = 1.0
    ph: bool = True
    censoring: str = "independent"      # or "covariate"
    censor_rate: float = 0.007
    mask: str = "none"
    reps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.reps < 1:
            raise ValueError("reps must be at least 1")
        if not self.psi > 0:
            raise ValueError("psi must be positive")
        if self.hs not in HS_SETTINGS:
            raise ValueError(f"unknown heterogeneity setting {self.hs!r}")
        if self.censoring not in ("independent", "covariate"):
            raise ValueError(f"unknown censoring mode {self.censoring!r}")
        if self.censoring == "independent" and not self.censor_rate > 0:
            raise ValueError("censor_rate must be positive")
        if self.mask not in MASKS:
            raise ValueError(f"unknown mask {self.mask!r}; choose from {sorted(MASKS)}")

    def replicate(self, rep: int) -> "ScenarioConfig":
        """Config for replication ``rep`` with its own seed substream."""
        seq = np.random.SeedSequence(self.seed, spawn_key=(rep,))
        return replace(self, seed=int(seq.generate_state(1, np.uint64)[0]), reps=1)


@dataclass(frozen=True)
class DGPParams:
    psi: float = 1.0
    alpha: np.ndarray = field(default_factory=lambda: BASE_SLOPES.copy())
    alpha0: float = 0.0
    d0: float = D0
    d1: float = D1
    ph: bool = True

    @classmethod
    def for_scenario(cls, psi: float, ph: bool = True, hs: str = "i") -> "DGPParams":
        alpha = BASE_SLOPES * psi
        return cls(psi=psi, alpha=alpha, alpha0=calibrated_alpha0(float(psi), hs), ph=ph)


@dataclass
class SimulatedData:
    """Ground truth plus the analysis view of one simulated sample.

    ``X`` keeps all ten covariates; ``observed`` drops masked columns.
    """

    X: np.ndarray
    e_true: np.ndarray
    z: np.ndarray
    t0: np.ndarray
    t1: np.ndarray
    c: np.ndarray
    y: np.ndarray
    delta: np.ndarray
    theta0: np.ndarray
    theta1: np.ndarray
    config: ScenarioConfig
    observed: Dataset = field(repr=False, default=None)

    @property
    def iste_true(self) -> np.ndarray:
        return self.theta1 - self.theta0

    def iste_capped(self, horizon: float) -> np.ndarray:
        """True contrast of medians each truncated at the follow-up horizon."""
        return np.minimum(self.theta1, horizon) - np.minimum(self.theta0, horizon)

    def records(self):
        return [CounterfactualRecord(self.X[i], self.e_true[i], int(self.z[i]), self.t0[i],
                                     self.t1[i], self.c[i], self.y[i], int(self.delta[i]),
                                     self.iste_true[i])
                for i in range(len(self.y))]


@dataclass(frozen=True)
class CounterfactualRecord:
    x: np.ndarray
    e_true: float
    z: int
    t0: float
    t1: float
    c: float
    y: float
    delta: int
    iste_true: float


def _sigmoid(v):
    return 1.0 / (1.0 + np.exp(-v))


def gen_covariates(n: int, hs: str, rng: np.random.Generator) -> np.ndarray:
    """Five standard normals then five Bernoulli(0.5); HS(iv) correlates X2, X4."""
    if n < 1:
        raise ValueError("n must be positive")
    X = np.empty((n, P))
    X[:, :5] = rng.standard_normal((n, 5))
    X[:, 5:] = rng.integers(0, 2, size=(n, 5))
    if hs == "iv":
        r = CORR_X2_X4
        X[:, 3] = r * X[:, 1] + np.sqrt(1 - r * r) * X[:, 3]
    return X


def true_propensity(X, params: DGPParams) -> np.ndarray:
    X = np.atleast_2d(X)
    return expit(params.alpha0 + X[:, PS_COLUMNS] @ np.asarray(params.alpha))


def calibrate_intercept(alpha, rng: np.random.Generator, hs: str = "i",
                        target: float = 0.5, tol: float = 0.005,
                        draws: int = CALIBRATION_DRAWS, max_iter: int = 100) -> float:
    """Bisection on the intercept so the Monte Carlo mean of e(X) hits ``target``."""
    alpha = np.asarray(alpha, dtype=float)
    lin = gen_covariates(draws, hs, rng)[:, PS_COLUMNS] @ alpha
    lo, hi = -20.0, 20.0
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        mean = expit(mid + lin).mean()
        if abs(mean - target) < tol * 1e-3 or hi - lo < 1e-12:
            return mid
        if mean < target:
            lo = mid
        else:
            hi = mid
    mean = expit(0.5 * (lo + hi) + lin).mean()
    if abs(mean - target) >= tol:
        raise RuntimeError("intercept calibration did not converge")
    return 0.5 * (lo + hi)


@functools.lru_cache(maxsize=None)
def calibrated_alpha0(psi: float, hs: str = "i") -> float:
    # fixed calibration stream so every replication shares the same intercept
    seed = np.random.SeedSequence(20200917, spawn_key=(int(round(psi * 1000)),))
    return calibrate_intercept(BASE_SLOPES * psi, np.random.default_rng(seed), hs=hs)


def m_function(hs: str, arm: int, X) -> np.ndarray:
    X = np.atleast_2d(X)
    x1, x2, x3, x4, x5, x6, x7 = (X[:, j] for j in range(7))
    if arm == 1:
        if hs in ("i", "ii"):
            return (-0.2 + 0.1 * _sigmoid(x1) - 0.8 * np.sin(x3) - 0.1 * x5 ** 2
                    - 0.3 * x6 - 0.2 * x7)
        if hs in ("iii", "iv"):
            return (0.5 - 0.1 * _sigmoid(x2) + 0.1 * np.sin(x3) - 0.1 * x4 ** 2 + 0.2 * x4
                    - 0.1 * x5 ** 2 - 0.3 * x6)
    elif arm == 0:
        if hs == "i":
            return 0.2 - 0.5 * x1 - 0.8 * x3 - 1.8 * x5 - 0.9 * x6 - 0.1 * x7
        if hs in ("ii", "iii"):
            return (-0.1 + 0.1 * x1 ** 2 - 0.2 * np.sin(x3) + 0.2 * _sigmoid(x5)
                    + 0.2 * x6 - 0.3 * x7)
        if hs == "iv":
            return (-0.2 + 0.5 * np.sin(np.pi * x1 * x3) + 0.2 * _sigmoid(x5)
                    + 0.2 * x6 - 0.3 * x7)
    raise ValueError(f"unknown setting/arm {hs!r}/{arm!r}")


def eta_shape(ph: bool, arm: int, X) -> np.ndarray:
    X = np.atleast_2d(X)
    if ph:
        return np.full(X.shape[0], 2.0)
    if arm == 0:
        return np.exp(0.7 - 1.8 * X[:, 2] + 0.8 * X[:, 6])
    return np.exp(0.9 - 0.5 * X[:, 0] + 0.5 * X[:, 1])


def _arm_scale(arm: int, params: DGPParams) -> float:
    return params.d1 if arm == 1 else params.d0


def _log_weibull_time(log_base, eta):
    return np.clip(log_base / eta, -LOG_TIME_CLIP, LOG_TIME_CLIP)


def gen_event_time(arm: int, X, u, params: DGPParams, hs: str) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u must lie in (0, 1)")
    log_base = np.log(_arm_scale(arm, params)) + np.log(-np.log(u)) - m_function(hs, arm, X)
    return np.exp(_log_weibull_time(log_base, eta_shape(params.ph, arm, X)))


def covariate_censor_rate(X) -> np.ndarray:
    X = np.atleast_2d(X)
    rho = (0.02 + 0.1 * X[:, 0] ** 2 + 0.1 * np.sin(X[:, 2]) + 0.2 * _sigmoid(X[:, 4])
           + 0.02 * X[:, 5] - 0.03 * X[:, 6])
    return np.maximum(rho, MIN_CENSOR_RATE)


def gen_censoring(mode: str, X, rng: np.random.Generator, rate: float = 0.007) -> np.ndarray:
    X = np.atleast_2d(X)
    if mode == "independent":
        rates = np.full(X.shape[0], rate)
    elif mode == "covariate":
        rates = covariate_censor_rate(X)
    else:
        raise ValueError(f"unknown censoring mode {mode!r}")
    return rng.exponential(1.0 / rates)


def true_median(arm: int, X, params: DGPParams, hs: str) -> np.ndarray:
    log_base = np.log(_arm_scale(arm, params) * np.log(2.0)) - m_function(hs, arm, X)
    return np.exp(_log_weibull_time(log_base, eta_shape(params.ph, arm, X)))


def true_iste(X, ph: bool, params: DGPParams, hs: str) -> np.ndarray:
    params = replace(params, ph=ph)
    return true_median(1, X, params, hs) - true_median(0, X, params, hs)


def true_survival(arm: int, X, times, params: DGPParams, hs: str) -> np.ndarray:
    """Counterfactual survival ``P(T(arm) > t | x)`` on ``times``; shape (n, G)."""
    X = np.atleast_2d(X)
    t = np.asarray(times, dtype=float)[None, :]
    eta = eta_shape(params.ph, arm, X)[:, None]
    log_scale = ((np.log(_arm_scale(arm, params)) - m_function(hs, arm, X)) / eta[:, 0])[:, None]
    with np.errstate(divide="ignore", over="ignore"):
        z = np.exp(np.clip(eta * (np.log(t) - log_scale), -LOG_TIME_CLIP, LOG_TIME_CLIP))
    S = np.exp(-z)
    S[:, t[0] == 0] = 1.0
    return S


def simulate(config: ScenarioConfig) -> SimulatedData:
    rng = np.random.default_rng(config.seed)
    params = DGPParams.for_scenario(config.psi, config.ph, config.hs)
    X = gen_covariates(config.n, config.hs, rng)
    e = true_propensity(X, params)
    z = (rng.uniform(size=config.n) < e).astype(np.int64)
    u0 = rng.uniform(size=config.n)
    u1 = rng.uniform(size=config.n)
    # guard the open interval required by the inverse transform
    tiny = np.finfo(float).tiny
    u0, u1 = np.clip(u0, tiny, 1 - 1e-16), np.clip(u1, tiny, 1 - 1e-16)
    t0 = gen_event_time(0, X, u0, params, config.hs)
    t1 = gen_event_time(1, X, u1, params, config.hs)
    c = gen_censoring(config.censoring, X, rng, config.censor_rate)
    t_obs = np.where(z == 1, t1, t0)
    y = np.minimum(t_obs, c)
    delta = (t_obs < c).astype(np.int64)
    keep = [j for j in range(P) if j not in MASKS[config.mask]]
    names = tuple(f"x{j + 1}" for j in keep)
    sim = SimulatedData(
        X=X, e_true=e, z=z, t0=t0, t1=t1, c=c, y=y, delta=delta,
        theta0=true_median(0, X, params, config.hs),
        theta1=true_median(1, X, params, config.hs),
        config=config,
    )
    sim.observed = Dataset(X[:, keep], z, y, delta, names)
    return sim


@dataclass
class OracleModel(FittedModel):
    """Learner stand-in that returns the true counterfactual curves.

    Expects the full ten-column covariate matrix.
    """

    arm: int
    params: DGPParams
    hs: str
    p: int = P
    method: str = "ORACLE"

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        return true_survival(self.arm, self._check_X(X), grid.times, self.params, self.hs)


def oracle_fitter(config: ScenarioConfig):
    """Fitter callable for :func:`survhte.iste.estimate_iste` returning oracles."""
    params = DGPParams.for_scenario(config.psi, config.ph, config.hs)

    def fit(arm, X, y, delta, seed):
        return OracleModel(arm, params, config.hs, p=np.atleast_2d(X).shape[1])

    return fit


def export_csv(sim: SimulatedData, path, truth_path=None) -> None:
    """Write the observed sample (all ten covariates, z, y, delta) and,
    optionally, the per-subject ground truth as UTF-8 CSV with exact floats."""
    import csv

    n = len(sim.y)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{j + 1}" for j in range(P)] + ["z", "y", "delta"])
        for i in range(n):
            w.writerow([repr(float(v)) for v in sim.X[i]]
                       + [int(sim.z[i]), repr(float(sim.y[i])), int(sim.delta[i])])
    if truth_path is None:
        return
    with open(truth_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["subject", "e_true", "t0", "t1", "c", "theta0", "theta1", "iste_true"])
        for i in range(n):
            w.writerow([i] + [repr(float(a[i])) for a in (sim.e_true, sim.t0, sim.t1, sim.c,
                                                          sim.theta0, sim.theta1,
                                                          sim.iste_true)])
