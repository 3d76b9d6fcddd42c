from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from ..survcore import SurvivalCurve, TimeGrid, grid_quantiles


class Method(str, enum.Enum):
    AFT_LOGNORMAL = "AFT_LOGNORMAL"
    AFT_WEIBULL = "AFT_WEIBULL"
    COX_PH = "COX_PH"
    GAPH = "GAPH"
    RSF = "RSF"
    AFT_BART_SP = "AFT_BART_SP"
    AFT_BART_NP = "AFT_BART_NP"
    AFT_BART_NP_PS = "AFT_BART_NP_PS"
    DEEPSURV = "DEEPSURV"

    @property
    def bayesian(self) -> bool:
        return self in (Method.AFT_BART_SP, Method.AFT_BART_NP, Method.AFT_BART_NP_PS)

    @property
    def uses_ps(self) -> bool:
        return self is Method.AFT_BART_NP_PS


@dataclass(frozen=True)
class LearnerSpec:
    method: Method
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "method", Method(self.method))
        for key in ("ntree", "n_trees", "draws", "epochs", "nodesize", "mtry"):
            if key in self.params and int(self.params[key]) < 1:
                raise ValueError(f"{key} must be >= 1")
        if not 0.0 <= float(self.params.get("dropout", 0.0)) < 1.0:
            raise ValueError("dropout must lie in [0, 1)")


class FittedModel:
    """A trained single-arm survival learner.

    Subclasses implement :meth:`predict_survival`, returning an ``(n, G)``
    array of survival probabilities on ``grid``.
    """

    method: Method
    p: int

    def _check_X(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.p:
            raise ValueError(f"expected {self.p} covariates, got {X.shape[1]}")
        return X

    def predict_survival(self, X, grid: TimeGrid) -> np.ndarray:
        raise NotImplementedError

    def predict_curve(self, x, grid: TimeGrid) -> SurvivalCurve:
        return SurvivalCurve(grid, self.predict_survival(np.atleast_2d(x), grid)[0])

    def predict_medians(self, X, grid: TimeGrid, q: float = 0.5):
        S = self.predict_survival(X, grid)
        return grid_quantiles(S, grid.times, q)


def cumhaz_to_survival(H) -> np.ndarray:
    S = np.exp(-np.asarray(H, dtype=float))
    S[..., 0] = 1.0
    # guard against rounding in accumulated hazards
    return np.minimum.accumulate(S, axis=-1)
