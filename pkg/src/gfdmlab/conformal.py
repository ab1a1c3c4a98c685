"""Split-conformal prediction intervals around any fitted regressor.

Calibration residuals r_i = |y_i - yhat_i| on a held-out set give the
half-width q = the ceil((n+1)(1-alpha))-th smallest residual; intervals are
[yhat - q, yhat + q] with finite-sample miscoverage at most alpha under
exchangeability. Width is constant in x by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from gfdmlab.errors import CalibrationTooSmall, FeatureMismatch

# per-target miscoverage defaults
DEFAULT_ALPHAS = {"cd": 0.15, "cl": 0.20, "ct": 0.10}


@dataclass(frozen=True)
class IntervalPrediction:
    point: float
    lo: float
    hi: float
    alpha: float


@dataclass
class ConformalModel:
    regressor: object
    residuals: np.ndarray  # sorted ascending
    alpha: float
    n_features: int
    target: str = "y"

    @property
    def quantile(self) -> float:
        n = len(self.residuals)
        rank = math.ceil((n + 1) * (1.0 - self.alpha))
        return float(self.residuals[rank - 1])

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "target": self.target,
            "n_features": self.n_features,
            "residuals": [float(r) for r in self.residuals],
        }


def conformal_quantile(residuals, alpha: float) -> float:
    """The ceil((n+1)(1-alpha))-th smallest absolute residual."""
    r = np.sort(np.asarray(residuals, dtype=float))
    n = len(r)
    if n < math.ceil(1.0 / alpha) - 1:
        raise CalibrationTooSmall(
            f"{n} calibration points cannot give a finite interval at alpha={alpha}"
        )
    rank = math.ceil((n + 1) * (1.0 - alpha))
    if rank > n:
        raise CalibrationTooSmall(
            f"rank {rank} exceeds {n} calibration points at alpha={alpha}"
        )
    return float(r[rank - 1])


def calibrate(regressor, X_cal, y_cal, alpha: float, target: str = "y") -> ConformalModel:
    """Calibrate on a set disjoint from the regressor's training data."""
    if not (0.0 < alpha < 1.0):
        raise ValueError("alpha must be in (0, 1)")
    X_cal = np.atleast_2d(np.asarray(X_cal, dtype=float))
    y_cal = np.asarray(y_cal, dtype=float)
    pred = regressor.predict(X_cal)
    residuals = np.sort(np.abs(y_cal - pred))
    conformal_quantile(residuals, alpha)  # validates the size
    return ConformalModel(
        regressor=regressor,
        residuals=residuals,
        alpha=alpha,
        n_features=X_cal.shape[1],
        target=target,
    )


def predict_interval(model: ConformalModel, x) -> IntervalPrediction:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        if x.shape[0] != model.n_features:
            raise FeatureMismatch(
                f"expected {model.n_features} features, got {x.shape[0]}"
            )
        x = x[None, :]
    elif x.shape[1] != model.n_features:
        raise FeatureMismatch(f"expected {model.n_features} features, got {x.shape[1]}")
    point = float(model.regressor.predict(x)[0])
    q = model.quantile
    return IntervalPrediction(point=point, lo=point - q, hi=point + q, alpha=model.alpha)
