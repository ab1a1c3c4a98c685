"""Datasets, error metrics, grid-search cross-validation, and
importance-based feature selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gfdmlab.errors import GridEmpty, LengthMismatch, TooFewRows


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    target_name: str = "y"

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if self.X.shape[0] != self.y.shape[0]:
            raise LengthMismatch("X and y row counts differ")
        if self.X.shape[1] != len(self.feature_names):
            raise LengthMismatch("feature_names do not match X columns")

    @property
    def n(self) -> int:
        return self.X.shape[0]


@dataclass(frozen=True)
class Metrics:
    mae: float
    mse: float
    r2: float
    mape: float
    mape_skipped: int = 0  # zero-target rows excluded from MAPE

    def to_dict(self) -> dict:
        return {
            "MAE": self.mae,
            "MSE": self.mse,
            "R2": self.r2,
            "MAPE": self.mape,
            "mape_skipped": self.mape_skipped,
        }


def metrics(y_true, y_pred) -> Metrics:
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or len(y_true) == 0:
        raise LengthMismatch("y_true and y_pred must be equal-length 1-d arrays")
    err = y_pred - y_true
    mae = float(np.abs(err).mean())
    mse = float((err * err).mean())
    ss_tot = float(((y_true - y_true.mean()) ** 2).sum())
    ss_res = float((err * err).sum())
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res == 0.0 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    nz = y_true != 0.0
    skipped = int((~nz).sum())
    mape = float(np.abs(err[nz] / y_true[nz]).mean()) if nz.any() else float("nan")
    return Metrics(mae=mae, mse=mse, r2=r2, mape=mape, mape_skipped=skipped)


def kfold_indices(n: int, k: int, seed: int) -> list[np.ndarray]:
    """Deterministic shuffled folds; sizes differ by at most one."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


def grid_search_cv(X, y, fit_fn, grid: list[dict], k_folds: int = 5,
                   seed: int = 0) -> tuple[dict, np.ndarray]:
    """Exhaustive grid search scored by held-out-fold MSE.

    ``fit_fn(X, y, params: dict, seed) -> model with .predict``. Returns
    (best_params, fold_scores[grid_index, fold]); ties break by grid order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if not grid:
        raise GridEmpty("grid search over an empty grid")
    if k_folds < 2:
        raise ValueError("k_folds must be >= 2")
    if X.shape[0] < k_folds:
        raise TooFewRows(f"{X.shape[0]} rows cannot make {k_folds} folds")
    folds = kfold_indices(X.shape[0], k_folds, seed)
    all_idx = np.arange(X.shape[0])
    scores = np.zeros((len(grid), k_folds))
    for gi, params in enumerate(grid):
        for fi, test_idx in enumerate(folds):
            train_idx = np.setdiff1d(all_idx, test_idx)
            model = fit_fn(X[train_idx], y[train_idx], params, seed)
            pred = model.predict(X[test_idx])
            scores[gi, fi] = float(((pred - y[test_idx]) ** 2).mean())
    best = int(np.argmin(scores.mean(axis=1)))
    return dict(grid[best]), scores


def select_features(model, threshold: float = 0.02) -> list[int]:
    """Indices with importance strictly above the threshold, original order."""
    imp = np.asarray(model.feature_importances, dtype=float)
    return [int(i) for i in np.flatnonzero(imp > threshold)]
