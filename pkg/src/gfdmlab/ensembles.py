"""Tree ensembles: random forest, extra trees, leaf-capped gradient
boosting, and the voting (mean) combiner.

Member seeds derive from the master seed by member index, so parallel and
serial fits produce identical models.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from gfdmlab.errors import EmptyDataset, EmptyEnsemble
from gfdmlab.trees import TreeModel, TreeParams, fit_tree, fit_tree_best_first


def _member_seed(seed: int, k: int) -> int:
    return int(np.random.SeedSequence(entropy=seed, spawn_key=(k,)).generate_state(1)[0])


@dataclass
class ForestParams:
    n_estimators: int = 100
    max_depth: int | None = None
    max_features: int | None = None
    min_samples_leaf: int = 1
    criterion: str = "squared_error"
    bootstrap: bool = True


@dataclass
class ForestModel:
    kind: str  # random_forest | extra_trees
    members: list[TreeModel]
    params: ForestParams
    importances_raw: np.ndarray

    @property
    def feature_importances(self) -> np.ndarray:
        tot = self.importances_raw.sum()
        if tot <= 0:
            return np.zeros_like(self.importances_raw)
        return self.importances_raw / tot

    def predict(self, X) -> np.ndarray:
        preds = np.stack([t.predict(X) for t in self.members])
        return preds.mean(axis=0)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "params": vars(self.params).copy(),
            "members": [t.to_dict() for t in self.members],
            "importances_raw": [float(v) for v in self.importances_raw],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForestModel":
        return cls(
            kind=d["kind"],
            members=[TreeModel.from_dict(m) for m in d["members"]],
            params=ForestParams(**d["params"]),
            importances_raw=np.asarray(d["importances_raw"], dtype=float),
        )


def fit_forest(X, y, kind: str, params: ForestParams, seed: int = 0) -> ForestModel:
    """random_forest: bootstrap rows + best splits; extra_trees: the full
    sample + uniform random thresholds per candidate feature."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot fit a forest on zero rows")
    if kind not in ("random_forest", "extra_trees"):
        raise ValueError(f"unknown forest kind {kind!r}")
    n = X.shape[0]
    members = []
    raw = np.zeros(X.shape[1])
    tp = TreeParams(
        max_depth=params.max_depth,
        max_features=params.max_features,
        min_samples_leaf=params.min_samples_leaf,
        criterion=params.criterion,
    )
    for k in range(params.n_estimators):
        mseed = _member_seed(seed, k)
        rng = np.random.default_rng(mseed)
        if kind == "random_forest" and params.bootstrap:
            rows = rng.integers(0, n, size=n)
        else:
            rows = np.arange(n)
        tree = fit_tree(
            X[rows], y[rows], tp, "regression", seed=_member_seed(mseed, 1),
            random_thresholds=(kind == "extra_trees"),
        )
        members.append(tree)
        raw += tree.importances_raw
    return ForestModel(kind=kind, members=members, params=params, importances_raw=raw)


@dataclass
class BoostParams:
    n_estimators: int = 100
    num_leaves: int = 20
    learning_rate: float = 0.1
    min_child_samples: int = 20
    min_child_weight: float = 1e-3  # L2 hessians are row counts

    @property
    def min_samples(self) -> int:
        return max(self.min_child_samples, int(np.ceil(self.min_child_weight)))


@dataclass
class BoostedModel:
    base_value: float
    stages: list[TreeModel]
    params: BoostParams
    importances_raw: np.ndarray

    kind: str = "gradient_boosted"

    @property
    def feature_importances(self) -> np.ndarray:
        tot = self.importances_raw.sum()
        if tot <= 0:
            return np.zeros_like(self.importances_raw)
        return self.importances_raw / tot

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.full(len(X), self.base_value)
        for tree in self.stages:
            out += self.params.learning_rate * tree.predict(X)
        return out

    def staged_train_mse(self, X, y) -> np.ndarray:
        """Training MSE after each stage (monotone non-increasing)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        pred = np.full(len(X), self.base_value)
        out = [float(((y - pred) ** 2).mean())]
        for tree in self.stages:
            pred = pred + self.params.learning_rate * tree.predict(X)
            out.append(float(((y - pred) ** 2).mean()))
        return np.asarray(out)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "base_value": self.base_value,
            "params": vars(self.params).copy(),
            "stages": [t.to_dict() for t in self.stages],
            "importances_raw": [float(v) for v in self.importances_raw],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BoostedModel":
        return cls(
            base_value=float(d["base_value"]),
            stages=[TreeModel.from_dict(m) for m in d["stages"]],
            params=BoostParams(**d["params"]),
            importances_raw=np.asarray(d["importances_raw"], dtype=float),
        )


def fit_boosted(X, y, params: BoostParams, seed: int = 0) -> BoostedModel:
    """Stagewise least-squares boosting with leaf-capped best-first trees."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot fit a boosted model on zero rows")
    base = float(np.mean(y))
    pred = np.full(len(y), base)
    stages = []
    raw = np.zeros(X.shape[1])
    for k in range(params.n_estimators):
        resid = y - pred
        tree = fit_tree_best_first(
            X, resid, num_leaves=params.num_leaves,
            min_samples=params.min_samples, seed=_member_seed(seed, k),
        )
        stages.append(tree)
        raw += tree.importances_raw
        pred = pred + params.learning_rate * tree.predict(X)
    return BoostedModel(base_value=base, stages=stages, params=params,
                        importances_raw=raw)


@dataclass
class VotingModel:
    members: list
    kind: str = "voting"

    def predict(self, X) -> np.ndarray:
        if not self.members:
            raise EmptyEnsemble("voting over zero members")
        preds = np.stack([m.predict(X) for m in self.members])
        return preds.mean(axis=0)

    @property
    def feature_importances(self) -> np.ndarray:
        imps = [m.feature_importances for m in self.members
                if getattr(m, "feature_importances", None) is not None]
        out = np.mean(np.stack(imps), axis=0)
        s = out.sum()
        return out / s if s > 0 else out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "members": [m.to_dict() for m in self.members]}

    @classmethod
    def from_dict(cls, d: dict) -> "VotingModel":
        return cls(members=[model_from_dict(m) for m in d["members"]])


def fit_voting(members: list) -> VotingModel:
    if not members:
        raise EmptyEnsemble("voting over zero members")
    return VotingModel(members=list(members))


def model_from_dict(d: dict) -> object:
    kind = d.get("kind")
    if kind in ("random_forest", "extra_trees"):
        return ForestModel.from_dict(d)
    if kind == "gradient_boosted":
        return BoostedModel.from_dict(d)
    if kind == "voting":
        return VotingModel.from_dict(d)
    return TreeModel.from_dict(d)
