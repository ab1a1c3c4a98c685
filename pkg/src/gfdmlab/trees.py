"""CART decision trees (regression and classification) from scratch.

Greedy best-split growth: at each node a random subset of ``max_features``
features is scanned (ascending feature index), candidate thresholds are the
midpoints of consecutive sorted unique values, and the split minimizing the
summed child criterion wins; ties go to the lowest feature index, then the
lowest threshold. Supported criteria: squared_error, absolute_error (median
leaves, L1 gain), friedman_mse, and gini for classification.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from gfdmlab.errors import EmptyDataset

CRITERIA_REGRESSION = ("squared_error", "absolute_error", "friedman_mse")
CRITERIA_CLASSIFICATION = ("gini",)


@dataclass
class TreeParams:
    max_depth: int | None = None
    max_features: int | None = None  # count of features tried per split
    min_samples_leaf: int = 1
    criterion: str = "squared_error"


@dataclass
class Node:
    feature: int = -1
    threshold: float = 0.0
    left: "Node | None" = None
    right: "Node | None" = None
    value: float = 0.0
    n_samples: int = 0
    class_counts: np.ndarray | None = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def to_dict(self) -> dict:
        d = {"n": self.n_samples, "value": self.value}
        if self.class_counts is not None:
            d["counts"] = [int(c) for c in self.class_counts]
        if not self.is_leaf:
            d.update(
                feature=self.feature,
                threshold=self.threshold,
                left=self.left.to_dict(),
                right=self.right.to_dict(),
            )
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Node":
        node = cls(n_samples=int(d["n"]), value=float(d["value"]))
        if "counts" in d:
            node.class_counts = np.asarray(d["counts"], dtype=float)
        if "feature" in d:
            node.feature = int(d["feature"])
            node.threshold = float(d["threshold"])
            node.left = cls.from_dict(d["left"])
            node.right = cls.from_dict(d["right"])
        return node


def _leaf_value(y: np.ndarray, criterion: str) -> float:
    if criterion == "absolute_error":
        return float(np.median(y))
    return float(np.mean(y))


def _impurity_reg(y: np.ndarray, criterion: str) -> float:
    """Total (not mean) impurity of a node."""
    if len(y) == 0:
        return 0.0
    if criterion == "absolute_error":
        return float(np.abs(y - np.median(y)).sum())
    return float(((y - y.mean()) ** 2).sum())


def _gini_total(counts: np.ndarray) -> float:
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(n * (1.0 - (p * p).sum()))


def _best_split_feature(x: np.ndarray, y: np.ndarray, criterion: str,
                        min_leaf: int, classes: int | None):
    """Best (score, threshold) for one feature; score = summed child
    criterion (lower is better). Returns (inf, nan) when unsplittable."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    ys = y[order]
    n = len(ys)
    # candidate boundaries: positions where consecutive sorted values differ
    diff = np.flatnonzero(xs[1:] > xs[:-1]) + 1
    if diff.size == 0:
        return np.inf, np.nan
    cuts = diff[(diff >= min_leaf) & (diff <= n - min_leaf)]
    if cuts.size == 0:
        return np.inf, np.nan

    if classes is not None:
        onehot = np.zeros((n, classes))
        onehot[np.arange(n), ys.astype(int)] = 1.0
        left_counts = np.cumsum(onehot, axis=0)
        total = left_counts[-1]
        best = (np.inf, np.nan)
        for c in cuts:
            lc = left_counts[c - 1]
            rc = total - lc
            score = _gini_total(lc) + _gini_total(rc)
            if score < best[0] - 1e-15:
                best = (score, 0.5 * (xs[c - 1] + xs[c]))
        return best

    if criterion in ("squared_error", "friedman_mse"):
        cum = np.cumsum(ys)
        cum2 = np.cumsum(ys * ys)
        tot, tot2 = cum[-1], cum2[-1]
        nl = cuts.astype(float)
        nr = n - nl
        sl = cum[cuts - 1]
        sr = tot - sl
        if criterion == "squared_error":
            sse_l = cum2[cuts - 1] - sl * sl / nl
            sse_r = (tot2 - cum2[cuts - 1]) - sr * sr / nr
            scores = sse_l + sse_r
        else:
            # Friedman improvement: larger is better; negate into a score
            improve = (nl * nr / n) * (sl / nl - sr / nr) ** 2
            scores = -improve
        k = int(np.argmin(scores))  # first minimum = lowest threshold
        c = cuts[k]
        return float(scores[k]), 0.5 * (xs[c - 1] + xs[c])

    if criterion == "absolute_error":
        best = (np.inf, np.nan)
        for c in cuts:
            yl, yr = ys[:c], ys[c:]
            score = float(np.abs(yl - np.median(yl)).sum()) + float(
                np.abs(yr - np.median(yr)).sum()
            )
            if score < best[0] - 1e-15:
                best = (score, 0.5 * (xs[c - 1] + xs[c]))
        return best

    raise ValueError(f"unknown criterion {criterion!r}")


@dataclass
class TreeModel:
    root: Node
    params: TreeParams
    task: str
    n_features: int
    classes: int | None = None
    importances_raw: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def feature_importances(self) -> np.ndarray:
        tot = self.importances_raw.sum()
        if tot <= 0:
            return np.zeros_like(self.importances_raw)
        return self.importances_raw / tot

    def _locate(self, row: np.ndarray) -> Node:
        node = self.root
        while not node.is_leaf:
            node = node.left if row[node.feature] <= node.threshold else node.right
        return node

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self._locate(row).value for row in X])

    def predict_proba1(self, X: np.ndarray) -> np.ndarray:
        """P(class 1) from leaf class frequencies (binary classification)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = np.empty(len(X))
        for i, row in enumerate(X):
            counts = self._locate(row).class_counts
            out[i] = counts[1] / counts.sum() if counts.sum() else 0.0
        return out

    def leaves(self) -> list[tuple[list[tuple[int, float, bool]], Node]]:
        """(path, leaf) pairs; path entries are (feature, threshold,
        went_left)."""
        out = []

        def walk(node, path):
            if node.is_leaf:
                out.append((list(path), node))
                return
            walk(node.left, path + [(node.feature, node.threshold, True)])
            walk(node.right, path + [(node.feature, node.threshold, False)])

        walk(self.root, [])
        return out

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "n_features": self.n_features,
            "classes": self.classes,
            "criterion": self.params.criterion,
            "importances": [float(v) for v in self.importances_raw],
            "root": self.root.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TreeModel":
        return cls(
            root=Node.from_dict(d["root"]),
            params=TreeParams(criterion=d.get("criterion", "squared_error")),
            task=d["task"],
            n_features=int(d["n_features"]),
            classes=d.get("classes"),
            importances_raw=np.asarray(d.get("importances", []), dtype=float),
        )


def fit_tree(X: np.ndarray, y: np.ndarray, params: TreeParams, task: str,
             seed: int = 0, random_thresholds: bool = False) -> TreeModel:
    """Grow a CART tree. ``random_thresholds`` switches to the extra-trees
    rule (one uniform threshold per candidate feature)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot fit a tree on zero rows")
    n, m = X.shape
    classes = None
    criterion = params.criterion
    if task == "classification":
        criterion = "gini"
        classes = int(y.max()) + 1 if len(y) else 2
        classes = max(classes, 2)
    rng = np.random.default_rng(seed)
    imp_raw = np.zeros(m)
    min_leaf = max(1, params.min_samples_leaf)
    mf = min(params.max_features or m, m)

    def node_impurity(idx):
        if classes is not None:
            counts = np.bincount(y[idx].astype(int), minlength=classes).astype(float)
            return _gini_total(counts), counts
        return _impurity_reg(y[idx], criterion), None

    def make_leaf(idx, counts):
        if classes is not None:
            return Node(value=float(np.argmax(counts)), n_samples=len(idx),
                        class_counts=counts)
        return Node(value=_leaf_value(y[idx], criterion), n_samples=len(idx))

    def build(idx, depth):
        imp, counts = node_impurity(idx)
        if (
            len(idx) < 2 * min_leaf
            or imp <= 1e-12
            or (params.max_depth is not None and depth >= params.max_depth)
        ):
            return make_leaf(idx, counts)
        feats = np.sort(rng.choice(m, size=mf, replace=False))
        best = (np.inf, -1, np.nan)
        for f in feats:
            if random_thresholds:
                xf = X[idx, f]
                lo, hi = xf.min(), xf.max()
                if hi <= lo:
                    continue
                thr = float(rng.uniform(lo, hi))
                mask = xf <= thr
                nl = int(mask.sum())
                if nl < min_leaf or len(idx) - nl < min_leaf:
                    continue
                if classes is not None:
                    cl = np.bincount(y[idx[mask]].astype(int), minlength=classes)
                    cr = np.bincount(y[idx[~mask]].astype(int), minlength=classes)
                    score = _gini_total(cl.astype(float)) + _gini_total(cr.astype(float))
                elif criterion == "friedman_mse":
                    yl, yr = y[idx[mask]], y[idx[~mask]]
                    score = -(nl * (len(idx) - nl) / len(idx)) * (yl.mean() - yr.mean()) ** 2
                else:
                    score = _impurity_reg(y[idx[mask]], criterion) + _impurity_reg(
                        y[idx[~mask]], criterion
                    )
            else:
                score, thr = _best_split_feature(
                    X[idx, f], y[idx], criterion, min_leaf, classes
                )
            if score < best[0] - 1e-15:
                best = (score, f, thr)
        if best[1] < 0 or not np.isfinite(best[0]):
            return make_leaf(idx, counts)
        f, thr = best[1], best[2]
        mask = X[idx, f] <= thr
        left_idx, right_idx = idx[mask], idx[~mask]
        if len(left_idx) < min_leaf or len(right_idx) < min_leaf:
            return make_leaf(idx, counts)
        # importance: criterion reduction (gini/SSE/L1 scale, friedman via
        # the squared-error reduction of the same split)
        if criterion == "friedman_mse" and classes is None:
            red = _impurity_reg(y[idx], "squared_error") - (
                _impurity_reg(y[left_idx], "squared_error")
                + _impurity_reg(y[right_idx], "squared_error")
            )
        else:
            il, _ = node_impurity(left_idx)
            ir, _ = node_impurity(right_idx)
            red = imp - il - ir
        imp_raw[f] += max(red, 0.0)
        node = Node(feature=int(f), threshold=float(thr), n_samples=len(idx))
        node.class_counts = counts
        node.value = float(np.argmax(counts)) if classes is not None else _leaf_value(
            y[idx], criterion
        )
        node.left = build(left_idx, depth + 1)
        node.right = build(right_idx, depth + 1)
        return node

    root = build(np.arange(n), 0)
    return TreeModel(root=root, params=params, task=task, n_features=m,
                     classes=classes, importances_raw=imp_raw)


def fit_tree_best_first(X: np.ndarray, y: np.ndarray, num_leaves: int,
                        min_samples: int, seed: int = 0,
                        max_features: int | None = None) -> TreeModel:
    """Leaf-capped regression tree grown best-first by squared-error gain
    (the boosting base learner)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] == 0:
        raise EmptyDataset("cannot fit a tree on zero rows")
    n, m = X.shape
    rng = np.random.default_rng(seed)
    imp_raw = np.zeros(m)
    mf = min(max_features or m, m)
    min_leaf = max(1, min_samples)

    root = Node(value=float(np.mean(y)), n_samples=n)
    leaf_rows: dict[int, np.ndarray] = {id(root): np.arange(n)}
    heap: list = []
    counter = 0

    def consider(node):
        nonlocal counter
        idx = leaf_rows[id(node)]
        if len(idx) < 2 * min_leaf:
            return
        feats = np.sort(rng.choice(m, size=mf, replace=False))
        best = (np.inf, -1, np.nan)
        for f in feats:
            score, thr = _best_split_feature(X[idx, f], y[idx], "squared_error",
                                             min_leaf, None)
            if score < best[0] - 1e-15:
                best = (score, f, thr)
        if best[1] < 0 or not np.isfinite(best[0]):
            return
        gain = _impurity_reg(y[idx], "squared_error") - best[0]
        if gain <= 1e-12:
            return
        heapq.heappush(heap, (-gain, counter, node, best[1], best[2]))
        counter += 1

    consider(root)
    n_leaves = 1
    while heap and n_leaves < num_leaves:
        neg_gain, _, node, f, thr = heapq.heappop(heap)
        if not node.is_leaf:
            continue
        idx = leaf_rows.pop(id(node))
        mask = X[idx, f] <= thr
        left_idx, right_idx = idx[mask], idx[~mask]
        if len(left_idx) < min_leaf or len(right_idx) < min_leaf:
            continue
        node.feature = int(f)
        node.threshold = float(thr)
        node.left = Node(value=float(np.mean(y[left_idx])), n_samples=len(left_idx))
        node.right = Node(value=float(np.mean(y[right_idx])), n_samples=len(right_idx))
        leaf_rows[id(node.left)] = left_idx
        leaf_rows[id(node.right)] = right_idx
        imp_raw[f] += -neg_gain
        n_leaves += 1
        consider(node.left)
        consider(node.right)

    return TreeModel(root=root, params=TreeParams(criterion="squared_error"),
                     task="regression", n_features=m, importances_raw=imp_raw)
