"""Decision-tree and logistic-regression classifiers with class weighting.

Both trainers are deterministic: the tree scans features in schema order and
keeps the first best split, and gradient descent is full-batch.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

MODEL_FORMAT = "soar-model"
MODEL_VERSION = 1

DECISION_TREE = "DECISION_TREE"
LOGISTIC_REGRESSION = "LOGISTIC_REGRESSION"


class LearnerError(Exception):
    pass


class SingleClass(LearnerError):
    pass


class SchemaMismatch(LearnerError):
    pass


class UntrainedModel(LearnerError):
    pass


class NonFiniteLoss(LearnerError):
    pass


@dataclass
class Dataset:
    names: list[str]
    kinds: list[str]
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.y), len(self.names))
        self.y = np.asarray(self.y, dtype=int)
        if len(self.kinds) != len(self.names):
            raise SchemaMismatch("one kind per feature name required")
        bad = set(self.kinds) - {"numeric", "categorical"}
        if bad:
            raise SchemaMismatch(f"unknown feature kinds {sorted(bad)}")
        if len(self.y) and not set(np.unique(self.y)) <= {0, 1}:
            raise LearnerError("labels must be 0/1")

    @property
    def fingerprint(self) -> str:
        return schema_fingerprint(self.names, self.kinds)

    def __len__(self):
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(self.names, self.kinds, self.X[idx], self.y[idx])

    def split(self, holdout: float = 0.25, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        """Stratified shuffle split into (train, test)."""
        rng = np.random.default_rng(seed)
        test_idx = []
        for c in (0, 1):
            members = np.flatnonzero(self.y == c)
            rng.shuffle(members)
            test_idx.extend(members[: int(round(len(members) * holdout))])
        mask = np.zeros(len(self.y), dtype=bool)
        mask[test_idx] = True
        return self.subset(~mask), self.subset(mask)

    def to_csv(self, path, label_name: str = "label") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.names + [label_name])
            for row, label in zip(self.X, self.y):
                w.writerow([_fmt(v) for v in row] + [int(label)])


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def schema_fingerprint(names: Sequence[str], kinds: Sequence[str]) -> str:
    text = "|".join(f"{n}:{k}" for n, k in zip(names, kinds))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def kfold_indices(n: int, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    order = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(order, k)
    return [(np.concatenate(folds[:i] + folds[i + 1:]), folds[i]) for i in range(k)]


def class_weights(labels) -> dict[int, float]:
    """Balanced weights: N / (2 * count_c)."""
    y = np.asarray(labels, dtype=int)
    counts = {c: int(np.sum(y == c)) for c in (0, 1)}
    if min(counts.values()) == 0:
        raise SingleClass("both classes must be present")
    n = len(y)
    return {c: n / (2 * counts[c]) for c in (0, 1)}


def _sample_weights(y: np.ndarray, weights: dict[int, float] | None) -> np.ndarray:
    if weights is None:
        return np.ones(len(y))
    return np.where(y == 1, weights[1], weights[0]).astype(float)


@dataclass
class ClassifierModel:
    family: str
    names: list[str]
    kinds: list[str]
    class_weights: dict[int, float]
    params: dict
    task: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def fingerprint(self) -> str:
        return schema_fingerprint(self.names, self.kinds)

    @property
    def trained(self) -> bool:
        return bool(self.params)

    def check_schema(self, names: Sequence[str], kinds: Sequence[str] | None = None) -> None:
        if list(names) != self.names or (kinds is not None and list(kinds) != self.kinds):
            raise SchemaMismatch(f"model expects {self.names}, got {list(names)}")

    def predict(self, X) -> np.ndarray:
        if not self.trained:
            raise UntrainedModel(self.family)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != len(self.names):
            raise SchemaMismatch(f"expected {len(self.names)} features, got {X.shape[1]}")
        if self.family == DECISION_TREE:
            return _tree_predict(self.params["nodes"], X)
        return (_lr_scores(self.params, X) > 0).astype(int)

    def predict_one(self, row: Sequence[float]) -> int:
        return int(self.predict([row])[0])

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "family": self.family,
            "task": self.task,
            "schema": {"names": self.names, "kinds": self.kinds},
            "fingerprint": self.fingerprint,
            "class_weights": {str(k): v for k, v in sorted(self.class_weights.items())},
            "params": self.params,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise SchemaMismatch(f"not a {MODEL_FORMAT} v{MODEL_VERSION} document")
        model = cls(
            family=d["family"],
            names=list(d["schema"]["names"]),
            kinds=list(d["schema"]["kinds"]),
            class_weights={int(k): float(v) for k, v in d["class_weights"].items()},
            params=d["params"],
            task=d.get("task", ""),
            meta=d.get("meta", {}),
        )
        if model.fingerprint != d["fingerprint"]:
            raise SchemaMismatch("fingerprint does not match schema")
        return model

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "ClassifierModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- decision tree -----------------------------------------------------------


def _gini(w0: np.ndarray, w1: np.ndarray) -> np.ndarray:
    total = w0 + w1
    with np.errstate(invalid="ignore", divide="ignore"):
        p0 = np.where(total > 0, w0 / total, 0.0)
    p1 = 1.0 - p0
    return total * (1.0 - p0 * p0 - p1 * p1)


def _best_split(X, y, w, min_leaf):
    """Return (feature, threshold, weighted impurity) of the best split, or None."""
    n, d = X.shape
    parent = float(_gini(np.array([w[y == 0].sum()]), np.array([w[y == 1].sum()]))[0])
    best = None
    best_imp = parent
    for j in range(d):
        order = np.argsort(X[:, j], kind="stable")
        xs = X[order, j]
        w0 = np.cumsum(np.where(y[order] == 0, w[order], 0.0))
        w1 = np.cumsum(np.where(y[order] == 1, w[order], 0.0))
        # candidate cut after position i (left = first i+1 samples)
        pos = np.flatnonzero(xs[1:] != xs[:-1])
        pos = pos[(pos + 1 >= min_leaf) & (n - pos - 1 >= min_leaf)]
        if len(pos) == 0:
            continue
        lw0, lw1 = w0[pos], w1[pos]
        rw0, rw1 = w0[-1] - lw0, w1[-1] - lw1
        imp = _gini(lw0, lw1) + _gini(rw0, rw1)
        k = int(np.argmin(imp))
        # strict improvement keeps the earliest feature/threshold on ties
        if imp[k] < best_imp - 1e-12:
            best_imp = float(imp[k])
            i = pos[k]
            best = (j, float((xs[i] + xs[i + 1]) / 2.0), best_imp)
    return best


def train_tree(ds: Dataset, weights: dict[int, float] | None = None, depth_cap: int = 12,
               min_leaf: int = 5, task: str = "") -> ClassifierModel:
    """Greedy CART on weighted Gini impurity.

    ``weights`` maps class to a per-sample multiplier; None trains unweighted.
    """
    if len(ds) < 2 or len(np.unique(ds.y)) < 2:
        raise SingleClass("training requires both classes")
    w = _sample_weights(ds.y, weights)
    nodes: list[dict] = []

    def grow(idx: np.ndarray, depth: int) -> int:
        y = ds.y[idx]
        counts = [float(w[idx][y == 0].sum()), float(w[idx][y == 1].sum())]
        node = {"feature": -1, "threshold": 0.0, "left": -1, "right": -1,
                "counts": counts, "n": int(len(idx))}
        at = len(nodes)
        nodes.append(node)
        if depth >= depth_cap or len(idx) < 2 * min_leaf or min(counts) == 0:
            return at
        split = _best_split(ds.X[idx], y, w[idx], min_leaf)
        if split is None:
            return at
        j, thr, _ = split
        mask = ds.X[idx, j] <= thr
        node["feature"], node["threshold"] = j, thr
        node["left"] = grow(idx[mask], depth + 1)
        node["right"] = grow(idx[~mask], depth + 1)
        return at

    grow(np.arange(len(ds)), 0)
    return ClassifierModel(
        DECISION_TREE, list(ds.names), list(ds.kinds),
        dict(weights) if weights else {0: 1.0, 1: 1.0},
        {"nodes": nodes, "depth_cap": depth_cap, "min_leaf": min_leaf}, task)


def _leaf_class(counts) -> int:
    return 1 if counts[1] > counts[0] else 0


def _tree_predict(nodes: list[dict], X: np.ndarray) -> np.ndarray:
    out = np.empty(len(X), dtype=int)
    for r, row in enumerate(X):
        k = 0
        while nodes[k]["feature"] >= 0:
            nd = nodes[k]
            k = nd["left"] if row[nd["feature"]] <= nd["threshold"] else nd["right"]
        out[r] = _leaf_class(nodes[k]["counts"])
    return out


def tree_is_well_formed(nodes: list[dict]) -> bool:
    seen = set()
    stack = [0]
    while stack:
        k = stack.pop()
        if k in seen or not 0 <= k < len(nodes):
            return False
        seen.add(k)
        nd = nodes[k]
        if nd["feature"] >= 0:
            if nd["left"] < 0 or nd["right"] < 0:
                return False
            stack.extend([nd["left"], nd["right"]])
    return len(seen) == len(nodes)


# -- logistic regression -----------------------------------------------------


def one_hot_layout(names: Sequence[str], kinds: Sequence[str], X: np.ndarray) -> list[tuple[int, list[float] | None]]:
    """Per input column: (index, None) for numerics, (index, sorted levels) for categoricals."""
    layout = []
    for j, kind in enumerate(kinds):
        if kind == "categorical":
            layout.append((j, sorted(float(v) for v in np.unique(X[:, j]))))
        else:
            layout.append((j, None))
    return layout


def _expand(X: np.ndarray, layout) -> np.ndarray:
    cols = []
    for j, levels in layout:
        if levels is None:
            cols.append(X[:, j])
        else:
            for lv in levels:
                cols.append((X[:, j] == lv).astype(float))
    return np.column_stack(cols) if cols else np.zeros((len(X), 0))


def _scale(Z: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    span = np.where(hi > lo, hi - lo, 1.0)
    return (Z - lo) / span


def _design(params: dict, X: np.ndarray) -> np.ndarray:
    Z = _expand(X, params["layout"])
    return _scale(Z, np.asarray(params["min"]), np.asarray(params["max"]))


def _lr_scores(params: dict, X: np.ndarray) -> np.ndarray:
    return _design(params, X) @ np.asarray(params["weights"]) + params["bias"]


def weighted_log_loss(coef: np.ndarray, Z: np.ndarray, y: np.ndarray, sw: np.ndarray) -> float:
    """Mean weighted negative log-likelihood; ``coef`` is weights followed by bias.

    Probabilities are evaluated in plain float arithmetic, so a confidently
    wrong prediction beyond float precision yields an infinite loss.
    """
    z = Z @ coef[:-1] + coef[-1]
    with np.errstate(over="ignore", divide="ignore"):
        p1 = 1.0 / (1.0 + np.exp(-z))
        p_true = np.where(y == 1, p1, 1.0 - p1)
        return float(-(sw * np.log(p_true)).sum() / sw.sum())


def log_loss_gradient(coef: np.ndarray, Z: np.ndarray, y: np.ndarray, sw: np.ndarray) -> np.ndarray:
    z = Z @ coef[:-1] + coef[-1]
    with np.errstate(over="ignore"):
        p1 = 1.0 / (1.0 + np.exp(-z))
    r = sw * (p1 - y) / sw.sum()
    return np.concatenate([Z.T @ r, [r.sum()]])


def train_logistic(ds: Dataset, weights: dict[int, float] | None = None, epochs: int = 2000,
                   lr: float = 2.0, task: str = "", seed: int = 0) -> ClassifierModel:
    """Full-batch gradient descent on weighted log-loss over min-max scaled inputs.

    ``seed`` is recorded for reproducibility; full-batch descent does not shuffle.
    """
    if len(ds) < 2 or len(np.unique(ds.y)) < 2:
        raise SingleClass("training requires both classes")
    layout = one_hot_layout(ds.names, ds.kinds, ds.X)
    Z = _expand(ds.X, layout)
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    Z = _scale(Z, lo, hi)
    sw = _sample_weights(ds.y, weights)
    coef = np.zeros(Z.shape[1] + 1)
    # start from the weighted class prior so an untrained model predicts the majority
    coef[-1] = math.log(sw[ds.y == 1].sum() / sw[ds.y == 0].sum())
    y = ds.y.astype(float)
    loss = weighted_log_loss(coef, Z, y, sw)
    for epoch in range(epochs):
        coef = coef - lr * log_loss_gradient(coef, Z, y, sw)
        loss = weighted_log_loss(coef, Z, y, sw)
        if not math.isfinite(loss) or not np.all(np.isfinite(coef)):
            raise NonFiniteLoss(f"loss diverged at epoch {epoch} with lr={lr}; try a lower learning rate")
    params = {
        "layout": [[j, levels] for j, levels in layout],
        "min": lo.tolist(),
        "max": hi.tolist(),
        "weights": coef[:-1].tolist(),
        "bias": float(coef[-1]),
        "epochs": epochs,
        "lr": lr,
        "seed": seed,
        "final_loss": loss,
    }
    return ClassifierModel(LOGISTIC_REGRESSION, list(ds.names), list(ds.kinds),
                           dict(weights) if weights else {0: 1.0, 1: 1.0}, params, task)


# -- metrics -----------------------------------------------------------------


@dataclass
class Metrics:
    tp: int
    fp: int
    fn: int
    tn: int
    accuracy: float
    precision: float
    recall: float
    f_score: float
    undefined: tuple[str, ...] = ()

    def table(self) -> str:
        lines = [
            f"{'Accuracy':<10} {self.accuracy:8.2f}",
            f"{'Precision':<10} {self.precision:8.2f}",
            f"{'Recall':<10} {self.recall:8.2f}",
            f"{'F-Score':<10} {self.f_score:8.2f}",
            f"confusion  TP={self.tp} FP={self.fp} FN={self.fn} TN={self.tn}",
        ]
        if self.undefined:
            lines.append("undefined (reported as 0): " + ", ".join(self.undefined))
        return "\n".join(lines)


def metrics_from_counts(tp: int, fp: int, fn: int, tn: int) -> Metrics:
    undefined = []
    n = tp + fp + fn + tn
    accuracy = 100.0 * (tp + tn) / n if n else 0.0
    if tp + fp:
        precision = 100.0 * tp / (tp + fp)
    else:
        precision = 0.0
        undefined.append("precision")
    if tp + fn:
        recall = 100.0 * tp / (tp + fn)
    else:
        recall = 0.0
        undefined.append("recall")
    if precision + recall:
        f = 2 * precision * recall / (precision + recall)
    else:
        f = 0.0
        undefined.append("f_score")
    return Metrics(tp, fp, fn, tn, accuracy, precision, recall, f, tuple(undefined))


def score(y_true, y_pred) -> Metrics:
    t = np.asarray(y_true, dtype=int)
    p = np.asarray(y_pred, dtype=int)
    return metrics_from_counts(int(np.sum((p == 1) & (t == 1))), int(np.sum((p == 1) & (t == 0))),
                               int(np.sum((p == 0) & (t == 1))), int(np.sum((p == 0) & (t == 0))))


def evaluate(model: ClassifierModel, ds: Dataset) -> Metrics:
    model.check_schema(ds.names, ds.kinds)
    return score(ds.y, model.predict(ds.X))
