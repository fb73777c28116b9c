"""Gradient-boosted regression trees for multiclass classification.

Boosting works on softmax scores: initial scores are the class log-priors,
and each round fits one depth-limited regression tree per class to the
softmax gradient residuals (one-hot minus predicted probability). Trees are
grown greedily by variance reduction; leaf values are the mean gradient
target scaled by the learning rate. A second-order leaf weight is available
behind a flag and off by default.

Split search is histogram-based: features are quantile-binned once per
training run (up to 256 bins, so small or discrete features are searched
exactly) and node statistics are accumulated per bin. Zero-gain splits are
accepted, as in standard CART; only pure or indivisible nodes stop early.

Everything is a pure function of (data, params, seed).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from roofstack.errors import DegenerateTargetError, DimensionError, ParameterError
from roofstack.geodata import N_CLASSES

_MAX_BINS = 256


@dataclass(frozen=True)
class GbdtParams:
    n_rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 1
    feature_subsample: float = 1.0
    row_subsample: float = 1.0
    seed: int = 0
    newton_leaf: bool = False

    def __post_init__(self):
        if self.n_rounds < 1:
            raise ParameterError(f"n_rounds must be >= 1, got {self.n_rounds}")
        if self.max_depth < 1:
            raise ParameterError(f"max_depth must be >= 1, got {self.max_depth}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ParameterError(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if self.min_samples_leaf < 1:
            raise ParameterError(f"min_samples_leaf must be >= 1, got {self.min_samples_leaf}")
        for name, v in (("feature_subsample", self.feature_subsample), ("row_subsample", self.row_subsample)):
            if not 0.0 < v <= 1.0:
                raise ParameterError(f"{name} must be in (0, 1], got {v}")


# Trees are stored as parallel arrays; node 0 is the root, leaves have
# feature == -1. Prediction walks all rows level-synchronously.
@dataclass
class _Tree:
    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)

    def new_node(self) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        feat = np.asarray(self.feature, dtype=np.intp)
        thr = np.asarray(self.threshold, dtype=np.float64)
        left = np.asarray(self.left, dtype=np.intp)
        right = np.asarray(self.right, dtype=np.intp)
        val = np.asarray(self.value, dtype=np.float64)
        node = np.zeros(X.shape[0], dtype=np.intp)
        pending = feat[node] >= 0
        while pending.any():
            idx = np.nonzero(pending)[0]
            cur = node[idx]
            go_left = X[idx, feat[cur]] <= thr[cur]
            node[idx] = np.where(go_left, left[cur], right[cur])
            pending[idx] = feat[node[idx]] >= 0
        return val[node]

    def to_record(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"value": self.value[node]}
        return {
            "feature": self.feature[node],
            "threshold": self.threshold[node],
            "left": self.to_record(self.left[node]),
            "right": self.to_record(self.right[node]),
        }

    @classmethod
    def from_record(cls, record: dict) -> "_Tree":
        tree = cls()

        def build(rec: dict) -> int:
            node = tree.new_node()
            if "value" in rec:
                tree.value[node] = float(rec["value"])
            else:
                tree.feature[node] = int(rec["feature"])
                tree.threshold[node] = float(rec["threshold"])
                tree.left[node] = build(rec["left"])
                tree.right[node] = build(rec["right"])
            return node

        build(record)
        return tree


class _Binned:
    """Quantile binning of a feature matrix, shared by every tree of one fit."""

    def __init__(self, X: np.ndarray):
        n, d = X.shape
        self.codes = np.empty((n, d), dtype=np.int32)
        self.cuts: list[np.ndarray] = []
        self.n_bins = np.empty(d, dtype=np.int64)
        for f in range(d):
            vals = X[:, f]
            uniq = np.unique(vals)
            if uniq.size <= _MAX_BINS:
                cuts = (uniq[:-1] + uniq[1:]) / 2.0
            else:
                qs = np.quantile(vals, np.linspace(0.0, 1.0, _MAX_BINS + 1)[1:-1])
                cuts = np.unique(qs)
            self.codes[:, f] = np.searchsorted(cuts, vals, side="right")
            self.cuts.append(cuts)
            self.n_bins[f] = cuts.size + 1
        self.max_bins = int(self.n_bins.max())


def _fit_tree(
    binned: _Binned,
    rows: np.ndarray,
    feats: np.ndarray,
    g: np.ndarray,
    h: np.ndarray | None,
    params: GbdtParams,
) -> _Tree:
    """Grow one tree on the given row/feature subset of the binned matrix."""
    tree = _Tree()
    nf = feats.shape[0]
    width = binned.max_bins
    # node-local copies: codes_sub[i, j] is the bin of dataset row rows[i],
    # feature feats[j]; flat adds a per-feature offset so one bincount fills
    # every histogram at once
    codes_sub = binned.codes[np.ix_(rows, feats)]
    flat = codes_sub.astype(np.int64) + np.arange(nf, dtype=np.int64)[None, :] * width
    g_rows = g[rows]
    h_rows = h[rows] if h is not None else None

    # bins at or past a feature's last cut can never split
    splittable = np.zeros((nf, width - 1), dtype=bool) if width > 1 else np.zeros((nf, 0), dtype=bool)
    for j, f in enumerate(feats):
        splittable[j, : binned.n_bins[f] - 1] = True

    def leaf_value(idx: np.ndarray) -> float:
        if params.newton_leaf and h_rows is not None:
            denom = h_rows[idx].sum()
            return float(g_rows[idx].sum() / denom) if denom > 1e-12 else 0.0
        return float(g_rows[idx].mean())

    def grow(idx: np.ndarray, depth: int) -> int:
        node = tree.new_node()
        n_node = idx.shape[0]
        targets = g_rows[idx]
        if (
            depth >= params.max_depth
            or n_node < 2 * params.min_samples_leaf
            or targets.max() == targets.min()
        ):
            tree.value[node] = leaf_value(idx)
            return node

        sel = flat[idx].ravel()
        hist_g = np.bincount(sel, weights=np.repeat(targets, nf), minlength=nf * width).reshape(nf, width)
        hist_n = np.bincount(sel, minlength=nf * width).reshape(nf, width)
        cum_g = np.cumsum(hist_g, axis=1)[:, :-1]
        cum_n = np.cumsum(hist_n, axis=1)[:, :-1]
        tot_g = targets.sum()

        left_n = cum_n
        right_n = n_node - cum_n
        valid = splittable & (left_n >= params.min_samples_leaf) & (right_n >= params.min_samples_leaf)
        if not valid.any():
            tree.value[node] = leaf_value(idx)
            return node
        with np.errstate(divide="ignore", invalid="ignore"):
            gain = cum_g**2 / left_n + (tot_g - cum_g) ** 2 / right_n - tot_g**2 / n_node
        gain = np.where(valid, gain, -np.inf)
        best = int(np.argmax(gain))  # lowest (feature, bin) wins ties
        j, b = divmod(best, width - 1)
        f = int(feats[j])
        thr = float(binned.cuts[f][b])

        go_left = codes_sub[idx, j] <= b
        li = grow(idx[go_left], depth + 1)
        ri = grow(idx[~go_left], depth + 1)
        tree.feature[node] = f
        tree.threshold[node] = thr
        tree.left[node] = li
        tree.right[node] = ri
        return node

    grow(np.arange(rows.shape[0], dtype=np.intp), 0)
    return tree


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class GbdtModel:
    """Per-class tree lists plus the log-prior initial scores."""

    init_scores: np.ndarray
    trees: list[list[_Tree]]
    learning_rate: float
    n_features: int
    params: GbdtParams

    def predict_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DimensionError(f"feature matrix has shape {X.shape}, model expects (*, {self.n_features})")
        scores = np.tile(self.init_scores, (X.shape[0], 1))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                scores[:, c] += self.learning_rate * tree.predict(X)
        return scores

    def to_json(self) -> str:
        payload = {
            "kind": "gbdt",
            "classes": N_CLASSES,
            "n_features": self.n_features,
            "learning_rate": self.learning_rate,
            "init_scores": [float(v) for v in self.init_scores],
            "params": {
                "n_rounds": self.params.n_rounds,
                "max_depth": self.params.max_depth,
                "learning_rate": self.params.learning_rate,
                "min_samples_leaf": self.params.min_samples_leaf,
                "feature_subsample": self.params.feature_subsample,
                "row_subsample": self.params.row_subsample,
                "seed": self.params.seed,
                "newton_leaf": self.params.newton_leaf,
            },
            "trees": [[tree.to_record() for tree in round_trees] for round_trees in self.trees],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GbdtModel":
        raw = json.loads(text)
        if raw.get("kind") != "gbdt":
            raise ParameterError(f"not a gbdt model record: kind={raw.get('kind')!r}")
        params = GbdtParams(**raw["params"])
        trees = [[_Tree.from_record(rec) for rec in round_trees] for round_trees in raw["trees"]]
        return cls(
            init_scores=np.asarray(raw["init_scores"], dtype=np.float64),
            trees=trees,
            learning_rate=float(raw["learning_rate"]),
            n_features=int(raw["n_features"]),
            params=params,
        )


def train_gbdt(X: np.ndarray, y: np.ndarray, params: GbdtParams) -> GbdtModel:
    """Fit the boosted model. Deterministic given (X, y, params.seed)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2:
        raise DimensionError(f"X must be 2-D, got shape {X.shape}")
    if X.shape[0] != y.shape[0]:
        raise DimensionError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    if X.shape[0] < 2:
        raise DimensionError(f"need at least 2 training rows, got {X.shape[0]}")
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateTargetError(f"training labels contain a single class ({classes.tolist()})")
    if y.min() < 0 or y.max() >= N_CLASSES:
        raise ParameterError(f"labels must be in [0, {N_CLASSES}), got range [{y.min()}, {y.max()}]")

    n, d = X.shape
    rng = np.random.default_rng(params.seed)
    priors = np.bincount(y, minlength=N_CLASSES).astype(np.float64) / n
    init = np.log(np.clip(priors, 1e-12, None))
    onehot = np.zeros((n, N_CLASSES), dtype=np.float64)
    onehot[np.arange(n), y] = 1.0

    binned = _Binned(X)
    n_feat = max(1, int(round(params.feature_subsample * d)))
    n_rows = min(n, max(2 * params.min_samples_leaf, int(round(params.row_subsample * n))))

    scores = np.tile(init, (n, 1))
    all_trees: list[list[_Tree]] = []
    for _ in range(params.n_rounds):
        probs = _softmax(scores)
        grad = onehot - probs
        if params.row_subsample < 1.0:
            rows = np.sort(rng.choice(n, size=n_rows, replace=False))
        else:
            rows = np.arange(n, dtype=np.intp)
        round_trees: list[_Tree] = []
        for c in range(N_CLASSES):
            if params.feature_subsample < 1.0:
                feats = np.sort(rng.choice(d, size=n_feat, replace=False))
            else:
                feats = np.arange(d, dtype=np.intp)
            hess = probs[rows, c] * (1.0 - probs[rows, c]) if params.newton_leaf else None
            hess_full = None
            if hess is not None:
                hess_full = np.zeros(n, dtype=np.float64)
                hess_full[rows] = hess
            tree = _fit_tree(binned, rows, feats, grad[:, c], hess_full, params)
            round_trees.append(tree)
            scores[:, c] += params.learning_rate * tree.predict(X)
        all_trees.append(round_trees)

    return GbdtModel(
        init_scores=init,
        trees=all_trees,
        learning_rate=params.learning_rate,
        n_features=d,
        params=params,
    )


def gbdt_predict(model: GbdtModel, X: np.ndarray) -> np.ndarray:
    """Probability matrix; rows are softmax of the accumulated scores."""
    return _softmax(model.predict_scores(np.asarray(X, dtype=np.float64)))
