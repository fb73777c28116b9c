"""Out-of-fold prediction, second-level learners, TTA, and evaluation metrics.

Folds are dealt per map: labeled buildings of each map are shuffled with a
seeded generator and distributed round-robin, so fold sizes within a map
differ by at most one. Buildings whose labels were never human-verified are
marked train-only (fold -1): they join every training split and no validation
fold. An out-of-fold prediction for a building always comes from a model that
never saw that building's label, which is what makes stacking leak-free.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from roofstack.augment import crop_margin, dihedral
from roofstack.errors import DimensionError, FoldError, MetricError, ParameterError, RoofstackError
from roofstack.gbdt import GbdtModel, GbdtParams, gbdt_predict, train_gbdt
from roofstack.geodata import N_CLASSES, Building, BuildingSet
from roofstack.raster import Chip
from roofstack.seeds import derive_seed

Sample = tuple[Building, Any]
PredictFn = Callable[[Sample], np.ndarray]
ModelFactory = Callable[[Sequence[Sample]], PredictFn]

TRAIN_ONLY = -1


@dataclass(frozen=True)
class BaseModel:
    """A first-level predictor: chip in, 5-probability vector out."""

    name: str
    predict_chip: Callable[[Chip], np.ndarray]

    def predict(self, chip: Chip) -> np.ndarray:
        return self.predict_chip(chip)


@dataclass(frozen=True)
class FoldAssignment:
    k: int
    seed: int
    fold: dict[tuple[int, str], int]

    def fold_of(self, b: Building) -> int | None:
        return self.fold.get(b.key)

    def validation_keys(self, f: int) -> set[tuple[int, str]]:
        return {key for key, idx in self.fold.items() if idx == f}


def make_folds(bs: BuildingSet, k: int, seed: int) -> FoldAssignment:
    """Deal each map's labeled buildings into k folds, round-robin after a shuffle.

    Labeled buildings on unverified maps become train-only (fold -1).
    Unlabeled buildings get no fold. A map whose verified labeled buildings
    number fewer than k (but more than zero) cannot be folded and raises
    :class:`FoldError` naming the map.
    """
    if k < 2:
        raise ParameterError(f"fold count must be >= 2, got {k}")
    by_map: dict[int, list[Building]] = {}
    for b in bs:
        if b.label is not None:
            by_map.setdefault(b.map_id, []).append(b)

    fold: dict[tuple[int, str], int] = {}
    for map_id in sorted(by_map):
        labeled = by_map[map_id]
        verified = [b for b in labeled if b.verified]
        for b in labeled:
            if not b.verified:
                fold[b.key] = TRAIN_ONLY
        if not verified:
            continue
        if len(verified) < k:
            raise FoldError(f"map {map_id} has {len(verified)} labeled buildings, fewer than k={k}")
        rng = np.random.default_rng(derive_seed(seed, "folds", map_id))
        order = rng.permutation(len(verified))
        ids = sorted(b.id for b in verified)
        key_of = {b.id: b.key for b in verified}
        for pos, idx in enumerate(order):
            fold[key_of[ids[idx]]] = pos % k
    return FoldAssignment(k=k, seed=seed, fold=fold)


def oof_predict(
    model_factory: ModelFactory,
    folds: FoldAssignment,
    dataset: Sequence[Sample],
    threads: int = 1,
) -> np.ndarray:
    """Out-of-fold probability matrix, one row per dataset sample.

    Fold-f rows come from a model built on every other fold plus the
    train-only buildings. Samples outside any fold (unlabeled buildings) are
    predicted by a model built on all labeled samples.
    """
    n = len(dataset)
    out = np.zeros((n, N_CLASSES), dtype=np.float64)
    fold_of = [folds.fold_of(b) for b, _ in dataset]

    def run_fold(f: int | None) -> tuple[list[int], np.ndarray]:
        if f is None:
            train = [s for s, fo in zip(dataset, fold_of) if fo is not None]
            targets = [i for i, fo in enumerate(fold_of) if fo is None]
        else:
            train = [s for s, fo in zip(dataset, fold_of) if fo is not None and fo != f]
            targets = [i for i, fo in enumerate(fold_of) if fo == f]
        try:
            predict = model_factory(train)
            rows = np.stack([predict(dataset[i]) for i in targets]) if targets else np.zeros((0, N_CLASSES))
        except RoofstackError:
            raise
        except Exception as exc:
            label = "full model" if f is None else f"fold {f}"
            raise RoofstackError(f"base model failed on {label}: {exc}") from exc
        return targets, rows

    jobs: list[int | None] = [f for f in range(folds.k) if any(fo == f for fo in fold_of)]
    if any(fo is None for fo in fold_of):
        jobs.append(None)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run_fold, jobs))
    else:
        results = [run_fold(f) for f in jobs]
    for targets, rows in results:
        for pos, i in enumerate(targets):
            out[i] = rows[pos]
    return out


# ---------------------------------------------------------------------------
# second-level learners

def logistic_loss_grad(weights: np.ndarray, X: np.ndarray, y: np.ndarray, l2: float) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and gradient for a multinomial linear model.

    ``weights`` is ((d + 1), classes); the final row is the intercept and is
    not penalized.
    """
    n = X.shape[0]
    Xb = np.hstack([X, np.ones((n, 1))])
    scores = Xb @ weights
    scores -= scores.max(axis=1, keepdims=True)
    e = np.exp(scores)
    probs = e / e.sum(axis=1, keepdims=True)
    onehot = np.zeros_like(probs)
    onehot[np.arange(n), y] = 1.0
    loss = float(-np.log(np.clip(probs[np.arange(n), y], 1e-15, None)).mean())
    loss += 0.5 * l2 * float((weights[:-1] ** 2).sum())
    grad = Xb.T @ (probs - onehot) / n
    grad[:-1] += l2 * weights[:-1]
    return loss, grad


@dataclass
class LogisticModel:
    weights: np.ndarray  # (d + 1, classes), intercept last

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.weights.shape[0] - 1:
            raise DimensionError(f"feature matrix has shape {X.shape}, model expects (*, {self.weights.shape[0] - 1})")
        Xb = np.hstack([X, np.ones((X.shape[0], 1))])
        scores = Xb @ self.weights
        scores -= scores.max(axis=1, keepdims=True)
        e = np.exp(scores)
        return e / e.sum(axis=1, keepdims=True)


def train_logistic(
    X: np.ndarray,
    y: np.ndarray,
    l2: float = 1e-3,
    epochs: int = 500,
    lr: float = 0.5,
    seed: int = 0,
) -> LogisticModel:
    """Multinomial logistic regression by full-batch gradient descent."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if X.ndim != 2 or X.shape[0] != y.shape[0] or X.shape[0] < 2:
        raise DimensionError(f"bad training shapes X={X.shape}, y={y.shape}")
    if np.unique(y).size < 2:
        from roofstack.errors import DegenerateTargetError

        raise DegenerateTargetError("training labels contain a single class")
    rng = np.random.default_rng(seed)
    weights = rng.normal(0.0, 0.01, size=(X.shape[1] + 1, N_CLASSES))
    for _ in range(epochs):
        _, grad = logistic_loss_grad(weights, X, y, l2)
        weights -= lr * grad
    return LogisticModel(weights=weights)


@dataclass(frozen=True)
class GbdtParamRanges:
    n_rounds: tuple[int, int] = (100, 400)
    max_depth: tuple[int, int] = (2, 5)
    learning_rate: tuple[float, float] = (0.03, 0.3)
    feature_subsample: tuple[float, float] = (0.6, 1.0)
    row_subsample: tuple[float, float] = (0.6, 1.0)
    min_samples_leaf: tuple[int, int] = (1, 20)


def sample_gbdt_params(ranges: GbdtParamRanges, rng: np.random.Generator) -> GbdtParams:
    return GbdtParams(
        n_rounds=int(rng.integers(ranges.n_rounds[0], ranges.n_rounds[1] + 1)),
        max_depth=int(rng.integers(ranges.max_depth[0], ranges.max_depth[1] + 1)),
        learning_rate=float(rng.uniform(*ranges.learning_rate)),
        min_samples_leaf=int(rng.integers(ranges.min_samples_leaf[0], ranges.min_samples_leaf[1] + 1)),
        feature_subsample=float(rng.uniform(*ranges.feature_subsample)),
        row_subsample=float(rng.uniform(*ranges.row_subsample)),
        seed=int(rng.integers(2**63)),
    )


@dataclass
class EnsembleModel:
    members: list[GbdtModel]

    def predict(self, X: np.ndarray) -> np.ndarray:
        # fixed reduction order keeps the average bit-stable under any scheduling
        acc = np.zeros((np.asarray(X).shape[0], N_CLASSES), dtype=np.float64)
        for m in self.members:
            acc += gbdt_predict(m, X)
        return acc / len(self.members)

    def to_json(self) -> str:
        return json.dumps(
            {"kind": "ensemble", "members": [json.loads(m.to_json()) for m in self.members]},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, text: str) -> "EnsembleModel":
        raw = json.loads(text)
        if raw.get("kind") != "ensemble":
            raise ParameterError(f"not an ensemble record: kind={raw.get('kind')!r}")
        members = [GbdtModel.from_json(json.dumps(rec, sort_keys=True)) for rec in raw["members"]]
        return cls(members=members)


def random_param_ensemble(
    X: np.ndarray,
    y: np.ndarray,
    ranges: GbdtParamRanges,
    n_members: int,
    seed: int,
    threads: int = 1,
) -> EnsembleModel:
    """Average of boosted models trained with randomly drawn hyperparameters.

    Parameters are sampled up front from one seeded generator, so the member
    list is independent of training order or thread count.
    """
    if n_members < 1:
        raise ParameterError(f"n_members must be >= 1, got {n_members}")
    rng = np.random.default_rng(seed)
    params = [sample_gbdt_params(ranges, rng) for _ in range(n_members)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            members = list(pool.map(lambda p: train_gbdt(X, y, p), params))
    else:
        members = [train_gbdt(X, y, p) for p in params]
    return EnsembleModel(members=members)


# ---------------------------------------------------------------------------
# test-time augmentation

TTA_MARGINS = (0, 25, 50, 75)


def tta_aggregate(predict: Callable[[Chip], np.ndarray], chip: Chip, margins: Sequence[int] = TTA_MARGINS) -> np.ndarray:
    """Average the predictor over 8 dihedral variants x len(margins) crops.

    With the default four margins that is 32 predictor invocations. The chip
    must have been extracted with at least the largest requested margin.
    """
    if not margins:
        raise ParameterError("tta needs at least one margin")
    if max(margins) > chip.margin:
        raise ParameterError(f"tta margin {max(margins)} exceeds the chip's extraction margin {chip.margin}")
    acc = np.zeros(N_CLASSES, dtype=np.float64)
    count = 0
    for m in margins:
        cropped = crop_margin(chip, (m, m, m, m))
        for k in range(8):
            acc += np.asarray(predict(dihedral(cropped, k)), dtype=np.float64)
            count += 1
    return acc / count


# ---------------------------------------------------------------------------
# metrics

def log_loss(probs: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-probability of the true class.

    Probabilities are clipped below at 1e-15 so a zero never produces inf;
    a certain correct prediction scores exactly 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise MetricError(f"log loss needs a nonempty (n, {N_CLASSES}) matrix, got shape {probs.shape}")
    if probs.shape[0] != y.shape[0]:
        raise DimensionError(f"{probs.shape[0]} prediction rows vs {y.shape[0]} labels")
    p = np.clip(probs[np.arange(len(y)), y], 1e-15, 1.0)
    return float(-np.log(p).mean()) + 0.0


def accuracy(probs: np.ndarray, y: np.ndarray) -> float:
    """Fraction of rows whose argmax matches; ties go to the lowest class index."""
    probs = np.asarray(probs, dtype=np.float64)
    y = np.asarray(y, dtype=np.intp)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise MetricError(f"accuracy needs a nonempty (n, {N_CLASSES}) matrix, got shape {probs.shape}")
    if probs.shape[0] != y.shape[0]:
        raise DimensionError(f"{probs.shape[0]} prediction rows vs {y.shape[0]} labels")
    return float((np.argmax(probs, axis=1) == y).mean())


def per_class_log_loss(probs: np.ndarray, y: np.ndarray) -> list[float | None]:
    """Log loss restricted to each true class; None where a class has no rows."""
    y = np.asarray(y, dtype=np.intp)
    out: list[float | None] = []
    for c in range(N_CLASSES):
        mask = y == c
        out.append(log_loss(probs[mask], y[mask]) if mask.any() else None)
    return out


def metrics_report(probs: np.ndarray, y: np.ndarray) -> dict:
    return {
        "log_loss": log_loss(probs, y),
        "accuracy": accuracy(probs, y),
        "per_class_log_loss": per_class_log_loss(probs, y),
        "n": int(np.asarray(y).shape[0]),
    }
