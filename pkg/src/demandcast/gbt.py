"""Gradient-boosted regression trees with Poisson and squared losses.

Trees are grown depth-first with exact greedy splits on presorted columns:
every midpoint between distinct feature values is scored by the second-order
gain, with missing values tried on both sides of each candidate split. The
Poisson loss uses a log link, so raw scores live in log space and forecasts
exp(raw) are strictly positive.

Determinism contract: ties between candidate splits break toward the lowest
feature index, then the lowest threshold, then routing missing values left.
Training is strictly sequential over rounds.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import FeatureMatrix

BASE_EPS = 1e-8


def grad_hess(loss: str, y: np.ndarray, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-row gradient and hessian of the loss at raw score F.

    poisson (log link): g = e^F - y, h = e^F; squared: g = F - y, h = 1.
    """
    y = np.asarray(y, dtype=float)
    raw = np.asarray(raw, dtype=float)
    if not (np.isfinite(y).all() and np.isfinite(raw).all()):
        raise ValueError("grad_hess requires finite targets and scores")
    if loss == "poisson":
        if (y < 0).any():
            raise ValueError("poisson loss requires non-negative targets")
        mu = np.exp(raw)
        return mu - y, mu
    if loss == "squared":
        return raw - y, np.ones_like(raw)
    raise ValueError(f"unknown loss {loss!r}")


def loss_value(loss: str, y: np.ndarray, raw: np.ndarray) -> float:
    """Mean per-row loss; the quantity tracked for early stopping."""
    y = np.asarray(y, dtype=float)
    raw = np.asarray(raw, dtype=float)
    if loss == "poisson":
        return float(np.mean(np.exp(raw) - y * raw))
    if loss == "squared":
        return float(np.mean(0.5 * (raw - y) ** 2))
    raise ValueError(f"unknown loss {loss!r}")


def leaf_weight(g_sum: float, h_sum: float, reg_lambda: float) -> float:
    """Second-order optimal leaf value -G / (H + lambda)."""
    denom = h_sum + reg_lambda
    if denom <= 0:
        raise ValueError(f"H + lambda must be positive, got {denom}")
    return -g_sum / denom


@dataclass
class SplitCandidate:
    threshold: float
    gain: float          # gain net of min_split_loss
    default_left: bool


def best_split(
    values: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    reg_lambda: float,
    min_split_loss: float,
) -> SplitCandidate | None:
    """Best threshold on one feature column, or None if no split helps.

    values/g/h are the node's rows in row order; NaN values are missing and
    are routed left or right, whichever scores better (left on ties). The
    returned gain already has min_split_loss subtracted; None when it is
    not positive.
    """
    g_total = float(np.cumsum(g)[-1])
    h_total = float(np.cumsum(h)[-1])
    present = np.isfinite(values)
    if not present.any():
        return None
    g_miss = float(np.cumsum(g[~present])[-1]) if not present.all() else 0.0
    h_miss = float(np.cumsum(h[~present])[-1]) if not present.all() else 0.0
    vals = values[present]
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    cg = np.cumsum(g[present][order])
    ch = np.cumsum(h[present][order])
    boundary = np.flatnonzero(sv[:-1] < sv[1:])
    if boundary.size == 0:
        return None
    thresholds = (sv[boundary] + sv[boundary + 1]) / 2.0
    ok = sv[boundary] < thresholds  # midpoint can collapse onto the left value
    boundary, thresholds = boundary[ok], thresholds[ok]
    if boundary.size == 0:
        return None

    base = g_total * g_total / (h_total + reg_lambda)

    def net_gain(gl: np.ndarray, hl: np.ndarray) -> np.ndarray:
        gr = g_total - gl
        hr = h_total - hl
        return (
            0.5 * (gl * gl / (hl + reg_lambda) + gr * gr / (hr + reg_lambda) - base)
            - min_split_loss
        )

    with np.errstate(invalid="ignore", divide="ignore"):
        gain_left = net_gain(cg[boundary] + g_miss, ch[boundary] + h_miss)
        gain_right = net_gain(cg[boundary], ch[boundary])
    interleaved = np.empty(2 * boundary.size)
    interleaved[0::2] = gain_left
    interleaved[1::2] = gain_right
    # hessian sums can underflow to 0 with reg_lambda 0; those candidates are
    # undefined and must not shadow finite ones in the argmax
    interleaved[np.isnan(interleaved)] = -np.inf
    best = int(np.argmax(interleaved))
    if not interleaved[best] > 0:
        return None
    return SplitCandidate(
        threshold=float(thresholds[best // 2]),
        gain=float(interleaved[best]),
        default_left=best % 2 == 0,
    )


@dataclass
class TreeNode:
    feature: int = -1       # -1 marks a leaf
    threshold: float = 0.0
    default_left: bool = True
    left: int = -1
    right: int = -1
    weight: float = 0.0
    gain: float = 0.0       # raw split gain, >= min_split_loss on internals

    @property
    def is_leaf(self) -> bool:
        return self.feature < 0


@dataclass
class Tree:
    nodes: list[TreeNode] = field(default_factory=list)

    def apply(self, x: np.ndarray) -> np.ndarray:
        """Leaf weight reached by each row of x."""
        out = np.empty(x.shape[0])
        stack: list[tuple[int, np.ndarray]] = [(0, np.arange(x.shape[0]))]
        while stack:
            idx, rows = stack.pop()
            node = self.nodes[idx]
            if node.is_leaf:
                out[rows] = node.weight
                continue
            col = x[rows, node.feature]
            go_left = col < node.threshold
            if node.default_left:
                go_left |= np.isnan(col)
            stack.append((node.left, rows[go_left]))
            stack.append((node.right, rows[~go_left]))
        return out

    @property
    def depth(self) -> int:
        depths = {0: 0}
        best = 0
        for idx, node in enumerate(self.nodes):
            d = depths[idx]
            best = max(best, d)
            if not node.is_leaf:
                depths[node.left] = d + 1
                depths[node.right] = d + 1
        return best


@dataclass
class TrainParams:
    loss: str = "poisson"
    learning_rate: float = 0.1
    max_depth: int = 6
    rounds: int = 100
    min_split_loss: float = 0.0
    reg_lambda: float = 1.0
    early_stop_patience: int = 50

    @classmethod
    def from_config(cls, config) -> "TrainParams":
        return cls(
            loss=config.loss,
            learning_rate=config.learning_rate,
            max_depth=config.max_depth,
            rounds=config.rounds,
            min_split_loss=config.min_split_loss,
            reg_lambda=config.reg_lambda,
            early_stop_patience=config.early_stop_patience,
        )


def fit_tree(
    x: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    max_depth: int,
    reg_lambda: float,
    min_split_loss: float,
    feature_sampler=None,
) -> Tree:
    """Grow one tree depth-first on the given gradients.

    feature_sampler, when set, returns the (ascending) candidate feature
    indices for each split; bagging uses it for per-split column subsampling.
    """
    n_features = x.shape[1]
    tree = Tree()

    def grow(rows: np.ndarray, depth: int) -> int:
        idx = len(tree.nodes)
        tree.nodes.append(TreeNode())
        node = tree.nodes[idx]
        g_sum = float(np.cumsum(g[rows])[-1])
        h_sum = float(np.cumsum(h[rows])[-1])
        best: SplitCandidate | None = None
        best_feature = -1
        if depth < max_depth and rows.size >= 2:
            features = range(n_features) if feature_sampler is None else feature_sampler(n_features)
            for j in features:
                cand = best_split(x[rows, j], g[rows], h[rows], reg_lambda, min_split_loss)
                if cand is not None and (best is None or cand.gain > best.gain):
                    best = cand
                    best_feature = j
        if best is None:
            node.weight = leaf_weight(g_sum, h_sum, reg_lambda)
            return idx
        node.feature = best_feature
        node.threshold = best.threshold
        node.default_left = best.default_left
        node.gain = best.gain + min_split_loss
        col = x[rows, best_feature]
        go_left = col < best.threshold
        if best.default_left:
            go_left |= np.isnan(col)
        node.left = grow(rows[go_left], depth + 1)
        node.right = grow(rows[~go_left], depth + 1)
        return idx

    grow(np.arange(x.shape[0]), 0)
    return tree


@dataclass
class BoostedModel:
    """Fitted ensemble; prediction uses trees[0..best_round) only."""

    loss: str
    base_score: float
    learning_rate: float
    feature_names: list[str]
    trees: list[Tree]
    best_round: int
    train_loss: list[float] = field(default_factory=list, repr=False)
    valid_loss: list[float] = field(default_factory=list, repr=False)

    def predict_raw(self, x: np.ndarray) -> np.ndarray:
        raw = np.full(x.shape[0], self.base_score)
        for tree in self.trees[: self.best_round]:
            raw += self.learning_rate * tree.apply(x)
        return raw

    def predict_array(self, x: np.ndarray) -> np.ndarray:
        raw = self.predict_raw(x)
        return np.exp(raw) if self.loss == "poisson" else raw


def train(
    matrix: FeatureMatrix,
    params: TrainParams,
    valid: FeatureMatrix | None = None,
) -> BoostedModel:
    """Boost up to params.rounds trees with early stopping on valid loss.

    Loss histories are recorded per round starting from the base-only model;
    best_round is the first round attaining the minimum validation loss.
    """
    if matrix.n_rows == 0:
        raise ValueError("cannot train on an empty matrix")
    if matrix.targets is None:
        raise ValueError("training matrix has no targets")
    if valid is not None and valid.columns != matrix.columns:
        raise ValueError("train and validation matrices must share the feature schema")
    if valid is not None and valid.targets is None:
        raise ValueError("validation matrix has no targets")
    y = matrix.targets
    if params.loss == "poisson":
        if (y < 0).any():
            raise ValueError("poisson loss requires non-negative targets")
        base = math.log(float(y.mean()) + BASE_EPS)
    else:
        base = float(y.mean())

    raw = np.full(matrix.n_rows, base)
    raw_valid = np.full(valid.n_rows, base) if valid is not None else None
    train_hist = [loss_value(params.loss, y, raw)]
    valid_hist = []
    if valid is not None:
        valid_hist.append(loss_value(params.loss, valid.targets, raw_valid))
    trees: list[Tree] = []
    best_valid = valid_hist[0] if valid_hist else math.inf
    best_round = 0
    stale = 0
    for _ in range(params.rounds):
        g, h = grad_hess(params.loss, y, raw)
        tree = fit_tree(
            matrix.X, g, h, params.max_depth, params.reg_lambda, params.min_split_loss
        )
        trees.append(tree)
        raw = raw + params.learning_rate * tree.apply(matrix.X)
        train_hist.append(loss_value(params.loss, y, raw))
        if valid is not None:
            raw_valid = raw_valid + params.learning_rate * tree.apply(valid.X)
            current = loss_value(params.loss, valid.targets, raw_valid)
            valid_hist.append(current)
            if current < best_valid:
                best_valid = current
                best_round = len(trees)
                stale = 0
            else:
                stale += 1
                if stale >= params.early_stop_patience:
                    break
    if valid is None:
        best_round = len(trees)
    return BoostedModel(
        loss=params.loss,
        base_score=base,
        learning_rate=params.learning_rate,
        feature_names=list(matrix.columns),
        trees=trees,
        best_round=best_round,
        train_loss=train_hist,
        valid_loss=valid_hist,
    )


def predict(model: BoostedModel, matrix: FeatureMatrix) -> np.ndarray:
    """Forecast per row; raises if the matrix schema differs from training."""
    if matrix.columns != model.feature_names:
        raise ValueError(
            f"feature schema mismatch: model expects {model.feature_names}, "
            f"matrix has {matrix.columns}"
        )
    return model.predict_array(matrix.X)


@dataclass
class ForestParams:
    n_trees: int = 100
    max_depth: int = 64
    bootstrap: bool = True
    feature_subsample: bool = True
    reg_lambda: float = 0.0
    min_split_loss: float = 0.0


@dataclass
class ForestModel:
    feature_names: list[str]
    trees: list[Tree]

    def predict_array(self, x: np.ndarray) -> np.ndarray:
        total = np.zeros(x.shape[0])
        for tree in self.trees:
            total += tree.apply(x)
        return total / len(self.trees)


def train_forest(matrix: FeatureMatrix, params: ForestParams, seed: int) -> ForestModel:
    """Bagged full-depth regression trees (squared loss, mean leaves).

    Each tree sees a bootstrap resample and sqrt(p) random features per
    split; both draws come from one seeded generator, so results are
    reproducible.
    """
    if matrix.n_rows == 0:
        raise ValueError("cannot train on an empty matrix")
    if matrix.targets is None:
        raise ValueError("training matrix has no targets")
    rng = np.random.default_rng(seed)
    n = matrix.n_rows
    p = matrix.X.shape[1]
    n_sub = max(1, int(math.isqrt(p)))
    trees: list[Tree] = []
    for _ in range(params.n_trees):
        rows = np.sort(rng.integers(0, n, size=n)) if params.bootstrap else np.arange(n)
        x = matrix.X[rows]
        y = matrix.targets[rows]
        sampler = None
        if params.feature_subsample and n_sub < p:
            def sampler(n_features, _rng=rng):
                return np.sort(_rng.choice(n_features, size=n_sub, replace=False))
        trees.append(
            fit_tree(
                x,
                -y,
                np.ones_like(y),
                params.max_depth,
                params.reg_lambda,
                params.min_split_loss,
                feature_sampler=sampler,
            )
        )
    return ForestModel(feature_names=list(matrix.columns), trees=trees)


SERIAL_VERSION = 1


def model_to_json(model: BoostedModel) -> str:
    """Versioned text form of a boosted model; round-trips bit-exactly."""
    doc = {
        "version": SERIAL_VERSION,
        "loss": model.loss,
        "base_score": model.base_score,
        "learning_rate": model.learning_rate,
        "best_round": model.best_round,
        "feature_names": model.feature_names,
        "trees": [
            [
                [n.feature, n.threshold, int(n.default_left), n.left, n.right, n.weight, n.gain]
                for n in tree.nodes
            ]
            for tree in model.trees
        ],
    }
    return json.dumps(doc)


def model_from_json(text: str) -> BoostedModel:
    doc = json.loads(text)
    if doc.get("version") != SERIAL_VERSION:
        raise ValueError(f"unsupported model version: {doc.get('version')}")
    trees = [
        Tree(
            nodes=[
                TreeNode(
                    feature=n[0],
                    threshold=n[1],
                    default_left=bool(n[2]),
                    left=n[3],
                    right=n[4],
                    weight=n[5],
                    gain=n[6],
                )
                for n in tree_nodes
            ]
        )
        for tree_nodes in doc["trees"]
    ]
    return BoostedModel(
        loss=doc["loss"],
        base_score=doc["base_score"],
        learning_rate=doc["learning_rate"],
        feature_names=list(doc["feature_names"]),
        trees=trees,
        best_round=doc["best_round"],
    )


def save_model(model: BoostedModel, path: str | Path) -> None:
    Path(path).write_text(model_to_json(model))


def load_model(path: str | Path) -> BoostedModel:
    return model_from_json(Path(path).read_text())
