"""Gradient-boosted regression trees, written from scratch.

Two modes share one tree grower:

* regression: squared error, each tree fits the current residuals with
  variance-reduction splits and mean-residual leaves;
* multiclass: softmax log-loss, one tree per class and round fitted to the
  negative gradient, leaf values ``sum(r) / max(sum(h), floor)``.

Features are pre-binned on per-feature candidate thresholds (midpoints
between distinct values, thinned to count quantiles when there are more
than ``max_bins - 1``), so split search runs on histograms.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .errors import InvalidInput

log = logging.getLogger(__name__)

REGRESSION = "regression"
MULTICLASS = "multiclass"


@dataclass(frozen=True)
class GBTParams:
    max_depth: int = 6
    rounds: int = 300
    learning_rate: float = 0.1
    max_bins: int = 256
    min_samples_leaf: int = 8
    subsample: float = 1.0
    seed: int = 0
    hessian_floor: float = 1e-6
    early_stopping_rounds: int | None = None

    def __post_init__(self):
        if self.max_depth < 0 or self.rounds < 0:
            raise InvalidInput("max_depth and rounds must be nonnegative")
        if not 0.0 < self.learning_rate <= 1.0:
            raise InvalidInput(f"learning_rate must lie in (0, 1], got {self.learning_rate}")
        if not 2 <= self.max_bins <= 256:
            raise InvalidInput("max_bins must lie in [2, 256]")
        if self.min_samples_leaf < 1:
            raise InvalidInput("min_samples_leaf must be >= 1")
        if not 0.0 < self.subsample <= 1.0:
            raise InvalidInput("subsample must lie in (0, 1]")


@dataclass
class Tree:
    """Flat binary tree; ``feature[i] < 0`` marks a leaf. ``x <= threshold`` goes left."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, value: float = 0.0) -> "Tree":
        return cls(np.array([-1], np.int32), np.zeros(1), np.array([-1], np.int32),
                   np.array([-1], np.int32), np.array([float(value)]))

    @property
    def n_nodes(self) -> int:
        return int(self.feature.size)

    @property
    def n_leaves(self) -> int:
        return int(np.count_nonzero(self.feature < 0))

    def depth(self) -> int:
        d = np.zeros(self.n_nodes, int)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                d[self.left[i]] = d[self.right[i]] = d[i] + 1
        return int(d.max())

    def scaled(self, factor: float) -> "Tree":
        return replace(self, value=self.value * factor)

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            fi = np.where(inner, f, 0)
            go_left = X[rows, fi] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(X)]


@dataclass
class TreeEnsemble:
    mode: str
    base_score: np.ndarray
    rounds: list[list[Tree]]
    learning_rate: float
    max_depth: int
    feature_dim: int
    n_classes: int = 1
    history: list[float] = field(default_factory=list)

    @property
    def trees(self) -> list[Tree]:
        return [t for r in self.rounds for t in r]

    @property
    def n_nodes(self) -> int:
        return sum(t.n_nodes for t in self.trees)

    def raw_scores(self, X) -> np.ndarray:
        X = _check_matrix(X, self.feature_dim)
        out = np.tile(self.base_score, (X.shape[0], 1))
        if self.rounds:
            _accumulate_trees(X, *self._packed(), self.learning_rate, out)
        return out

    def _packed(self):
        trees = self.trees
        sizes = np.array([t.n_nodes for t in trees], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        cols = np.tile(np.arange(len(self.rounds[0]), dtype=np.int64), len(self.rounds))
        cat = lambda name: np.concatenate([getattr(t, name) for t in trees])
        return (cat("feature").astype(np.int64), cat("threshold"), cat("left").astype(np.int64),
                cat("right").astype(np.int64), cat("value"), offsets, cols)

    def predict(self, X) -> np.ndarray:
        """Regression values, or (N, C) class probabilities in multiclass mode."""
        raw = self.raw_scores(X)
        return raw[:, 0] if self.mode == REGRESSION else softmax(raw)


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _check_matrix(X, dim: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInput(f"feature matrix must be 2-D, got shape {X.shape}")
    if X.shape[0] == 0:
        raise InvalidInput("empty feature matrix")
    if X.shape[1] == 0:
        raise InvalidInput("feature matrix has no columns")
    if dim is not None and X.shape[1] != dim:
        raise InvalidInput(f"expected {dim} features, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("feature matrix contains non-finite values")
    return X


@numba.njit(cache=True)
def _accumulate_trees(X, feature, threshold, left, right, value, offsets, cols, lr, out):
    # trees in round order per row: same summation order as the training update
    for i in range(X.shape[0]):
        for t in range(offsets.shape[0]):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[i, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            out[i, cols[t]] += lr * value[base + node]


# ---------------------------------------------------------------- binning

def candidate_thresholds(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Split candidates for one feature; depend only on the order of values."""
    u, counts = np.unique(col, return_counts=True)
    if u.size < 2:
        return np.zeros(0)
    cuts = np.arange(u.size - 1)
    if cuts.size > max_bins - 1:
        cum = np.cumsum(counts)[:-1]
        targets = np.arange(1, max_bins) * (col.size / max_bins)
        cuts = np.unique(np.clip(np.searchsorted(cum, targets), 0, u.size - 2))
    lo, hi = u[cuts], u[cuts + 1]
    mid = lo + (hi - lo) / 2
    # adjacent floats: the midpoint may round onto the upper value
    return np.where(mid < hi, mid, lo)


class Binner:
    def __init__(self, thresholds: list[np.ndarray]):
        self.thresholds = thresholds

    @classmethod
    def fit(cls, X: np.ndarray, max_bins: int) -> "Binner":
        return cls([candidate_thresholds(X[:, j], max_bins) for j in range(X.shape[1])])

    def transform(self, X: np.ndarray) -> np.ndarray:
        out = np.empty(X.shape, dtype=np.uint8)
        for j, thr in enumerate(self.thresholds):
            out[:, j] = np.searchsorted(thr, X[:, j], side="left")
        return out

    @property
    def n_bins(self) -> np.ndarray:
        return np.array([t.size + 1 for t in self.thresholds], dtype=np.int64)


# ---------------------------------------------------------------- kernels

@numba.njit(cache=True)
def _histogram(binned, idx, grad, n_bins):
    D = binned.shape[1]
    hs = np.zeros((D, n_bins))
    hc = np.zeros((D, n_bins), dtype=np.int64)
    for ii in range(idx.shape[0]):
        i = idx[ii]
        g = grad[i]
        for f in range(D):
            b = binned[i, f]
            hs[f, b] += g
            hc[f, b] += 1
    return hs, hc


@numba.njit(cache=True)
def _best_split(hs, hc, bins_per_feature, total_s, total_n, min_leaf):
    best_gain = 0.0
    best_f = -1
    best_b = -1
    parent = total_s * total_s / total_n
    for f in range(hs.shape[0]):
        sl = 0.0
        nl = 0
        for b in range(bins_per_feature[f] - 1):
            sl += hs[f, b]
            nl += hc[f, b]
            nr = total_n - nl
            if nl < min_leaf:
                continue
            if nr < min_leaf:
                break
            sr = total_s - sl
            gain = sl * sl / nl + sr * sr / nr - parent
            if gain > best_gain:
                best_gain = gain
                best_f = f
                best_b = b
    return best_gain, best_f, best_b


# ---------------------------------------------------------------- growing

class _Grower:
    def __init__(self, binned, binner, params: GBTParams):
        self.binned = binned
        self.binner = binner
        self.bins_per_feature = binner.n_bins
        self.n_bins = int(self.bins_per_feature.max()) if binned.shape[1] else 1
        self.p = params

    def grow(self, idx, grad, leaf_value):
        """Grow one tree on rows ``idx``; returns (tree, list of (leaf node, rows))."""
        feature, threshold, left, right, value = [], [], [], [], []
        leaves = []

        def new_node():
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            return len(feature) - 1

        root = new_node()
        hist = _histogram(self.binned, idx, grad, self.n_bins) if self.p.max_depth > 0 else None
        stack = [(root, idx, hist, 0)]
        while stack:
            node, rows, hist, depth = stack.pop()
            split = None
            if depth < self.p.max_depth and rows.size >= 2 * self.p.min_samples_leaf:
                s = float(grad[rows].sum())
                gain, f, b = _best_split(hist[0], hist[1], self.bins_per_feature, s,
                                         rows.size, self.p.min_samples_leaf)
                # ignore gains at the level of summation roundoff
                if f >= 0 and gain > 1e-12 * float(np.sum(grad[rows] ** 2)):
                    split = (f, b)
            if split is None:
                value[node] = leaf_value(rows)
                leaves.append((node, rows))
                continue
            f, b = split
            mask = self.binned[rows, f] <= b
            lrows, rrows = rows[mask], rows[~mask]
            feature[node] = f
            threshold[node] = float(self.binner.thresholds[f][b])
            ln, rn = new_node(), new_node()
            left[node], right[node] = ln, rn
            if depth + 1 < self.p.max_depth:
                small, large = (lrows, rrows) if lrows.size <= rrows.size else (rrows, lrows)
                hs, hc = _histogram(self.binned, small, grad, self.n_bins)
                small_hist, large_hist = (hs, hc), (hist[0] - hs, hist[1] - hc)
                lh, rh = (small_hist, large_hist) if small is lrows else (large_hist, small_hist)
            else:
                lh = rh = None
            stack.append((rn, rrows, rh, depth + 1))
            stack.append((ln, lrows, lh, depth + 1))
        tree = Tree(np.array(feature, np.int32), np.array(threshold), np.array(left, np.int32),
                    np.array(right, np.int32), np.array(value))
        return tree, leaves


def _rows_for_round(n: int, params: GBTParams, rng) -> np.ndarray:
    if params.subsample >= 1.0:
        return np.arange(n, dtype=np.int64)
    k = max(1, int(round(params.subsample * n)))
    return np.sort(rng.choice(n, size=k, replace=False)).astype(np.int64)


def fit_regressor(X, y, params: GBTParams | None = None, eval_set=None) -> TreeEnsemble:
    """Squared-error boosting; ``history[r]`` is the training MSE after r rounds."""
    params = params or GBTParams()
    X = _check_matrix(X)
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != X.shape[0] or not np.all(np.isfinite(y)):
        raise InvalidInput("targets must be finite and aligned with X")
    binner = Binner.fit(X, params.max_bins)
    grower = _Grower(binner.transform(X), binner, params)
    base = float(y.mean())
    pred = np.full(y.size, base)
    model = TreeEnsemble(REGRESSION, np.array([base]), [], params.learning_rate,
                         params.max_depth, X.shape[1])
    model.history.append(float(np.mean((y - pred) ** 2)))
    rng = np.random.default_rng(params.seed)
    stopper = _EarlyStopper(params, eval_set, model)
    for _ in range(params.rounds):
        resid = y - pred
        rows = _rows_for_round(y.size, params, rng)
        tree, leaves = grower.grow(rows, resid, lambda r: float(resid[r].mean()))
        if rows.size == y.size:
            for node, r in leaves:
                pred[r] += params.learning_rate * tree.value[node]
        else:
            pred += params.learning_rate * tree.predict(X)
        model.rounds.append([tree])
        model.history.append(float(np.mean((y - pred) ** 2)))
        if stopper.should_stop():
            break
    return stopper.finish()


def fit_classifier(X, labels, n_classes: int | None = None,
                   params: GBTParams | None = None, eval_set=None) -> TreeEnsemble:
    """Softmax boosting over integer labels in [0, C); ``history`` holds log-loss."""
    params = params or GBTParams()
    X = _check_matrix(X)
    y = np.asarray(labels)
    if y.ndim != 1 or y.size != X.shape[0]:
        raise InvalidInput("labels must be a vector aligned with X")
    if not np.issubdtype(y.dtype, np.integer):
        if not np.all(np.equal(np.mod(y, 1), 0)):
            raise InvalidInput("labels must be integers")
        y = y.astype(np.int64)
    C = int(n_classes if n_classes is not None else y.max() + 1)
    if y.min() < 0 or y.max() >= C:
        raise InvalidInput(f"labels must lie in [0, {C})")
    counts = np.bincount(y, minlength=C)
    absent = np.flatnonzero(counts == 0)
    if absent.size:
        raise InvalidInput(f"class(es) {absent.tolist()} absent from training data; oversample first")
    binner = Binner.fit(X, params.max_bins)
    grower = _Grower(binner.transform(X), binner, params)
    onehot = np.eye(C)[y]
    prior = np.log(counts / counts.sum())
    base = prior - prior.mean()
    F = np.tile(base, (y.size, 1))
    model = TreeEnsemble(MULTICLASS, base, [], params.learning_rate, params.max_depth,
                         X.shape[1], n_classes=C)
    loss = _logloss(F, y)
    model.history.append(loss)
    rng = np.random.default_rng(params.seed)
    stopper = _EarlyStopper(params, eval_set, model)
    eta = params.learning_rate
    for _ in range(params.rounds):
        P = softmax(F)
        rows = _rows_for_round(y.size, params, rng)
        trees, step = [], np.zeros_like(F)
        for k in range(C):
            r = onehot[:, k] - P[:, k]
            h = P[:, k] * (1.0 - P[:, k])
            tree, _ = grower.grow(
                rows, r, lambda rr: float(r[rr].sum() / max(h[rr].sum(), params.hessian_floor)))
            trees.append(tree)
            step[:, k] = tree.predict(X)
        # diagonal Newton steps can overshoot; halve until log-loss does not rise
        scale = 1.0
        for _ in range(40):
            new_loss = _logloss(F + eta * scale * step, y)
            if new_loss <= loss:
                break
            scale *= 0.5
        else:
            scale, new_loss = 0.0, loss
        if scale != 1.0:
            trees = [t.scaled(scale) for t in trees]
        F = F + eta * scale * step
        loss = new_loss
        model.rounds.append(trees)
        model.history.append(loss)
        if stopper.should_stop():
            break
    return stopper.finish()


def _logloss(F: np.ndarray, y: np.ndarray) -> float:
    z = F - F.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(y.size), y].mean())


class _EarlyStopper:
    """Validation-based early stopping; inert unless both a patience and eval set are given."""

    def __init__(self, params: GBTParams, eval_set, model: TreeEnsemble):
        self.model = model
        self.patience = params.early_stopping_rounds
        self.active = self.patience is not None and eval_set is not None
        if self.active:
            self.Xv = _check_matrix(eval_set[0], model.feature_dim)
            self.yv = np.asarray(eval_set[1])
            self.best, self.best_round = np.inf, 0

    def _score(self) -> float:
        if self.model.mode == REGRESSION:
            return float(np.mean((self.model.predict(self.Xv) - self.yv) ** 2))
        return _logloss(self.model.raw_scores(self.Xv), self.yv.astype(np.int64))

    def should_stop(self) -> bool:
        if not self.active:
            return False
        score = self._score()
        n = len(self.model.rounds)
        if score < self.best:
            self.best, self.best_round = score, n
        return n - self.best_round >= self.patience

    def finish(self) -> TreeEnsemble:
        if self.active and self.best_round < len(self.model.rounds):
            del self.model.rounds[self.best_round:]
            del self.model.history[self.best_round + 1:]
        return self.model


def predict(model: TreeEnsemble, X) -> np.ndarray:
    return model.predict(X)


def zero_regressor(feature_dim: int) -> TreeEnsemble:
    """Identity correction: predicts 0 everywhere."""
    return TreeEnsemble(REGRESSION, np.zeros(1), [], 1.0, 0, feature_dim)


# ---------------------------------------------------------------- text form

def to_dict(model: TreeEnsemble) -> dict:
    """Plain structure for serialisation; floats are written as 17-digit decimals."""
    def num(v):
        return format(float(v), ".17g")

    return {
        "mode": model.mode,
        "n_classes": model.n_classes,
        "base_score": [num(v) for v in model.base_score],
        "learning_rate": num(model.learning_rate),
        "max_depth": model.max_depth,
        "feature_dim": model.feature_dim,
        "history": [num(v) for v in model.history],
        "rounds": [[{
            "feature": t.feature.tolist(),
            "threshold": [num(v) for v in t.threshold],
            "left": t.left.tolist(),
            "right": t.right.tolist(),
            "value": [num(v) for v in t.value],
        } for t in rnd] for rnd in model.rounds],
    }


def from_dict(d: dict) -> TreeEnsemble:
    f = lambda xs: np.array([float(v) for v in xs], dtype=np.float64)
    rounds = [[Tree(np.array(t["feature"], np.int32), f(t["threshold"]), np.array(t["left"], np.int32),
                    np.array(t["right"], np.int32), f(t["value"])) for t in rnd] for rnd in d["rounds"]]
    return TreeEnsemble(d["mode"], f(d["base_score"]), rounds, float(d["learning_rate"]),
                        int(d["max_depth"]), int(d["feature_dim"]), int(d["n_classes"]),
                        [float(v) for v in d["history"]])
