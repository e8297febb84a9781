"""Pooled multi-level descriptors and the three-class LVEF classifier.

Hops 1 and 4 are summarised with a 2x2x1 spatial pyramid (bin means),
hops 2 and 3 with global mean and max per channel. The concatenated
descriptor feeds a multiclass tree ensemble.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gbt
from .errors import InvalidInput
from .gbt import GBTParams, TreeEnsemble
from .metrics import accuracy, balanced_accuracy, confusion_matrix

CLASSES = (1, 2, 3)
POOLING = ("spp", "gap", "gap", "spp")
ALL_HOPS = (1, 2, 3, 4)


def _feature_map(F) -> np.ndarray:
    F = np.asarray(F, dtype=np.float64)
    if F.ndim != 4 or F.size == 0:
        raise InvalidInput(f"feature map must be a non-empty (H, W, T, C) array, got {F.shape}")
    return F


def spp_pool(F) -> np.ndarray:
    """Means over a 2x2 spatial grid (full T per bin); bins row-major, channels contiguous."""
    F = _feature_map(F)
    H, W = F.shape[:2]
    if H < 2 or W < 2:
        raise InvalidInput(f"SPP needs at least 2x2 spatial extent, got {H}x{W}")
    hs, ws = -(-H // 2), -(-W // 2)
    bins = [F[r0:r1, c0:c1].mean(axis=(0, 1, 2))
            for r0, r1 in ((0, hs), (hs, H)) for c0, c1 in ((0, ws), (ws, W))]
    return np.concatenate(bins)


def gap_pool(F) -> np.ndarray:
    """[per-channel means..., per-channel maxes...] over (h, w, t)."""
    F = _feature_map(F)
    return np.concatenate([F.mean(axis=(0, 1, 2)), F.max(axis=(0, 1, 2))])


def hop_dim(hop: int, channels: int) -> int:
    return (4 if POOLING[hop - 1] == "spp" else 2) * channels


def _check_hops(hops) -> tuple[int, ...]:
    hops = tuple(sorted(set(hops)))
    if not hops or any(h not in ALL_HOPS for h in hops):
        raise InvalidInput(f"hop subset must be a non-empty subset of {ALL_HOPS}, got {hops}")
    return hops


def build_descriptor(feats, hops=ALL_HOPS, channel_counts=None) -> np.ndarray:
    """H = [h1; h2; h3; h4] restricted to ``hops``.

    ``channel_counts`` (the encoder's per-hop D) is checked when given.
    """
    hops = _check_hops(hops)
    if len(feats) != 4:
        raise InvalidInput("need the four feature maps F1..F4")
    parts = []
    for h in hops:
        F = feats[h - 1]
        if channel_counts is not None and F.shape[-1] != channel_counts[h - 1]:
            raise InvalidInput(f"hop {h} map has {F.shape[-1]} channels, encoder records "
                               f"{channel_counts[h - 1]}")
        parts.append(spp_pool(F) if POOLING[h - 1] == "spp" else gap_pool(F))
    return np.concatenate(parts)


def descriptor_names(channel_counts, hops=ALL_HOPS) -> list[str]:
    names = []
    for h in _check_hops(hops):
        D = channel_counts[h - 1]
        if POOLING[h - 1] == "spp":
            names += [f"h{h}_bin{b}_c{c}" for b in range(4) for c in range(D)]
        else:
            names += [f"h{h}_{s}_c{c}" for s in ("mean", "max") for c in range(D)]
    return names


def descriptor_slices(channel_counts) -> dict[int, slice]:
    out, pos = {}, 0
    for h in ALL_HOPS:
        n = hop_dim(h, channel_counts[h - 1])
        out[h] = slice(pos, pos + n)
        pos += n
    return out


def subset_columns(channel_counts, hops) -> np.ndarray:
    sl = descriptor_slices(channel_counts)
    return np.concatenate([np.arange(sl[h].start, sl[h].stop) for h in _check_hops(hops)])


@dataclass
class AugmentationRecord:
    before: dict[int, int]
    after: dict[int, int]
    source_rows: np.ndarray  # original index of each appended duplicate

    def copies(self) -> dict[int, int]:
        idx, n = np.unique(self.source_rows, return_counts=True)
        return dict(zip(idx.tolist(), n.tolist()))


def class_counts(labels) -> dict[int, int]:
    labels = np.asarray(labels)
    return {c: int(np.count_nonzero(labels == c)) for c in CLASSES}


def oversample(X, labels, targets: dict[int, int], seed: int = 0):
    """Duplicate minority rows (with replacement) until each class reaches its target.

    Returns ``(X_aug, labels_aug, record)``; originals keep their positions
    and duplicates are appended class by class.
    """
    X = np.asarray(X)
    labels = np.asarray(labels)
    if X.shape[0] != labels.shape[0]:
        raise InvalidInput("descriptor and label counts differ")
    before = class_counts(labels)
    rng = np.random.default_rng(seed)
    extra = []
    for c in CLASSES:
        want = int(targets.get(c, before[c]))
        if want < before[c]:
            raise InvalidInput(f"target {want} for class {c} is below its current count {before[c]}")
        need = want - before[c]
        if need:
            pool = np.flatnonzero(labels == c)
            if pool.size == 0:
                raise InvalidInput(f"class {c} has no samples to duplicate")
            extra.append(rng.choice(pool, size=need, replace=True))
    src = np.concatenate(extra) if extra else np.zeros(0, dtype=np.int64)
    Xa = np.concatenate([X, X[src]]) if src.size else X.copy()
    ya = np.concatenate([labels, labels[src]]) if src.size else labels.copy()
    return Xa, ya, AugmentationRecord(before, class_counts(ya), src)


def balanced_targets(labels) -> dict[int, int]:
    counts = class_counts(labels)
    top = max(counts.values())
    return {c: top for c in CLASSES}


@dataclass
class ClsModel:
    ensemble: TreeEnsemble
    hops: tuple[int, ...]
    channel_counts: tuple[int, ...]
    classes: tuple[int, ...] = CLASSES
    augmentation: AugmentationRecord | None = None

    @property
    def feature_dim(self) -> int:
        return self.ensemble.feature_dim


def train_classifier(X, labels, params: GBTParams | None = None, hops=ALL_HOPS,
                     channel_counts=None, augmentation: AugmentationRecord | None = None) -> ClsModel:
    """Fit the multiclass ensemble on descriptors already restricted to ``hops``."""
    labels = np.asarray(labels)
    missing = [c for c, n in class_counts(labels).items() if n == 0]
    if missing:
        raise InvalidInput(f"class {missing[0]} absent from training data; oversample first")
    if np.any(~np.isin(labels, CLASSES)):
        raise InvalidInput(f"labels must lie in {CLASSES}")
    ens = gbt.fit_classifier(X, labels - 1, n_classes=len(CLASSES), params=params or GBTParams())
    counts = tuple(channel_counts) if channel_counts is not None else ()
    return ClsModel(ens, _check_hops(hops), counts, CLASSES, augmentation)


def classify(model: ClsModel, H) -> tuple[np.ndarray, np.ndarray]:
    """Predicted class per row (ties go to the lower class) and class probabilities."""
    H = np.atleast_2d(np.asarray(H, dtype=np.float64))
    proba = model.ensemble.predict(H)
    # np.argmax returns the first maximum, i.e. the lower class on ties
    pred = np.asarray(model.classes)[np.argmax(proba, axis=1)]
    return pred, proba


@dataclass
class AblationRow:
    hops: tuple[int, ...]
    dim: int
    accuracy: float
    balanced_accuracy: float


HOP_SUBSETS = [(1, 2, 3, 4), (2, 3, 4), (3, 4), (4,), (1, 2, 3), (1,), (1, 2)]


def ablate(X_train, y_train, X_test, y_test, channel_counts, params: GBTParams | None = None,
           subsets=HOP_SUBSETS) -> list[AblationRow]:
    """Train and score one classifier per hop subset on full descriptors."""
    rows = []
    for hops in subsets:
        cols = subset_columns(channel_counts, hops)
        model = train_classifier(X_train[:, cols], y_train, params, hops, channel_counts)
        pred, _ = classify(model, X_test[:, cols])
        m = confusion_matrix(y_test, pred, CLASSES)
        rows.append(AblationRow(tuple(hops), cols.size, accuracy(m), _safe_ba(m)))
    return rows


def _safe_ba(m) -> float:
    sup = m.sum(axis=1)
    if np.any(sup == 0):
        return float("nan")
    return balanced_accuracy(m)
