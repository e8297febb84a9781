"""Coarse-to-fine residual-regression segmentation decoder.

Level 4 (coarsest, 1/8 resolution) gets an initial occupancy regressor and
a boundary-focused residual corrector. Each finer level upsamples the
corrected prediction by 2 and adds a residual regressor trained on the
boundary region of that level's ground truth. Level-l grids are 2^(l-1)
times coarser than the input frame.

Samples handed to the decoder are per-(case, phase) feature grids that are
already cropped to the model's crop box, one (h_l, w_l, D_l) array per
level, together with the matching cropped full-resolution mask.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import gbt
from .data.preprocess import resize_bilinear
from .errors import InvalidInput
from .gbt import GBTParams, TreeEnsemble
from .metrics import dice

log = logging.getLogger(__name__)

LEVELS = (1, 2, 3, 4)
BACKGROUND, INTERIOR, BOUNDARY = 0, 1, 2
PREDICT_CHUNK = 1 << 17


@dataclass(frozen=True)
class SegParams:
    initial: GBTParams = field(default_factory=GBTParams)
    residual: GBTParams = field(default_factory=GBTParams)
    dilation_radius: int = 1
    interior_ratio: float = 1.0
    background_ratio: float = 1.0
    threshold: float = 0.5
    crop_margin: int = 8
    seed: int = 0
    largest_component: bool = False
    time_index: int = 0

    def __post_init__(self):
        if self.dilation_radius < 0:
            raise InvalidInput("dilation_radius must be nonnegative")
        if self.interior_ratio < 0 or self.background_ratio < 0:
            raise InvalidInput("sampling ratios must be nonnegative")
        if not 0.0 < self.threshold < 1.0:
            raise InvalidInput("threshold must lie in (0, 1)")


@dataclass
class SegModel:
    size: tuple[int, int]
    crop_box: tuple[int, int, int, int]
    initial: TreeEnsemble
    residual: dict[int, TreeEnsemble]
    feature_dims: dict[int, int]
    threshold: float = 0.5
    dilation_radius: int = 1
    interior_ratio: float = 1.0
    background_ratio: float = 1.0
    largest_component: bool = False
    time_index: int = 0

    def level_box(self, level: int) -> tuple[int, int, int, int]:
        f = 2 ** (level - 1)
        return tuple(v // f for v in self.crop_box)

    @property
    def n_nodes(self) -> int:
        return self.initial.n_nodes + sum(m.n_nodes for m in self.residual.values())


@dataclass
class RoiPartition:
    labels: np.ndarray  # BACKGROUND / INTERIOR / BOUNDARY per cell

    def indices(self, kind: int) -> np.ndarray:
        return np.flatnonzero(self.labels.ravel() == kind)


@dataclass
class LevelAudit:
    level: int
    stage: str
    mse: float
    dsc: float
    n_train: int


# ---------------------------------------------------------------- grids

def patch_average_downsample(mask, factor: int) -> np.ndarray:
    """Mean of every factor x factor block: fractional occupancy in [0, 1]."""
    m = np.asarray(mask, dtype=np.float64)
    if m.ndim != 2:
        raise InvalidInput("mask must be a 2-D grid")
    H, W = m.shape
    if factor < 1 or H % factor or W % factor:
        raise InvalidInput(f"{H}x{W} mask is not divisible by factor {factor}")
    return m.reshape(H // factor, factor, W // factor, factor).mean(axis=(1, 3))


def upsample(grid, level: int | None = None) -> np.ndarray:
    """2x bilinear upsampling with half-pixel centres.

    Borders continue the edge slope instead of clamping, so affine grids
    map to affine grids exactly.
    """
    if level is not None and level <= 1:
        raise InvalidInput("level-1 grids are already at full resolution")
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim < 2:
        raise InvalidInput("grid must be at least 2-D")
    return resize_bilinear(g, 2 * g.shape[0], 2 * g.shape[1], extrapolate=True)


def partition_roi(pred, gt, dilation_radius: int = 1) -> RoiPartition:
    """Background / interior / boundary split of a level grid from its ground truth.

    Boundary seeds are fractional cells, plus cells on a hard 0/1 edge
    (the only transitions a binary full-resolution mask has); seeds are
    dilated by ``dilation_radius`` cells in the Chebyshev metric.
    """
    g = np.asarray(gt, dtype=np.float64)
    if np.shape(pred) != g.shape:
        raise InvalidInput(f"prediction {np.shape(pred)} and ground truth {g.shape} differ in shape")
    frac = (g > 0) & (g < 1)
    hard = (g == 0) | (g == 1)
    one = np.where(g == 1, 1, 0)
    edge = np.zeros_like(frac)
    for axis in (0, 1):
        diff = hard & np.roll(hard, 1, axis) & (one != np.roll(one, 1, axis))
        if axis == 0:
            diff[0, :] = False
        else:
            diff[:, 0] = False
        edge |= diff | np.roll(diff, -1, axis)
    seeds = frac | edge
    if dilation_radius > 0 and seeds.any():
        size = 2 * dilation_radius + 1
        seeds = ndimage.binary_dilation(seeds, structure=np.ones((size, size), bool))
    labels = np.where(seeds, BOUNDARY, np.where(g >= 1, INTERIOR, BACKGROUND)).astype(np.int8)
    return RoiPartition(labels)


def compute_crop_box(masks, margin: int = 8, align: int = 8) -> tuple[int, int, int, int]:
    """Bounding box of the union of training masks, grown by ``margin``, snapped outward to ``align``."""
    masks = list(masks)
    if not masks:
        raise InvalidInput("no training masks to derive a crop box from")
    union = np.zeros(np.shape(masks[0])[:2], bool)
    for m in masks:
        m = np.asarray(m)
        union |= (m > 0) if m.ndim == 2 else (m > 0).any(axis=tuple(range(2, m.ndim)))
    if not union.any():
        raise InvalidInput("training masks contain no foreground; cannot place the crop box")
    H, W = union.shape
    rows, cols = np.flatnonzero(union.any(1)), np.flatnonzero(union.any(0))
    h0 = max(0, (rows[0] - margin) // align * align)
    w0 = max(0, (cols[0] - margin) // align * align)
    h1 = min(H, -(-(rows[-1] + 1 + margin) // align) * align)
    w1 = min(W, -(-(cols[-1] + 1 + margin) // align) * align)
    return int(h0), int(h1), int(w0), int(w1)


def level_grids(feats, crop_box, phase: int, time_index: int = 0) -> list[np.ndarray]:
    """Cropped per-level feature rows for one phase: F_l at ``time_index`` plus a phase column.

    Phase 0 is EDV, phase 1 ESV; the extra column tells the regressors which
    cavity the sample asks for.
    """
    if len(feats) != 4:
        raise InvalidInput("need the four feature maps F1..F4")
    out = []
    for lv in LEVELS:
        f = 2 ** (lv - 1)
        h0, h1, w0, w1 = (v // f for v in crop_box)
        F = feats[lv - 1]
        if not 0 <= time_index < F.shape[2]:
            raise InvalidInput(f"time index {time_index} outside 0..{F.shape[2] - 1}")
        g = F[h0:h1, w0:w1, time_index, :]
        col = np.full(g.shape[:2] + (1,), float(phase), dtype=g.dtype)
        out.append(np.concatenate([g, col], axis=-1))
    return out


def _dsc(pred: np.ndarray, gt: np.ndarray, thr: float) -> float:
    return dice(pred >= thr, gt >= 0.5)


# ---------------------------------------------------------------- training

def _stack(grids, level_idx) -> np.ndarray:
    return np.concatenate([g[level_idx].reshape(-1, g[level_idx].shape[-1]) for g in grids])


def _predict_rows(model: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    out = np.empty(X.shape[0])
    for s in range(0, X.shape[0], PREDICT_CHUNK):
        out[s:s + PREDICT_CHUNK] = model.predict(X[s:s + PREDICT_CHUNK])
    return out


def _split(flat: np.ndarray, shapes) -> list[np.ndarray]:
    out, pos = [], 0
    for shp in shapes:
        n = shp[0] * shp[1]
        out.append(flat[pos:pos + n].reshape(shp))
        pos += n
    return out


def _roi_sample(parts: list[RoiPartition], params: SegParams, rng) -> list[np.ndarray]:
    """Per grid: all boundary cells plus ratio-scaled random interior/background cells."""
    picks = []
    for part in parts:
        bnd = part.indices(BOUNDARY)
        chosen = [bnd]
        for kind, ratio in ((INTERIOR, params.interior_ratio), (BACKGROUND, params.background_ratio)):
            pool = part.indices(kind)
            k = min(pool.size, int(round(ratio * bnd.size)))
            if k:
                chosen.append(np.sort(rng.choice(pool, size=k, replace=False)))
        picks.append(np.sort(np.concatenate(chosen)))
    return picks


def train_initial(X: np.ndarray, y: np.ndarray, params: GBTParams) -> TreeEnsemble:
    y = np.asarray(y, dtype=np.float64)
    if not np.any(y > 0):
        raise InvalidInput("level-4 training targets contain no foreground: "
                           "check the masks and the crop box")
    return gbt.fit_regressor(X, y, params)


def train_residual(level: int, features: list[np.ndarray], current: list[np.ndarray],
                   gt: list[np.ndarray], rois: list[RoiPartition], params: SegParams,
                   rng) -> tuple[TreeEnsemble, int]:
    """Fit one residual corrector on the ROI-sampled cells of every grid."""
    dim = features[0].shape[-1]
    picks = _roi_sample(rois, params, rng)
    n = sum(p.size for p in picks)
    if n == 0 or not any(r.indices(BOUNDARY).size for r in rois):
        log.info("level %d: empty boundary set, identity correction", level)
        return gbt.zero_regressor(dim), 0
    X = np.concatenate([f.reshape(-1, dim)[p] for f, p in zip(features, picks)])
    y = np.concatenate([(g - c).ravel()[p] for g, c, p in zip(gt, current, picks)])
    return gbt.fit_regressor(X, y, params.residual), n


def train_segmentation(samples, masks, crop_box, size, params: SegParams | None = None):
    """Fit the level-wise regressor stack.

    ``samples``: list of [G1, G2, G3, G4] cropped level feature grids;
    ``masks``: matching cropped full-resolution binary masks.
    Returns ``(SegModel, audit rows)``.
    """
    params = params or SegParams()
    if not samples or len(samples) != len(masks):
        raise InvalidInput("need one mask per training sample")
    h0, h1, w0, w1 = crop_box
    if (h0 | h1 | w0 | w1) % 8:
        raise InvalidInput("crop box must be aligned to the level-4 grid (multiples of 8)")
    targets = {lv: [patch_average_downsample(m, 2 ** (lv - 1)) for m in masks] for lv in LEVELS}
    for lv in LEVELS:
        want = targets[lv][0].shape
        for s in samples:
            if s[lv - 1].shape[:2] != want:
                raise InvalidInput(f"level-{lv} features {s[lv - 1].shape[:2]} do not match grid {want}")
    dims = {lv: samples[0][lv - 1].shape[-1] for lv in LEVELS}
    rng = np.random.default_rng(params.seed)
    audit: list[LevelAudit] = []

    feats4 = [s[3] for s in samples]
    X4 = _stack(samples, 3)
    y4 = np.concatenate([t.ravel() for t in targets[4]])
    initial = train_initial(X4, y4, params.initial)
    current = _split(_predict_rows(initial, X4), [t.shape for t in targets[4]])
    del X4
    audit.append(_audit(4, "initial", current, targets[4], params.threshold, y4.size))

    residual = {}
    for lv in (4, 3, 2, 1):
        feats = feats4 if lv == 4 else [s[lv - 1] for s in samples]
        if lv != 4:
            current = [upsample(c) for c in current]
            audit.append(_audit(lv, "upsampled", current, targets[lv], params.threshold, 0))
        rois = [partition_roi(c, g, params.dilation_radius) for c, g in zip(current, targets[lv])]
        model, n = train_residual(lv, feats, current, targets[lv], rois, params, rng)
        residual[lv] = model
        if model.rounds:
            flat = _predict_rows(model, np.concatenate([f.reshape(-1, dims[lv]) for f in feats]))
            current = [c + r for c, r in zip(current, _split(flat, [c.shape for c in current]))]
        audit.append(_audit(lv, "corrected", current, targets[lv], params.threshold, n))
        log.info("level %d: %s", lv, audit[-1])

    model = SegModel(tuple(size), tuple(int(v) for v in crop_box), initial, residual, dims,
                     params.threshold, params.dilation_radius, params.interior_ratio,
                     params.background_ratio, params.largest_component, params.time_index)
    return model, audit


def _audit(level, stage, preds, gts, thr, n) -> LevelAudit:
    mse = float(np.mean(np.concatenate([(p - g).ravel() ** 2 for p, g in zip(preds, gts)])))
    dsc = float(np.mean([_dsc(p, g, thr) for p, g in zip(preds, gts)]))
    return LevelAudit(level, stage, mse, dsc, n)


# ---------------------------------------------------------------- inference

def predict_levels(model: SegModel, grids: list[np.ndarray]) -> dict[int, np.ndarray]:
    """Corrected (unclamped) prediction at every level for one cropped sample."""
    if len(grids) != 4:
        raise InvalidInput("need four level feature grids")
    for lv in LEVELS:
        h0, h1, w0, w1 = model.level_box(lv)
        g = grids[lv - 1]
        if g.shape != (h1 - h0, w1 - w0, model.feature_dims[lv]):
            raise InvalidInput(f"level-{lv} features have shape {g.shape}, model expects "
                               f"{(h1 - h0, w1 - w0, model.feature_dims[lv])}")
    rows = lambda g: g.reshape(-1, g.shape[-1])
    g4 = grids[3]
    cur = _predict_rows(model.initial, rows(g4)).reshape(g4.shape[:2])
    out = {}
    for lv in (4, 3, 2, 1):
        g = grids[lv - 1]
        if lv != 4:
            cur = upsample(cur)
        res = model.residual.get(lv)
        if res is not None and res.rounds:
            cur = cur + _predict_rows(res, rows(g)).reshape(g.shape[:2])
        out[lv] = cur
    return out


def predict_mask(model: SegModel, grids: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Full-frame probability map in [0, 1] and binary mask (prob >= threshold)."""
    fine = predict_levels(model, grids)[1]
    prob = np.zeros(model.size)
    h0, h1, w0, w1 = model.crop_box
    prob[h0:h1, w0:w1] = np.clip(fine, 0.0, 1.0)
    mask = prob >= model.threshold
    if model.largest_component and mask.any():
        lab, n = ndimage.label(mask)
        sizes = np.bincount(lab.ravel())[1:]
        mask = lab == (1 + int(np.argmax(sizes)))
    return prob, mask.astype(np.uint8)
