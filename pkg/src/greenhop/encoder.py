"""Four-hop VoxelHop encoder.

Each hop gathers an s x s x k spatio-temporal neighbourhood around every
voxel, applies one Saab bank per input channel and, except after the last
hop, max-pools 2x2 in space. Volumes are (H, W, T, C) arrays.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import saab
from .errors import InvalidInput
from .saab import EnergyReport, SaabAccumulator, SaabFilterBank

log = logging.getLogger(__name__)

N_HOPS = 4


@dataclass(frozen=True)
class HopConfig:
    spatial_window: int = 3
    temporal_window: int = 3
    energy_threshold: float = 0.99
    safety_margin: int | None = None
    pool_after: bool = True
    expand_threshold: float = 0.0

    def __post_init__(self):
        s, k = self.spatial_window, self.temporal_window
        if s < 1 or k < 1 or s % 2 == 0 or k % 2 == 0:
            raise InvalidInput(f"window sizes must be odd positive integers, got s={s}, k={k}")
        if s * s * k < 2:
            raise InvalidInput("neighbourhood must hold at least 2 voxels")
        if not 0.0 < self.energy_threshold <= 1.0:
            raise InvalidInput(f"energy_threshold must lie in (0, 1], got {self.energy_threshold}")
        if self.safety_margin is not None and self.safety_margin < 0:
            raise InvalidInput("safety_margin must be nonnegative")
        if not 0.0 <= self.expand_threshold < 1.0:
            raise InvalidInput("expand_threshold must lie in [0, 1)")

    @property
    def dim(self) -> int:
        return self.spatial_window ** 2 * self.temporal_window


def default_hop_configs() -> list[HopConfig]:
    return [HopConfig(pool_after=i < N_HOPS - 1) for i in range(N_HOPS)]


@dataclass
class Hop:
    config: HopConfig
    banks: list[SaabFilterBank]
    resolution: tuple[int, int, int]
    pool_pad: tuple[int, int] = (0, 0)
    report: EnergyReport | None = None
    expand: np.ndarray | None = None  # output channels fed to the next hop; None = all

    @property
    def n_channels(self) -> int:
        return sum(1 + b.n_ac for b in self.banks)


@dataclass
class EncoderModel:
    input_dims: tuple[int, int, int, int]
    hops: list[Hop] = field(default_factory=list)

    @property
    def per_hop_channel_counts(self) -> list[int]:
        return [h.n_channels for h in self.hops]

    @property
    def per_hop_resolutions(self) -> list[tuple[int, int, int]]:
        return [h.resolution for h in self.hops]

    @property
    def per_hop_kept_ac(self) -> list[int]:
        return [sum(b.n_ac for b in h.banks) for h in self.hops]


def as_volume(vol) -> np.ndarray:
    v = np.asarray(vol)
    if v.ndim != 4 or min(v.shape) < 1:
        raise InvalidInput(f"volume must be a non-empty (H, W, T, C) array, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("volume contains non-finite values")
    return v


def extract_neighborhoods(vol, s: int, k: int, channel: int) -> np.ndarray:
    """One flattened s*s*k patch per voxel, ordered h, then w, then t.

    Borders use edge replication. Patch elements are ordered (dh, dw, dt)
    row-major.
    """
    v = as_volume(vol)
    H, W, T, C = v.shape
    if s % 2 == 0 or k % 2 == 0 or s < 1 or k < 1:
        raise InvalidInput(f"window sizes must be odd, got s={s}, k={k}")
    if not 0 <= channel < C:
        raise InvalidInput(f"channel {channel} out of range for C={C}")
    if s > 2 * H or s > 2 * W or k > 2 * T:
        raise InvalidInput(f"window {s}x{s}x{k} exceeds twice the volume extent {H}x{W}x{T}")
    return _patches(v[..., channel], s, k)


def _patches(plane: np.ndarray, s: int, k: int) -> np.ndarray:
    r, q = s // 2, k // 2
    padded = np.pad(plane, ((r, r), (r, r), (q, q)), mode="edge")
    win = sliding_window_view(padded, (s, s, k))
    H, W, T = plane.shape
    return win.reshape(H * W * T, s * s * k)


def max_pool(vol) -> np.ndarray:
    """2x2x1 spatial max-pooling; H and W must be even."""
    v = as_volume(vol)
    H, W, T, C = v.shape
    if H % 2 or W % 2:
        raise InvalidInput(f"max_pool needs even H and W, got {H}x{W}")
    return v.reshape(H // 2, 2, W // 2, 2, T, C).max(axis=(1, 3))


def _pool_padded(v: np.ndarray, pad: tuple[int, int]) -> np.ndarray:
    if any(pad):
        v = np.pad(v, ((0, pad[0]), (0, pad[1]), (0, 0), (0, 0)), mode="edge")
    return max_pool(v)


def _hop_forward(hop: Hop, x: np.ndarray) -> np.ndarray:
    s, k = hop.config.spatial_window, hop.config.temporal_window
    H, W, T, C = x.shape
    out = np.empty((H, W, T, hop.n_channels), dtype=np.float32)
    col = 0
    for c, bank in enumerate(hop.banks):
        y = saab.transform(bank, _patches(x[..., c], s, k))
        out[..., col:col + y.shape[1]] = y.reshape(H, W, T, -1)
        col += y.shape[1]
    return out


def _next_input(hop: Hop, feats: np.ndarray) -> np.ndarray:
    if hop.expand is not None:
        feats = feats[..., hop.expand]
    return _pool_padded(feats, hop.pool_pad) if hop.config.pool_after else feats


def channel_energies(banks: list[SaabFilterBank]) -> np.ndarray:
    """Training variance of every output channel of a hop, in channel order."""
    parts = [np.concatenate([[b.dc_variance], b.eigenvalues]) for b in banks]
    return np.concatenate(parts) if parts else np.zeros(0)


def _expanded_channels(banks: list[SaabFilterBank], threshold: float) -> np.ndarray:
    """Channels whose variance share reaches ``threshold`` become next-hop nodes."""
    energy = channel_energies(banks)
    total = energy.sum()
    if threshold <= 0 or total <= 0:
        return np.arange(energy.size)
    return np.flatnonzero(energy / total >= threshold)


def _map(fn, items, threads: int):
    if threads == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads or None) as pool:
        return list(pool.map(fn, items))


def _accumulate(x: np.ndarray, cfg: HopConfig) -> list[SaabAccumulator]:
    accs = []
    for c in range(x.shape[-1]):
        accs.append(SaabAccumulator(cfg.dim).update(
            _patches(x[..., c], cfg.spatial_window, cfg.temporal_window)))
    return accs


def _select_hop(full: list[SaabFilterBank], cfg: HopConfig) -> tuple[list[SaabFilterBank], EnergyReport]:
    """Rank AC eigenvalues of all nodes jointly and keep the top K of the hop."""
    lam = np.concatenate([b.eigenvalues for b in full]) if full else np.zeros(0)
    node = np.concatenate([np.full(b.n_ac, i) for i, b in enumerate(full)]) if full else np.zeros(0, int)
    order = np.argsort(-lam, kind="stable")
    k_hop = saab.keep_count(lam[order], cfg.energy_threshold, cfg.safety_margin)
    counts = np.bincount(node[order[:k_hop]].astype(int), minlength=len(full))
    banks = [b.truncate(int(n)).as_float32() for b, n in zip(full, counts)]
    spectrum = np.concatenate([b.spectrum for b in full])
    spectrum = -np.sort(-spectrum, kind="stable")
    return banks, saab.energy_report(spectrum, k_hop)


def fit_encoder(volumes, configs=None, threads: int = 1) -> EncoderModel:
    """Fit all hops greedily; hop l sees the pooled outputs of hop l-1.

    Moments are accumulated per volume and merged in input order, so the
    result does not depend on ``threads``.
    """
    configs = list(configs) if configs is not None else default_hop_configs()
    if len(configs) != N_HOPS:
        raise InvalidInput(f"encoder needs exactly {N_HOPS} hop configs, got {len(configs)}")
    xs = [as_volume(v).astype(np.float32) for v in volumes]
    if not xs:
        raise InvalidInput("empty training set")
    dims = xs[0].shape
    if any(x.shape != dims for x in xs):
        raise InvalidInput("all training volumes must share dims")
    model = EncoderModel(tuple(int(d) for d in dims))
    for level, cfg in enumerate(configs):
        H, W, T, C = xs[0].shape
        if cfg.spatial_window > 2 * H or cfg.spatial_window > 2 * W or cfg.temporal_window > 2 * T:
            raise InvalidInput(f"hop {level + 1} window exceeds twice the extent {H}x{W}x{T}")
        partials = _map(lambda x: _accumulate(x, cfg), xs, threads)
        accs = partials[0]
        for part in partials[1:]:
            for a, b in zip(accs, part):
                a.merge(b)
        banks, report = _select_hop([a.finalize() for a in accs], cfg)
        pad = (H % 2, W % 2) if cfg.pool_after else (0, 0)
        hop = Hop(cfg, banks, (H, W, T), pad, report)
        if level < N_HOPS - 1:
            expand = _expanded_channels(banks, cfg.expand_threshold)
            if expand.size == 0:
                raise InvalidInput(f"hop {level + 1} expands no channels; lower expand_threshold")
            hop.expand = None if expand.size == hop.n_channels else expand
        model.hops.append(hop)
        log.info("hop %d: %dx%dx%d, %d nodes, kept %d ACs, %d channels",
                 level + 1, H, W, T, len(banks), report.k_kept, hop.n_channels)
        if level < N_HOPS - 1:
            xs = _map(lambda x: _next_input(hop, _hop_forward(hop, x)), xs, threads)
    return model


def encode(model: EncoderModel, vol) -> list[np.ndarray]:
    """Pre-pool feature maps [F1, F2, F3, F4] as float32 (H_l, W_l, T, D_l) arrays."""
    x = as_volume(vol)
    if tuple(x.shape) != tuple(model.input_dims):
        raise InvalidInput(f"volume dims {x.shape} differ from training dims {model.input_dims}")
    x = x.astype(np.float32)
    feats = []
    for hop in model.hops:
        f = _hop_forward(hop, x)
        feats.append(f)
        x = _next_input(hop, f)
    return feats


def encode_many(model: EncoderModel, volumes, threads: int = 1) -> list[list[np.ndarray]]:
    return _map(lambda v: encode(model, v), list(volumes), threads)
