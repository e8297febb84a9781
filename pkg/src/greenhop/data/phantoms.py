"""Synthetic echo-like phantoms with known masks and ejection-fraction class.

Each case is a bright elliptical cavity on a darker background with
spatially correlated multiplicative speckle. Channel 0 shows the
end-diastolic cavity, channel 1 the end-systolic one; both breathe
sinusoidally over the frames and coincide with the ground-truth ellipses
at frame 0.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from ..errors import InvalidInput
from .manifest import Manifest, ManifestRow

# ESV/EDV cavity-area ratio per EF class; EF surrogate = 100 * (1 - ratio)
DEFAULT_RATIO_RANGES = {1: (0.30, 0.45), 2: (0.52, 0.58), 3: (0.66, 0.80)}


@dataclass(frozen=True)
class PhantomSpec:
    seed: int = 0
    size: int = 112
    n_frames: int = 12
    center_range: tuple[float, float] = (0.42, 0.58)
    major_axis_range: tuple[float, float] = (20.0, 30.0)
    minor_axis_range: tuple[float, float] = (13.0, 19.0)
    ratio_ranges: dict = field(default_factory=lambda: dict(DEFAULT_RATIO_RANGES))
    speckle: float = 0.25
    modulation: float = 0.05
    cavity_level: float = 1.0
    background_level: float = 0.3
    test_fraction: float = 0.25
    val_fraction: float = 0.0

    def validate(self) -> None:
        if self.size < 16 or self.n_frames < 1:
            raise InvalidInput("phantom size must be >= 16 and n_frames >= 1")
        for name in ("center_range", "major_axis_range", "minor_axis_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise InvalidInput(f"{name} must satisfy low <= high")
        if not (0 < self.center_range[0] and self.center_range[1] < 1):
            raise InvalidInput("center_range must lie inside (0, 1)")
        if max(self.major_axis_range) >= self.size / 2:
            raise InvalidInput("cavity axes must fit inside the frame")
        if sorted(self.ratio_ranges) != [1, 2, 3]:
            raise InvalidInput("ratio_ranges must cover classes 1, 2 and 3")
        prev = 0.0
        for c in (1, 2, 3):
            lo, hi = self.ratio_ranges[c]
            if not prev <= lo < hi <= 1.0:
                raise InvalidInput("ratio ranges must be disjoint, ordered by class and within (0, 1]")
            prev = hi
        if self.speckle < 0 or not 0 <= self.modulation < 0.5:
            raise InvalidInput("speckle must be >= 0 and modulation in [0, 0.5)")
        if not 0 <= self.test_fraction + self.val_fraction < 1:
            raise InvalidInput("test and val fractions must sum below 1")


@dataclass
class PhantomCase:
    name: str
    volume: np.ndarray      # (size, size, n_frames, 2) float32
    masks: np.ndarray       # (size, size, 2) uint8: EDV, ESV
    label: int
    area_ratio: float
    ef_percent: float


def ellipse_mask(size: int, center, axes, angle: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    dy, dx = yy - center[0], xx - center[1]
    c, s = np.cos(angle), np.sin(angle)
    u = dy * c + dx * s
    v = -dy * s + dx * c
    return (u / axes[0]) ** 2 + (v / axes[1]) ** 2 <= 1.0


def _render(spec: PhantomSpec, rng, center, axes_ed, axes_es, angle) -> np.ndarray:
    n = spec.size
    gain = rng.uniform(0.85, 1.15)
    vol = np.empty((n, n, spec.n_frames, 2), dtype=np.float32)
    for t in range(spec.n_frames):
        m = 1.0 + spec.modulation * np.sin(2 * np.pi * t / spec.n_frames)
        for ch, axes in enumerate((axes_ed, axes_es)):
            cav = ellipse_mask(n, center, (axes[0] * m, axes[1] * m), angle).astype(float)
            img = spec.background_level + (spec.cavity_level - spec.background_level) * gaussian_filter(cav, 1.0)
            if spec.speckle:
                noise = gaussian_filter(rng.standard_normal((n, n)), 1.0)
                noise /= noise.std() + 1e-12
                img = img * np.clip(1.0 + spec.speckle * noise, 0.0, None)
            vol[:, :, t, ch] = gain * img
    return vol


def _make_case(spec: PhantomSpec, label: int, rng, name: str) -> PhantomCase:
    n = spec.size
    lo, hi = spec.ratio_ranges[label]
    center = rng.uniform(*spec.center_range, size=2) * n
    axes_ed = (rng.uniform(*spec.major_axis_range), rng.uniform(*spec.minor_axis_range))
    angle = rng.uniform(-np.pi / 6, np.pi / 6)
    ed = ellipse_mask(n, center, axes_ed, angle)
    for _ in range(200):
        target = rng.uniform(lo, hi)
        axes_es = (axes_ed[0] * np.sqrt(target), axes_ed[1] * np.sqrt(target))
        es = ellipse_mask(n, center, axes_es, angle)
        ratio = es.sum() / ed.sum()
        # rasterisation moves the measured ratio; resample until it lands in range
        if lo <= ratio <= hi:
            break
    else:
        raise InvalidInput(f"could not realise area ratio in [{lo}, {hi}] for {name}")
    vol = _render(spec, rng, center, axes_ed, axes_es, angle)
    masks = np.stack([ed, es], axis=-1).astype(np.uint8)
    return PhantomCase(name, vol, masks, label, float(ratio), float(100.0 * (1.0 - ratio)))


def generate_phantoms(spec: PhantomSpec, n_per_class) -> tuple[list[PhantomCase], Manifest]:
    """Deterministic phantom set; cases are interleaved by class.

    ``n_per_class`` is an int or a per-class triple. Within each class the
    last ``round(n * test_fraction)`` cases form TEST, the preceding
    ``round(n * val_fraction)`` VAL, the rest TRAIN.
    """
    spec.validate()
    counts = [n_per_class] * 3 if np.isscalar(n_per_class) else list(n_per_class)
    if len(counts) != 3 or min(counts) < 1:
        raise InvalidInput("n_per_class must be >= 1 for every class")
    order = [(c, i) for i in range(max(counts)) for c in (1, 2, 3) if i < counts[c - 1]]
    seeds = np.random.SeedSequence(spec.seed).spawn(len(order))
    cases, rows = [], []
    for k, ((label, i), ss) in enumerate(zip(order, seeds)):
        name = f"phantom_{k:04d}"
        case = _make_case(spec, label, np.random.default_rng(ss), name)
        n = counts[label - 1]
        n_test = int(round(n * spec.test_fraction))
        n_val = int(round(n * spec.val_fraction))
        split = "TEST" if i >= n - n_test else "VAL" if i >= n - n_test - n_val else "TRAIN"
        cases.append(case)
        rows.append(ManifestRow(name, case.ef_percent, split))
    return cases, Manifest(rows)
