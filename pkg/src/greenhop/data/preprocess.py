"""Resizing, frame selection and z-score standardisation of echo volumes."""
import numpy as np

from ..errors import InvalidInput

SIGMA_FLOOR = 1e-6
CANONICAL_SIZE = 112
N_FRAMES = 12


def interp_matrix(n_in: int, n_out: int, extrapolate: bool = False) -> np.ndarray:
    """(n_out, n_in) linear-interpolation weights with half-pixel centres.

    Sample positions outside the source grid are clamped to the edge, or,
    with ``extrapolate``, continued linearly from the two nearest samples.
    """
    if n_in < 1 or n_out < 1:
        raise InvalidInput("interpolation sizes must be positive")
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    if not extrapolate:
        pos = np.clip(pos, 0, n_in - 1)
    lo = np.clip(np.floor(pos).astype(int), 0, n_in - 2)
    frac = pos - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, lo + 1), frac)
    return m


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int, extrapolate: bool = False) -> np.ndarray:
    """Bilinear resize of the two leading axes; trailing axes are carried along."""
    a = np.asarray(img, dtype=np.float64)
    H, W = a.shape[:2]
    if (H, W) == (out_h, out_w):
        return a.copy()
    mh = interp_matrix(H, out_h, extrapolate)
    mw = interp_matrix(W, out_w, extrapolate)
    return np.einsum("ih,hw...,jw->ij...", mh, a, mw)


def standardize(vol: np.ndarray) -> np.ndarray:
    v = np.asarray(vol, dtype=np.float64)
    sigma = max(float(v.std()), SIGMA_FLOOR)
    return (v - v.mean()) / sigma


def preprocess(frames, target: int = CANONICAL_SIZE, n_frames: int = N_FRAMES,
               offset: int = 0, standardize_intensity: bool = True) -> np.ndarray:
    """Select ``n_frames`` consecutive frames from ``offset``, resize, standardise.

    Input and output are (H, W, T, C); output is float32 (target, target, n_frames, C).
    """
    v = np.asarray(frames, dtype=np.float64)
    if v.ndim != 4:
        raise InvalidInput(f"frames must be (H, W, T, C), got shape {v.shape}")
    if offset < 0 or v.shape[2] < offset + n_frames:
        raise InvalidInput(f"need {n_frames} frames from offset {offset}, volume has {v.shape[2]}")
    if not np.all(np.isfinite(v)):
        raise InvalidInput("frames contain non-finite values")
    v = resize_bilinear(v[:, :, offset:offset + n_frames], target, target)
    if standardize_intensity:
        v = standardize(v)
    return v.astype(np.float32)
