"""GLVOL1 volume files.

Layout: an ASCII header ``GLVOL1 H W T C\\n`` followed by H*W*T*C
little-endian float32 values with c varying fastest, then t, w, h (i.e. a
C-ordered (H, W, T, C) array).
"""
from pathlib import Path

import numpy as np

from ..errors import FormatError, InvalidInput
from .atomic import atomic_write_bytes

MAGIC = b"GLVOL1"
SUFFIX = ".glvol"


def encode_volume(vol) -> bytes:
    v = np.asarray(vol)
    if v.ndim != 4 or min(v.shape) < 1:
        raise InvalidInput(f"volume must be a non-empty (H, W, T, C) array, got shape {v.shape}")
    data = np.ascontiguousarray(v, dtype="<f4")
    if not np.all(np.isfinite(data)):
        raise InvalidInput("refusing to write non-finite values")
    header = b"%s %d %d %d %d\n" % ((MAGIC,) + tuple(v.shape))
    return header + data.tobytes()


def decode_volume(raw: bytes, name: str = "<bytes>") -> np.ndarray:
    nl = raw.find(b"\n", 0, 128)
    if nl < 0:
        raise FormatError(f"{name}: missing header line at byte offset 0")
    parts = raw[:nl].split()
    if not parts or parts[0] != MAGIC:
        raise FormatError(f"{name}: bad magic at byte offset 0 (expected GLVOL1)")
    try:
        dims = tuple(int(p) for p in parts[1:])
    except ValueError:
        raise FormatError(f"{name}: non-integer dims in header at byte offset {len(MAGIC) + 1}") from None
    if len(dims) != 4 or min(dims) < 1:
        raise FormatError(f"{name}: header must carry four positive dims, got {dims}")
    offset = nl + 1
    expected = 4 * int(np.prod(dims))
    actual = len(raw) - offset
    if actual != expected:
        raise FormatError(f"{name}: payload at byte offset {offset} holds {actual} bytes, "
                          f"expected {expected} for dims {dims}")
    arr = np.frombuffer(raw, dtype="<f4", offset=offset).reshape(dims)
    bad = np.flatnonzero(~np.isfinite(arr.ravel()))
    if bad.size:
        raise FormatError(f"{name}: non-finite value at byte offset {offset + 4 * int(bad[0])}")
    return arr.astype(np.float32)


def write_volume(vol, path) -> None:
    atomic_write_bytes(path, encode_volume(vol))


def read_volume(path) -> np.ndarray:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except FileNotFoundError:
        raise InvalidInput(f"volume file not found: {path}") from None
    return decode_volume(raw, str(path))
