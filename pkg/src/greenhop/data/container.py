"""Model container: a directory holding the fitted encoder and decoders.

Layout::

    meta.txt        key=value lines (format_version, capabilities, config echo)
    encoder.bin     section
    seg.bin         section (optional)
    cls.bin         section (optional)
    checksums.txt   "<sha256>  <file>" per file

A section is ``GLSEC1\\n<header length>\\n<JSON header>`` followed by a raw
little-endian float32 payload. The JSON header (sorted keys) carries the
structured parts, tree ensembles included (floats as 17-digit decimals),
and an index of the payload arrays.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import gbt
from ..classification import AugmentationRecord, ClsModel
from ..encoder import EncoderModel, Hop, HopConfig
from ..errors import CapabilityError, LoadError
from ..saab import SaabFilterBank, dc_anchor, energy_report
from ..segmentation import SegModel
from .atomic import atomic_write_bytes, atomic_write_text

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
SECTION_MAGIC = b"GLSEC1"
SECTIONS = ("encoder", "seg", "cls")


@dataclass
class ModelContainer:
    encoder: EncoderModel
    seg: SegModel | None = None
    cls: ClsModel | None = None
    config: dict = field(default_factory=dict)

    @property
    def capabilities(self) -> dict[str, bool]:
        return {"encoder": True, "seg": self.seg is not None, "cls": self.cls is not None}

    def require(self, section: str) -> None:
        if not self.capabilities.get(section):
            raise CapabilityError(f"model has no '{section}' section; train it first")


def _num(v) -> str:
    return format(float(v), ".17g")


# ---------------------------------------------------------------- sections

class _Payload:
    def __init__(self):
        self.chunks: list[bytes] = []
        self.index: list[dict] = []
        self.offset = 0

    def add(self, arr) -> int:
        a = np.ascontiguousarray(arr, dtype="<f4")
        self.index.append({"shape": list(a.shape), "offset": self.offset})
        raw = a.tobytes()
        self.chunks.append(raw)
        self.offset += len(raw)
        return len(self.index) - 1


def _pack(header: dict, payload: _Payload | None = None) -> bytes:
    payload = payload or _Payload()
    header = dict(header, arrays=payload.index)
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return SECTION_MAGIC + b"\n%d\n" % len(text) + text + b"".join(payload.chunks)


def _unpack(raw: bytes, name: str) -> tuple[dict, list[np.ndarray]]:
    try:
        magic, length, rest = raw.split(b"\n", 2)
        if magic != SECTION_MAGIC:
            raise ValueError("bad magic")
        n = int(length)
        header = json.loads(rest[:n])
        body = rest[n:]
        arrays = []
        for spec in header["arrays"]:
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            a = np.frombuffer(body, dtype="<f4", count=count, offset=spec["offset"])
            arrays.append(a.reshape(spec["shape"]).astype(np.float64))
    except (ValueError, KeyError, TypeError) as exc:
        raise LoadError(f"section '{name}' is malformed: {exc}") from None
    return header, arrays


def _encoder_section(enc: EncoderModel) -> bytes:
    p = _Payload()
    hops = []
    for hop in enc.hops:
        banks = []
        for b in hop.banks:
            banks.append({
                "dim": b.dim, "bias": _num(b.bias), "total_ac_energy": _num(b.total_ac_energy),
                "dc_variance": _num(b.dc_variance),
                "ac_filters": p.add(b.ac_filters.reshape(b.n_ac, b.dim)),
                "eigenvalues": p.add(b.eigenvalues), "spectrum": p.add(b.spectrum),
                "mean": p.add(b.mean),
            })
        c = hop.config
        hops.append({
            "config": {"spatial_window": c.spatial_window, "temporal_window": c.temporal_window,
                       "energy_threshold": _num(c.energy_threshold), "safety_margin": c.safety_margin,
                       "pool_after": c.pool_after, "expand_threshold": _num(c.expand_threshold)},
            "resolution": list(hop.resolution), "pool_pad": list(hop.pool_pad),
            "expand": None if hop.expand is None else [int(i) for i in hop.expand],
            "k_kept": hop.report.k_kept if hop.report else None,
            "banks": banks,
        })
    return _pack({"input_dims": list(enc.input_dims), "hops": hops}, p)


def _read_encoder(header: dict, arrays) -> EncoderModel:
    enc = EncoderModel(tuple(header["input_dims"]))
    for h in header["hops"]:
        c = h["config"]
        cfg = HopConfig(c["spatial_window"], c["temporal_window"], float(c["energy_threshold"]),
                        c["safety_margin"], c["pool_after"], float(c["expand_threshold"]))
        banks = []
        for b in h["banks"]:
            d = b["dim"]
            banks.append(SaabFilterBank(dc_anchor(d), float(b["bias"]),
                                        arrays[b["ac_filters"]].reshape(-1, d),
                                        arrays[b["eigenvalues"]], float(b["total_ac_energy"]),
                                        arrays[b["spectrum"]], arrays[b["mean"]],
                                        float(b["dc_variance"])))
        report = None
        if h["k_kept"] is not None:
            spec = np.concatenate([b.spectrum for b in banks]) if banks else np.zeros(0)
            report = energy_report(-np.sort(-spec, kind="stable"), h["k_kept"])
        expand = None if h["expand"] is None else np.array(h["expand"], dtype=np.int64)
        enc.hops.append(Hop(cfg, banks, tuple(h["resolution"]), tuple(h["pool_pad"]), report, expand))
    return enc


def _seg_section(seg: SegModel) -> bytes:
    return _pack({
        "size": list(seg.size), "crop_box": list(seg.crop_box),
        "threshold": _num(seg.threshold), "dilation_radius": seg.dilation_radius,
        "interior_ratio": _num(seg.interior_ratio), "background_ratio": _num(seg.background_ratio),
        "largest_component": seg.largest_component, "time_index": seg.time_index,
        "feature_dims": {str(k): v for k, v in seg.feature_dims.items()},
        "initial": gbt.to_dict(seg.initial),
        "residual": {str(k): gbt.to_dict(v) for k, v in seg.residual.items()},
    })


def _read_seg(h: dict) -> SegModel:
    return SegModel(tuple(h["size"]), tuple(h["crop_box"]), gbt.from_dict(h["initial"]),
                    {int(k): gbt.from_dict(v) for k, v in h["residual"].items()},
                    {int(k): v for k, v in h["feature_dims"].items()},
                    float(h["threshold"]), h["dilation_radius"], float(h["interior_ratio"]),
                    float(h["background_ratio"]), h["largest_component"], h["time_index"])


def _cls_section(cls: ClsModel) -> bytes:
    aug = None
    if cls.augmentation is not None:
        a = cls.augmentation
        aug = {"before": {str(k): v for k, v in a.before.items()},
               "after": {str(k): v for k, v in a.after.items()},
               "source_rows": [int(i) for i in a.source_rows]}
    return _pack({"hops": list(cls.hops), "channel_counts": list(cls.channel_counts),
                  "classes": list(cls.classes), "augmentation": aug,
                  "ensemble": gbt.to_dict(cls.ensemble)})


def _read_cls(h: dict) -> ClsModel:
    aug = None
    if h["augmentation"] is not None:
        a = h["augmentation"]
        aug = AugmentationRecord({int(k): v for k, v in a["before"].items()},
                                 {int(k): v for k, v in a["after"].items()},
                                 np.array(a["source_rows"], dtype=np.int64))
    return ClsModel(gbt.from_dict(h["ensemble"]), tuple(h["hops"]), tuple(h["channel_counts"]),
                    tuple(h["classes"]), aug)


# ---------------------------------------------------------------- directory

def _sha(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def _meta_text(container: ModelContainer) -> str:
    caps = container.capabilities
    lines = [f"format_version={FORMAT_VERSION}"]
    lines += [f"has_{k}={int(v)}" for k, v in caps.items()]
    lines.append("config=" + json.dumps(container.config, sort_keys=True, separators=(",", ":")))
    return "\n".join(lines) + "\n"


def save_model(container: ModelContainer, directory) -> None:
    """Write every present section atomically, then meta and checksums.

    Stale sections from an earlier save are removed so capabilities match
    the files on disk.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {"encoder": _encoder_section(container.encoder)}
    if container.seg is not None:
        blobs["seg"] = _seg_section(container.seg)
    if container.cls is not None:
        blobs["cls"] = _cls_section(container.cls)
    for name in SECTIONS:
        if name in blobs:
            atomic_write_bytes(d / f"{name}.bin", blobs[name])
        else:
            (d / f"{name}.bin").unlink(missing_ok=True)
    meta = _meta_text(container)
    atomic_write_text(d / "meta.txt", meta)
    sums = [f"{_sha(meta.encode())}  meta.txt"]
    sums += [f"{_sha(blobs[n])}  {n}.bin" for n in SECTIONS if n in blobs]
    atomic_write_text(d / "checksums.txt", "\n".join(sums) + "\n")


def _parse_meta(text: str) -> dict[str, str]:
    out = {}
    for line in text.splitlines():
        if line.strip():
            key, sep, value = line.partition("=")
            if not sep:
                raise LoadError(f"meta.txt: malformed line {line!r}")
            out[key.strip()] = value
    return out


def load_model(directory) -> ModelContainer:
    d = Path(directory)
    if not (d / "meta.txt").is_file():
        raise LoadError(f"{d} is not a model directory (meta.txt missing)")
    try:
        sums_text = (d / "checksums.txt").read_text()
    except OSError:
        raise LoadError(f"{d}: checksums.txt missing") from None
    sums = {}
    for line in sums_text.splitlines():
        if line.strip():
            digest, _, fname = line.partition("  ")
            sums[fname.strip()] = digest.strip()
    meta_raw = (d / "meta.txt").read_bytes()
    if sums.get("meta.txt") != _sha(meta_raw):
        raise LoadError("checksum failure in section 'meta'")
    meta = _parse_meta(meta_raw.decode())
    try:
        version = int(meta.get("format_version", "-1"))
    except ValueError:
        version = -1
    if version != FORMAT_VERSION:
        raise LoadError(f"unsupported model format version {meta.get('format_version')} "
                        f"(this build reads {FORMAT_VERSION})")
    parsed = {}
    for name in SECTIONS:
        path = d / f"{name}.bin"
        flagged = meta.get(f"has_{name}") == "1"
        if not path.exists():
            if name == "encoder":
                raise LoadError("section 'encoder' is missing")
            if flagged:
                log.warning("section '%s' is flagged in meta.txt but absent; loading without it", name)
            continue
        raw = path.read_bytes()
        if sums.get(f"{name}.bin") != _sha(raw):
            raise LoadError(f"checksum failure in section '{name}'")
        parsed[name] = _unpack(raw, name)
    enc = _read_encoder(*parsed["encoder"])
    seg = _read_seg(parsed["seg"][0]) if "seg" in parsed else None
    cls = _read_cls(parsed["cls"][0]) if "cls" in parsed else None
    config = json.loads(meta.get("config", "{}"))
    return ModelContainer(enc, seg, cls, config)
