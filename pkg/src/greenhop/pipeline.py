"""Dataset layout on disk and the end-to-end training / inference steps.

A dataset directory holds::

    FileList.csv             FileName, EF, Split
    volumes/<name>.glvol     (H, W, T, 2) frames: channel 0 EDV, channel 1 ESV
    masks/<name>.glvol       (H, W, 2, 1) ground truth: index 0 EDV, index 1 ESV
"""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import classification as cls_mod
from . import encoder as enc_mod
from . import segmentation as seg_mod
from .config import RunConfig, echo
from .data.atomic import atomic_write_text
from .data.container import ModelContainer
from .data.manifest import Manifest, parse_manifest
from .data.phantoms import PhantomSpec, generate_phantoms
from .data.preprocess import preprocess
from .data.volume_io import SUFFIX, read_volume, write_volume
from .errors import InvalidInput
from .metrics import accuracy, balanced_accuracy, confusion_matrix, dice, iou, summarize

log = logging.getLogger(__name__)

MANIFEST_NAME = "FileList.csv"
PHASES = ("EDV", "ESV")


def csv_text(header, rows) -> str:
    """RFC-4180 CSV (CRLF line ends, minimal quoting)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, csv_text(header, rows))


def fmt(v) -> str:
    return format(float(v), ".10g")


# ---------------------------------------------------------------- dataset

@dataclass
class Dataset:
    root: Path
    manifest: Manifest

    def volume_path(self, name: str) -> Path:
        return self.root / "volumes" / f"{Path(name).stem}{SUFFIX}"

    def mask_path(self, name: str) -> Path:
        return self.root / "masks" / f"{Path(name).stem}{SUFFIX}"

    def names(self, split: str) -> list[str]:
        return [r.file_name for r in self.manifest.split(split)]

    def labels(self, names) -> np.ndarray:
        rows = self.manifest.by_name()
        return np.array([rows[n].label for n in names])

    def masks(self, name: str) -> np.ndarray:
        """(H, W, 2) binary masks."""
        m = read_volume(self.mask_path(name))
        if m.shape[2:] != (2, 1):
            raise InvalidInput(f"{self.mask_path(name)}: mask volume must be (H, W, 2, 1), got {m.shape}")
        if not np.all((m == 0) | (m == 1)):
            raise InvalidInput(f"{self.mask_path(name)}: mask values must be 0 or 1")
        return m[..., 0].astype(np.uint8)


def open_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / MANIFEST_NAME).is_file():
        raise InvalidInput(f"{root}: no {MANIFEST_NAME}; not a dataset directory")
    return Dataset(root, parse_manifest(root / MANIFEST_NAME))


def write_phantom_dataset(out, n_per_class, seed: int, cfg: RunConfig | None = None) -> Dataset:
    s = cfg.synth if cfg is not None else None
    spec = PhantomSpec(seed=seed) if s is None else PhantomSpec(
        seed=seed, speckle=s.speckle, modulation=s.modulation,
        test_fraction=s.test_fraction, val_fraction=s.val_fraction)
    cases, manifest = generate_phantoms(spec, n_per_class)
    root = Path(out)
    (root / "volumes").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    for c in cases:
        write_volume(c.volume, root / "volumes" / f"{c.name}{SUFFIX}")
        write_volume(c.masks[:, :, :, None].astype(np.float32), root / "masks" / f"{c.name}{SUFFIX}")
    manifest.write(root / MANIFEST_NAME)
    return Dataset(root, manifest)


def load_input(path, cfg: RunConfig) -> np.ndarray:
    p = cfg.preprocess
    return preprocess(read_volume(path), p.target, p.n_frames, p.offset, p.standardize)


def _load_many(paths, cfg: RunConfig) -> list[np.ndarray]:
    return [load_input(p, cfg) for p in paths]


def _crop_masks(masks: np.ndarray, target: int) -> np.ndarray:
    if masks.shape[:2] != (target, target):
        raise InvalidInput(f"masks are {masks.shape[0]}x{masks.shape[1]}, the pipeline works at "
                           f"{target}x{target}")
    return masks


# ---------------------------------------------------------------- training steps

def fit_encoder(ds: Dataset, cfg: RunConfig) -> enc_mod.EncoderModel:
    names = ds.names("TRAIN")
    if not names:
        raise InvalidInput("manifest has no TRAIN rows")
    vols = _load_many([ds.volume_path(n) for n in names], cfg)
    if cfg.encoder.fit_on_masks:
        vols += [_mask_volume(ds.masks(n), cfg) for n in names]
    log.info("fitting encoder on %d volumes", len(vols))
    return enc_mod.fit_encoder(vols, cfg.encoder.hop_configs(), threads=cfg.threads)


def _mask_volume(masks: np.ndarray, cfg: RunConfig) -> np.ndarray:
    """(H, W, 2) phase masks as an (H, W, T, 2) volume, constant in time."""
    p = cfg.preprocess
    vol = np.repeat(masks[:, :, None, :].astype(np.float32), p.n_frames, axis=2)
    return preprocess(vol, p.target, p.n_frames, 0, p.standardize)


def _encode_reduce(model: enc_mod.EncoderModel, paths, cfg: RunConfig, reduce) -> list:
    """Load, encode and reduce one volume at a time; full feature maps never pile up."""
    return enc_mod._map(lambda p: reduce(p, enc_mod.encode(model, load_input(p, cfg))),
                        list(paths), cfg.threads)


def train_seg(container: ModelContainer, ds: Dataset, cfg: RunConfig):
    names = ds.names("TRAIN")
    if not names:
        raise InvalidInput("manifest has no TRAIN rows")
    params = cfg.segmentation.seg_params(cfg.seed)
    masks = [_crop_masks(ds.masks(n), cfg.preprocess.target) for n in names]
    box = seg_mod.compute_crop_box(masks, margin=params.crop_margin)
    grids = _encode_reduce(container.encoder, [ds.volume_path(n) for n in names], cfg,
                           lambda _, f: [seg_mod.level_grids(f, box, p, params.time_index)
                                      for p in range(len(PHASES))])
    h0, h1, w0, w1 = box
    samples, targets = [], []
    for g, m in zip(grids, masks):
        for p in range(len(PHASES)):
            samples.append(g[p])
            targets.append(m[h0:h1, w0:w1, p])
    size = (cfg.preprocess.target, cfg.preprocess.target)
    return seg_mod.train_segmentation(samples, targets, box, size, params)


def descriptors(container: ModelContainer, paths, cfg: RunConfig) -> np.ndarray:
    counts = container.encoder.per_hop_channel_counts
    return np.stack(_encode_reduce(container.encoder, paths, cfg,
                                   lambda _, f: cls_mod.build_descriptor(f, channel_counts=counts)))


def _targets(cfg: RunConfig, labels) -> dict[int, int]:
    o = cfg.classifier.oversample
    if o == "none":
        return cls_mod.class_counts(labels)
    if o == "balanced":
        return cls_mod.balanced_targets(labels)
    return {int(k): int(v) for k, v in o.items()}


def train_cls(container: ModelContainer, ds: Dataset, cfg: RunConfig, ablate: bool = False):
    """Returns ``(ClsModel, train descriptors, train labels, ablation rows or None)``."""
    names = ds.names("TRAIN")
    X = descriptors(container, [ds.volume_path(n) for n in names], cfg)
    y = ds.labels(names)
    counts = container.encoder.per_hop_channel_counts
    params = cfg.classifier.params(cfg.seed)
    Xa, ya, record = cls_mod.oversample(X, y, _targets(cfg, y), seed=cfg.seed)
    hops = tuple(cfg.classifier.hops)
    cols = cls_mod.subset_columns(counts, hops)
    model = cls_mod.train_classifier(Xa[:, cols], ya, params, hops, counts, record)
    rows = None
    if ablate:
        eval_split = "TEST" if ds.names("TEST") else "VAL"
        test = ds.names(eval_split)
        if not test:
            raise InvalidInput("hop ablation needs TEST or VAL rows to score on")
        Xt = descriptors(container, [ds.volume_path(n) for n in test], cfg)
        rows = cls_mod.ablate(Xa, ya, Xt, ds.labels(test), counts, params)
    return model, X, y, rows


# ---------------------------------------------------------------- inference

@dataclass
class Prediction:
    name: str
    masks: np.ndarray | None = None     # (H, W, 2) uint8
    probs: np.ndarray | None = None     # (H, W, 2) float
    label: int | None = None
    proba: np.ndarray | None = None


def infer(container: ModelContainer, paths, cfg: RunConfig, want_seg=True, want_cls=True) -> list[Prediction]:
    if want_seg:
        container.require("seg")
    if want_cls:
        container.require("cls")
    paths = [Path(p) for p in paths]
    return _encode_reduce(container.encoder, paths, cfg,
                          lambda p, f: _predict_one(container, p.stem, f, want_seg, want_cls))


def _predict_one(container, name, f, want_seg, want_cls) -> Prediction:
    pred = Prediction(name)
    if want_seg:
        seg = container.seg
        pm = [seg_mod.predict_mask(seg, seg_mod.level_grids(f, seg.crop_box, p, seg.time_index))
              for p in range(len(PHASES))]
        pred.probs = np.stack([p for p, _ in pm], axis=-1)
        pred.masks = np.stack([m for _, m in pm], axis=-1)
    if want_cls:
        c = container.cls
        H = cls_mod.build_descriptor(f, c.hops, container.encoder.per_hop_channel_counts)
        label, proba = cls_mod.classify(c, H)
        pred.label, pred.proba = int(label[0]), proba[0]
    return pred


def collect_inputs(path) -> list[Path]:
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob(f"*{SUFFIX}"))
        if not files:
            raise InvalidInput(f"{p}: no {SUFFIX} volumes found")
        return files
    if not p.is_file():
        raise InvalidInput(f"input {p} does not exist")
    return [p]


def write_predictions(preds: list[Prediction], out, manifest: Manifest | None = None,
                      write_probs: bool = False) -> None:
    out = Path(out)
    rows_by_name = manifest.by_name() if manifest is not None else {}
    if any(p.masks is not None for p in preds):
        (out / "masks").mkdir(parents=True, exist_ok=True)
        if write_probs:
            (out / "probs").mkdir(parents=True, exist_ok=True)
    out.mkdir(parents=True, exist_ok=True)
    cls_rows = []
    for p in preds:
        if p.masks is not None:
            write_volume(p.masks[:, :, :, None].astype(np.float32), out / "masks" / f"{p.name}{SUFFIX}")
            if write_probs:
                write_volume(p.probs[:, :, :, None], out / "probs" / f"{p.name}{SUFFIX}")
        if p.label is not None:
            true = rows_by_name.get(p.name)
            cls_rows.append([p.name, p.label, *[fmt(v) for v in p.proba],
                             true.label if true is not None else ""])
    if cls_rows:
        write_csv(out / "predictions.csv",
                  ["file", "predicted_class", "p_class1", "p_class2", "p_class3", "true_class"], cls_rows)


# ---------------------------------------------------------------- evaluation

@dataclass
class EvalResult:
    case_rows: list[list]
    summary_rows: list[list]
    confusion: np.ndarray | None


def _mask_dir(root: Path) -> Path:
    return root / "masks" if (root / "masks").is_dir() else root


def evaluate(pred_dir, gt_dir, manifest: Manifest | None = None) -> EvalResult:
    pred_dir, gt_dir = Path(pred_dir), Path(gt_dir)
    pm, gm = _mask_dir(pred_dir), _mask_dir(gt_dir)
    files = sorted(pm.glob(f"*{SUFFIX}"))
    case_rows, dscs, ious, empty = [], [], [], 0
    for f in files:
        g = gm / f.name
        if not g.is_file():
            raise InvalidInput(f"no ground-truth mask for {f.name} in {gm}")
        a, b = read_volume(f), read_volume(g)
        if a.shape != b.shape:
            raise InvalidInput(f"{f.name}: prediction {a.shape} and ground truth {b.shape} differ")
        for t in range(a.shape[2]):
            pa, gb = a[:, :, t, 0] > 0.5, b[:, :, t, 0] > 0.5
            both_empty = not pa.any() and not gb.any()
            empty += both_empty
            d, j = dice(pa, gb), iou(pa, gb)
            dscs.append(d)
            ious.append(j)
            phase = PHASES[t] if a.shape[2] == len(PHASES) else str(t)
            case_rows.append([f.stem, phase, fmt(d), fmt(j), int(both_empty)])
    summary = []
    if dscs:
        for name, vals in (("DSC", dscs), ("IoU", ious)):
            s = summarize(vals, empty)
            summary.append([name, fmt(s.mean), fmt(s.median), fmt(s.q1), fmt(s.q3), fmt(s.iqr), s.n,
                            s.n_empty_pairs])
    cm = None
    pred_csv = pred_dir / "predictions.csv"
    if pred_csv.is_file():
        with open(pred_csv, newline="") as fh:
            rows = list(csv.DictReader(fh))
        truth = manifest.by_name() if manifest is not None else {}
        yt, yp = [], []
        for r in rows:
            t = truth[r["file"]].label if r["file"] in truth else (int(r["true_class"]) if r.get("true_class") else None)
            if t is not None:
                yt.append(t)
                yp.append(int(r["predicted_class"]))
        if yt:
            cm = confusion_matrix(yt, yp)
            summary.append(["Accuracy", fmt(accuracy(cm)), "", "", "", "", len(yt), ""])
            try:
                summary.append(["BalancedAccuracy", fmt(balanced_accuracy(cm)), "", "", "", "", len(yt), ""])
            except InvalidInput as exc:
                log.warning("balanced accuracy undefined: %s", exc)
    if not dscs and cm is None:
        raise InvalidInput(f"nothing to evaluate in {pred_dir}")
    return EvalResult(case_rows, summary, cm)


def write_eval(result: EvalResult, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if result.case_rows:
        write_csv(out / "metrics_cases.csv", ["file", "phase", "dsc", "iou", "empty_pair"], result.case_rows)
    write_csv(out / "metrics_summary.csv",
              ["metric", "mean", "median", "q1", "q3", "iqr", "n", "empty_pairs"], result.summary_rows)
    if result.confusion is not None:
        rows = [[f"true_{i + 1}", *row.tolist()] for i, row in enumerate(result.confusion)]
        write_csv(out / "confusion_matrix.csv", ["", "pred_1", "pred_2", "pred_3"], rows)


# ---------------------------------------------------------------- reports

def energy_rows(hop: enc_mod.Hop) -> list[list]:
    r = hop.report
    return [[i + 1, format(float(lam), ".17g"), format(float(c), ".17g")]
            for i, (lam, c) in enumerate(zip(r.eigenvalues, r.cumulative_ratio))]


def write_energy_report(encoder: enc_mod.EncoderModel, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    summary = []
    for i, hop in enumerate(encoder.hops, start=1):
        if hop.report is None:
            raise InvalidInput(f"hop {i} carries no energy report")
        write_csv(out / f"energy_hop{i}.csv", ["index", "eigenvalue", "cumulative_ratio"], energy_rows(hop))
        r = hop.report
        summary.append([i, r.eigenvalues.size, *[r.k_at[t] for t in sorted(r.k_at)], r.k_kept,
                        hop.n_channels])
    thresholds = sorted(encoder.hops[0].report.k_at)
    write_csv(out / "energy_summary.csv",
              ["hop", "possible_ac", *[f"k_at_{t:.2f}" for t in thresholds], "k_kept", "channels"],
              summary)


def audit_rows(audit) -> list[list]:
    return [[a.level, a.stage, format(a.mse, ".10g"), format(a.dsc, ".10g"), a.n_train] for a in audit]


def write_audit(audit, path) -> None:
    write_csv(path, ["level", "stage", "mse", "dsc", "n_train"], audit_rows(audit))


def write_ablation(rows, path) -> None:
    write_csv(path, ["hops", "feature_dim", "accuracy", "balanced_accuracy"],
              [["+".join(str(h) for h in r.hops), r.dim, fmt(r.accuracy), fmt(r.balanced_accuracy)]
               for r in rows])


def write_descriptors(X, names, labels, counts, path) -> None:
    header = ["file", "label", *cls_mod.descriptor_names(counts)]
    write_csv(path, header, [[n, int(l), *[format(float(v), ".9g") for v in x]]
                             for n, x, l in zip(names, X, labels)])


def new_container(encoder, cfg: RunConfig) -> ModelContainer:
    return ModelContainer(encoder, None, None, echo(cfg))
