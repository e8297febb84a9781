"""greenhop command line.

Exit codes: 0 ok, 2 config error, 3 data error, 4 model error, 5 internal.
Progress goes to stderr; results go to files only.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import pipeline
from .census import census
from .config import RunConfig, apply_overrides, load_config, parse_config
from .data.container import load_model, save_model
from .data.manifest import parse_manifest
from .errors import ConfigError, GreenhopError, InvalidInput, ModelError

log = logging.getLogger("greenhop")

EXIT = {"config": 2, "data": 3, "model": 4, "internal": 5}


def _category(exc: BaseException) -> str:
    if isinstance(exc, ConfigError):
        return "config"
    if isinstance(exc, ModelError):
        return "model"
    if isinstance(exc, (InvalidInput, OSError)):
        return "data"
    return "internal"


def _config(args, required_paths=()) -> RunConfig:
    """Config file (optional for some commands), then flag overrides, then path checks."""
    if args.config:
        cfg = load_config(args.config)
    elif args.seed is not None:
        cfg = parse_config({"seed": args.seed})
    else:
        raise ConfigError("either --config or --seed is required (seed is mandatory)")
    cfg = apply_overrides(cfg, {
        "seed": args.seed, "threads": args.threads,
        "paths.data": getattr(args, "data", None), "paths.model": getattr(args, "model", None),
        "paths.out": getattr(args, "out", None),
    })
    for key in required_paths:
        value = getattr(cfg.paths, key)
        if value is None:
            raise ConfigError(f"no {key} path: pass --{key} or set paths.{key} in the config")
    return cfg


def _existing(path: str, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise InvalidInput(f"{what} {p} does not exist")
    return p


def cmd_synth(args) -> None:
    cfg = _config(args, ("out",))
    counts = args.per_class if len(args.per_class) == 3 else args.per_class * 3
    if len(counts) != 3:
        raise ConfigError("--per-class takes one or three integers")
    ds = pipeline.write_phantom_dataset(cfg.paths.out, counts, cfg.seed, cfg)
    log.info("wrote %d phantoms to %s", len(ds.manifest), ds.root)


def cmd_fit_encoder(args) -> None:
    cfg = _config(args, ("data", "out"))
    ds = pipeline.open_dataset(_existing(cfg.paths.data, "data directory"))
    enc = pipeline.fit_encoder(ds, cfg)
    out = Path(cfg.paths.out)
    save_model(pipeline.new_container(enc, cfg), out)
    pipeline.write_energy_report(enc, out / "energy")
    log.info("encoder channels per hop: %s", enc.per_hop_channel_counts)


def _load_for_training(cfg: RunConfig):
    container = load_model(_existing(cfg.paths.model, "model directory"))
    ds = pipeline.open_dataset(_existing(cfg.paths.data, "data directory"))
    return container, ds


def cmd_train_seg(args) -> None:
    cfg = _config(args, ("data", "model"))
    container, ds = _load_for_training(cfg)
    seg, audit = pipeline.train_seg(container, ds, cfg)
    container.seg = seg
    save_model(container, cfg.paths.model)
    out = Path(cfg.paths.out or cfg.paths.model)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_audit(audit, out / "seg_audit.csv")


def cmd_train_cls(args) -> None:
    cfg = _config(args, ("data", "model"))
    container, ds = _load_for_training(cfg)
    model, X, y, rows = pipeline.train_cls(container, ds, cfg, ablate=args.ablate_hops)
    container.cls = model
    save_model(container, cfg.paths.model)
    out = Path(cfg.paths.out or cfg.paths.model)
    out.mkdir(parents=True, exist_ok=True)
    if args.descriptors:
        pipeline.write_descriptors(X, ds.names("TRAIN"), y, container.encoder.per_hop_channel_counts,
                                   out / "descriptors_train.csv")
    if rows is not None:
        pipeline.write_ablation(rows, out / "hop_ablation.csv")


def cmd_infer(args) -> None:
    container = load_model(_existing(args.model, "model directory"))
    want_seg = args.task in ("seg", "both")
    want_cls = args.task in ("cls", "both")
    if want_seg:
        container.require("seg")
    if want_cls:
        container.require("cls")
    cfg = parse_config(dict(container.config, threads=args.threads if args.threads is not None else 1))
    manifest = parse_manifest(args.manifest) if args.manifest else None
    inputs = pipeline.collect_inputs(args.input)
    preds = pipeline.infer(container, inputs, cfg, want_seg, want_cls)
    pipeline.write_predictions(preds, args.out, manifest, write_probs=args.probs)


def cmd_eval(args) -> None:
    manifest = parse_manifest(args.manifest) if args.manifest else None
    result = pipeline.evaluate(_existing(args.pred, "prediction directory"),
                               _existing(args.gt, "ground-truth directory"), manifest)
    pipeline.write_eval(result, args.out)


def cmd_energy_report(args) -> None:
    container = load_model(_existing(args.model, "model directory"))
    pipeline.write_energy_report(container.encoder, args.out)


def cmd_census(args) -> None:
    container = load_model(_existing(args.model, "model directory"))
    c = census(container)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_csv(out / "census.csv", ["item", "count"], c.rows())


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="greenhop", description=__doc__.splitlines()[0])
    top.add_argument("--threads", type=int, default=None, help="worker threads (0 = auto)")
    top.add_argument("-v", "--verbose", action="store_true")
    sub = top.add_subparsers(dest="command", required=True)

    def cmd(name, fn, help_):
        p = sub.add_parser(name, help=help_)
        p.set_defaults(fn=fn)
        return p

    def with_config(p):
        p.add_argument("--config", help="YAML run config")
        p.add_argument("--seed", type=int, help="overrides config seed")
        return p

    p = with_config(cmd("synth", cmd_synth, "generate a phantom dataset"))
    p.add_argument("--out", help="dataset directory")
    p.add_argument("--per-class", type=int, nargs="+", default=[50])

    p = with_config(cmd("fit-encoder", cmd_fit_encoder, "fit the encoder, write energy CSVs"))
    p.add_argument("--data")
    p.add_argument("--out", help="model directory")

    p = with_config(cmd("train-seg", cmd_train_seg, "train the segmentation decoder"))
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out", help="report directory (default: model directory)")

    p = with_config(cmd("train-cls", cmd_train_cls, "train the LVEF classifier"))
    p.add_argument("--data")
    p.add_argument("--model")
    p.add_argument("--out", help="report directory (default: model directory)")
    p.add_argument("--ablate-hops", action="store_true", help="score all seven hop subsets")
    p.add_argument("--descriptors", action="store_true", help="export training descriptors CSV")

    p = cmd("infer", cmd_infer, "predict masks and classes")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="volume file or directory of volumes")
    p.add_argument("--out", required=True)
    p.add_argument("--task", choices=("seg", "cls", "both"), default="both")
    p.add_argument("--manifest", help="adds true classes to predictions.csv")
    p.add_argument("--probs", action="store_true", help="also write probability maps")

    p = cmd("eval", cmd_eval, "score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--manifest")
    p.add_argument("--out", required=True)

    p = cmd("energy-report", cmd_energy_report, "per-hop spectrum CSVs")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)

    p = cmd("census", cmd_census, "parameter census CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    return top


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("numba").setLevel(logging.WARNING)
    if args.threads is not None and args.threads < 0:
        print("error[config]: --threads must be >= 0", file=sys.stderr)
        return EXIT["config"]
    try:
        args.fn(args)
    except (GreenhopError, OSError) as exc:
        cat = _category(exc)
        print(f"error[{cat}]: {exc}", file=sys.stderr)
        return EXIT[cat]
    except Exception as exc:  # noqa: BLE001 - last-resort category
        log.exception("internal error")
        print(f"error[internal]: {exc}", file=sys.stderr)
        return EXIT["internal"]
    return 0


if __name__ == "__main__":
    sys.exit(main())
