"""Command-line entry points for the whole pipeline.

Subcommands: ``gen`` (synthetic dataset), ``train``, ``refine``
(refinement levels on an existing chain), ``roi``, ``predict``, ``eval``,
``gradcheck`` and ``ablate``.  A single JSON document configures every
stage; any leaf can be overridden on the command line with repeated
``--set dotted.key=value`` flags.  Unknown keys are rejected rather than
ignored, so typos fail fast.

The global ``seed`` propagates into the dataset and training configs
unless those set their own seeds explicitly.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import types
import typing
from dataclasses import dataclass, field

import numpy as np

from . import volcore
from .ablation import DatasetConfig, benchmark_dataset, dataset_records, run_ablation
from .errors import ConfigError, VoxsegError
from .gradsuite import run_gradient_suite
from .inference import TilingConfig, binarize_and_filter, detect_roi, predict_volume
from .metrics import build_report, evaluate_pair
from .net3d import UNetConfig, load_checkpoint, save_checkpoint
from .phantom import generate_phantom
from .trainer import (RRSConfig, TrainConfig, load_cases, read_manifest,
                      rrs_level, train_cases, write_manifest)
from .volcore import BinaryMask, Volume, atomic_write_text


@dataclass(frozen=True)
class RoiConfig:
    percentile: float = 95.0
    smooth_sigma: float = 1.0
    margin: int = 4


@dataclass(frozen=True)
class PathsConfig:
    data_dir: str | None = None
    out_dir: str | None = None


@dataclass(frozen=True)
class RunConfig:
    """Everything one run needs, in one JSON-serializable document."""

    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    unet: UNetConfig = field(default_factory=UNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    rrs: RRSConfig = field(default_factory=RRSConfig)
    tiling: TilingConfig = field(default_factory=TilingConfig)
    roi: RoiConfig = field(default_factory=RoiConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)


# ---------------------------------------------------------------------------
# Strict dict -> dataclass construction
# ---------------------------------------------------------------------------

def _coerce(value, tp, path: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        arms = typing.get_args(tp)
        if value is None:
            if type(None) in arms:
                return None
            raise ConfigError(f"{path}: null is not allowed here")
        last_err = None
        for arm in arms:
            if arm is type(None):
                continue
            try:
                return _coerce(value, arm, path)
            except ConfigError as e:
                last_err = e
        raise last_err
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {type(value).__name__}")
        args = typing.get_args(tp)
        if len(args) == 2 and args[1] is Ellipsis:
            return tuple(_coerce(v, args[0], f"{path}[{i}]") for i, v in enumerate(value))
        if len(args) != len(value):
            raise ConfigError(f"{path}: expected {len(args)} entries, got {len(value)}")
        return tuple(_coerce(v, a, f"{path}[{i}]") for i, (v, a) in enumerate(zip(value, args)))
    if dataclasses.is_dataclass(tp):
        return config_from_dict(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected a bool, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an int, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported config field type {tp!r}")


def config_from_dict(cls, data: dict, path: str = "config"):
    """Build a (possibly nested) config dataclass, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected an object, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    kwargs = {k: _coerce(v, hints[k], f"{path}.{k}") for k, v in data.items()}
    return cls(**kwargs)


def apply_overrides(data: dict, sets: list[str]) -> dict:
    """Apply ``dotted.key=value`` overrides; values parse as JSON, else string."""
    for item in sets:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, raw = item.split("=", 1)
        keys = key.strip().split(".")
        if not all(keys):
            raise ConfigError(f"--set has an empty key segment: {item!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set {key}: {k} is not an object")
        node[keys[-1]] = value
    return data


def load_run_config(config_path: str | None, sets: list[str]) -> RunConfig:
    data: dict = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as f:
            try:
                data = json.load(f)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{config_path} is not valid JSON: {e}") from e
    data = apply_overrides(data, sets)
    # propagate the global seed unless sub-seeds are explicit
    if "seed" in data:
        for sub in ("dataset", "train"):
            block = data.setdefault(sub, {})
            if isinstance(block, dict):
                block.setdefault("seed", data["seed"])
    return config_from_dict(RunConfig, data)


def _dump_config(cfg: RunConfig, path: str) -> None:
    atomic_write_text(path, json.dumps(dataclasses.asdict(cfg), indent=1) + "\n")


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    cfg = load_run_config(args.config, args.set)
    out = args.out or cfg.paths.data_dir
    if not out:
        raise ConfigError("gen needs --out (or paths.data_dir in the config)")
    os.makedirs(out, exist_ok=True)
    records = []
    for case_id, split, seed in dataset_records(cfg.dataset):
        vol, mask = generate_phantom(dataclasses.replace(cfg.dataset.phantom, seed=seed))
        volcore.save(os.path.join(out, f"{case_id}_img"), vol)
        volcore.save(os.path.join(out, f"{case_id}_msk"), mask)
        records.append({"id": case_id, "split": split, "seed": seed,
                        "image": f"{case_id}_img", "mask": f"{case_id}_msk"})
    write_manifest(os.path.join(out, "manifest.json"), records)
    print(f"wrote {len(records)} cases to {out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_run_config(args.config, args.set)
    data = args.data or (os.path.join(cfg.paths.data_dir, "manifest.json")
                         if cfg.paths.data_dir else None)
    out = args.out or cfg.paths.out_dir
    if not data or not out:
        raise ConfigError("train needs --data MANIFEST and --out DIR")
    os.makedirs(out, exist_ok=True)
    cases = load_cases(data, split="train")
    start = load_checkpoint(args.resume) if args.resume else None
    result = train_cases(
        cases, cfg.train,
        unet_cfg=None if start else cfg.unet,
        start=start, rrs_level=start.rrs_level if start else 0,
        log_path=os.path.join(out, "loss_log.csv"),
        checkpoint_path=os.path.join(out, "model"),
    )
    _dump_config(cfg, os.path.join(out, "config_used.json"))
    last = result.history[-1].total if result.history else float("nan")
    print(f"trained {cfg.train.iterations} iterations; final loss {last:.4f}; "
          f"checkpoint at {os.path.join(out, 'model.json')}")
    return 0


def _cmd_refine(args) -> int:
    cfg = load_run_config(args.config, args.set)
    out = args.out or cfg.paths.out_dir
    if not args.data or not out:
        raise ConfigError("refine needs --data MANIFEST and --out DIR")
    os.makedirs(out, exist_ok=True)
    chain = [load_checkpoint(p) for p in args.checkpoints]
    cases = load_cases(args.data, split="train")
    while len(chain) <= cfg.rrs.levels:
        k = len(chain)
        result = rrs_level(chain, cases, cfg.rrs, cfg.train,
                           log_path=os.path.join(out, f"rrs{k}_loss_log.csv"))
        save_checkpoint(os.path.join(out, f"rrs{k}"), result.checkpoint)
        chain.append(result.checkpoint)
        print(f"refinement level {k} written to {os.path.join(out, f'rrs{k}.json')}")
    return 0


def _cmd_roi(args) -> int:
    cfg = load_run_config(args.config, args.set)
    vol = volcore.load(args.volume)
    if isinstance(vol, BinaryMask):
        raise ConfigError(f"{args.volume} holds a mask; roi expects an image volume")
    box = detect_roi(vol, percentile=cfg.roi.percentile,
                     smooth_sigma=cfg.roi.smooth_sigma, margin=cfg.roi.margin)
    print(f"roi lo={box.lo} hi={box.hi} shape={box.shape_xyz}")
    return 0


def _cmd_predict(args) -> int:
    cfg = load_run_config(args.config, args.set)
    vol = volcore.load(args.volume)
    if isinstance(vol, BinaryMask):
        raise ConfigError(f"{args.volume} holds a mask; predict expects an image volume")
    chain = [load_checkpoint(p) for p in args.checkpoints]

    if args.roi:
        box = detect_roi(vol, percentile=cfg.roi.percentile,
                         smooth_sigma=cfg.roi.smooth_sigma, margin=cfg.roi.margin)
        crop, actual = volcore.crop_with_margin(vol, box)
        prob_c, tm_c = predict_volume(chain, crop, cfg.tiling)
        background = Volume(np.zeros(vol.data.shape, dtype=np.float32), vol.spacing)
        prob = volcore.paste_back(background, actual, prob_c)
        neutral = Volume(np.full(vol.data.shape, 0.5, dtype=np.float32), vol.spacing)
        tm = volcore.paste_back(neutral, actual, tm_c)
    else:
        prob, tm = predict_volume(chain, vol, cfg.tiling)

    mask = binarize_and_filter(prob, tm, cfg.tiling)
    volcore.save(args.out + "_prob", prob)
    volcore.save(args.out + "_tm", tm)
    volcore.save(args.out + "_mask", mask)
    print(f"wrote {args.out}_prob/_tm/_mask ({mask.voxel_count} foreground voxels)")
    return 0


def _cmd_eval(args) -> int:
    base = os.path.dirname(os.path.abspath(args.data))
    rows = []
    for rec in read_manifest(args.data):
        if rec.get("split") != args.split:
            continue
        gt = volcore.load(os.path.join(base, rec["mask"]))
        pred_path = os.path.join(args.pred, rec["id"] + args.pred_suffix)
        pred = volcore.load(pred_path)
        if not isinstance(pred, BinaryMask) or not isinstance(gt, BinaryMask):
            raise ConfigError(f"case {rec['id']}: eval needs u8 mask grids")
        rows.append(evaluate_pair(rec["id"], pred, gt))
    if not rows:
        raise ConfigError(f"no cases with split {args.split!r} in {args.data}")
    report = build_report(rows)
    report.save(args.out)
    agg = report.aggregate
    print(f"{len(rows)} cases: dice={agg['dice']:.4f} jaccard={agg['jaccard']:.4f} "
          f"conform={agg['conform']:.4f} adb={agg['adb_mm']:.4f}mm "
          f"hdb={agg['hdb_mm']:.4f}mm ({report.degenerate_count} degenerate)")
    return 0


def _cmd_gradcheck(args) -> int:
    report = run_gradient_suite(tol=args.tol, seed=args.seed,
                                include_network=not args.ops_only)
    print(report.summary())
    print(f"{'PASS' if report.passed else 'FAIL'}: max relative error "
          f"{report.max_rel_err:.3e} (tolerance {report.tolerance:g})")
    return 0 if report.passed else 1


def _cmd_ablate(args) -> int:
    cfg = load_run_config(args.config, args.set)
    out = args.out or cfg.paths.out_dir
    if not out:
        raise ConfigError("ablate needs --out DIR")
    os.makedirs(out, exist_ok=True)
    train, test = benchmark_dataset(cfg.dataset)
    rungs = tuple(args.rungs) if args.rungs else None
    result = run_ablation(train, test, cfg.unet, cfg.train, cfg.rrs, cfg.tiling,
                          rungs=rungs or ("cel", "dcl", "dds", "ovl", "fpl", "rrs1", "rrs2"),
                          progress=print)
    result.save(os.path.join(out, "ablation"))
    for row in result.rows:
        row.report.save(os.path.join(out, f"metrics_{row.rung}"))
        for lvl, ckpt in enumerate(row.chain):
            suffix = "" if len(row.chain) == 1 else f"_level{lvl}"
            save_checkpoint(os.path.join(out, f"{row.rung}{suffix}"), ckpt)
    _dump_config(cfg, os.path.join(out, "config_used.json"))
    print(result.table())
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxseg",
        description="Volumetric segmentation on synthetic phantoms: data "
                    "generation, training, refinement, inference, evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config leaf (repeatable)")

    p = sub.add_parser("gen", help="generate a synthetic dataset + manifest")
    common(p)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=_cmd_gen)

    p = sub.add_parser("train", help="train a network on a manifest's train split")
    common(p)
    p.add_argument("--data", help="manifest path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--resume", help="checkpoint to resume from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("refine", help="add refinement levels on a checkpoint chain")
    common(p)
    p.add_argument("--data", help="manifest path")
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="existing chain, level 0 first")
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("roi", help="print the detected region of interest")
    common(p)
    p.add_argument("volume", help="image volume path")
    p.set_defaults(func=_cmd_roi)

    p = sub.add_parser("predict", help="segment one volume")
    common(p)
    p.add_argument("--checkpoints", nargs="+", required=True,
                   help="checkpoint chain, level 0 first")
    p.add_argument("--out", required=True, help="output stem")
    p.add_argument("--roi", action="store_true",
                   help="restrict inference to the detected ROI")
    p.add_argument("volume", help="image volume path")
    p.set_defaults(func=_cmd_predict)

    p = sub.add_parser("eval", help="score predictions against a manifest split")
    p.add_argument("--data", required=True, help="manifest path")
    p.add_argument("--pred", required=True, help="directory of predicted masks")
    p.add_argument("--split", default="test")
    p.add_argument("--pred-suffix", default="_mask",
                   help="prediction file suffix (default: _mask)")
    p.add_argument("--out", required=True, help="report output stem")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true",
                   help="skip the end-to-end tiny-network case")
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and score the loss-ablation ladder")
    common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--rungs", nargs="+",
                   choices=["cel", "dcl", "dds", "ovl", "fpl", "rrs1", "rrs2"],
                   help="subset of rungs (default: all)")
    p.set_defaults(func=_cmd_ablate)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except VoxsegError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
