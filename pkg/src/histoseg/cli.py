"""Command line entry point: explore, prepare, train, evaluate, report.

Each subcommand reads the INI config (plus ``--set section.key=value``
overrides), runs one pipeline stage, and leaves its artifacts under the
configured output directory:

    explore   summary.json, target.json, split.json
    prepare   prepared/<variant>/roles.json and <id>.hsp archives
    train     best.ckpt, last.ckpt, train_log.csv
    evaluate  results.csv, pred/<id>.png
    report    report/boxplot_<metric>.svg, report/overlay_<id>.png,
              report/results.csv

Reruns with the same config and seeds reproduce artifacts byte for byte
(the wall_seconds column of train_log.csv excepted). Exit codes: 0 success,
2 configuration problems, 1 anything else (diagnostic names the stage).
"""

from __future__ import annotations

import argparse
import shutil
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import explore as ex
from . import metrics as me
from . import preprocess as pp
from . import report as rp
from .config import PipelineConfig, load_config
from .errors import ConfigError, EmptyDataset, HistosegError
from .fixture import make_fixture
from .mask_codec import (
    SuperclassTable,
    read_label_png,
    read_superclass_table,
    write_image_png,
    write_label_png,
)
from .nn import Tensor, build_unet, load_checkpoint, save_checkpoint
from .train import fit, save_train_log

COMMANDS = ("explore", "prepare", "train", "evaluate", "report", "make-fixture")


def _table(cfg: PipelineConfig) -> SuperclassTable:
    if cfg.superclass_table is None:
        return SuperclassTable()
    return read_superclass_table(cfg.superclass_table)


def _resolve_roots(data_root: Path) -> tuple[Path, Path | None]:
    """single/multi subdirectories when present, else a flat single root."""
    single = data_root / "single"
    if (single / "images").is_dir():
        multi = data_root / "multi"
        return single, multi if (multi / "images").is_dir() else None
    return data_root, None


def _load_stage(cfg: PipelineConfig, name: str, loader, producer: str):
    path = cfg.output_dir / name
    if not path.is_file():
        raise ConfigError(f"{path} is missing; run '{producer}' first")
    return loader(path)


def _roles(cfg: PipelineConfig, split: ex.SplitIndex) -> pp.VariantRoles:
    single_root, multi_root = _resolve_roots(cfg.data_root)
    single_ids = ex.list_sample_ids(single_root)
    multi_ids = ex.list_sample_ids(multi_root) if multi_root else []
    return pp.assemble_variant(cfg.variant, split, single_ids, multi_ids)


def _eval_root(cfg: PipelineConfig) -> Path:
    single_root, multi_root = _resolve_roots(cfg.data_root)
    if cfg.variant == pp.COMBINED_MULTIRATER_EVAL:
        if multi_root is None:
            raise ConfigError(f"variant {cfg.variant} needs a multi/ dataset under {cfg.data_root}")
        return multi_root
    return single_root


def cmd_explore(cfg: PipelineConfig) -> None:
    table = _table(cfg)
    single_root, _ = _resolve_roots(cfg.data_root)
    summary = ex.scan_dataset(single_root, table)
    target = ex.compute_target_shape(summary, cfg.divisor)
    split = ex.make_split(ex.list_sample_ids(single_root), cfg.ratios, cfg.split_seed)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    ex.save_summary(summary, cfg.output_dir / "summary.json")
    ex.save_target(target, cfg.output_dir / "target.json")
    ex.save_split(split, cfg.output_dir / "split.json")
    print(
        f"explored {summary.n_samples} samples: max {summary.max_height}x{summary.max_width}, "
        f"target side {target.side}, split {len(split.train)}/{len(split.val)}/{len(split.eval)}"
    )


def cmd_prepare(cfg: PipelineConfig) -> None:
    table = _table(cfg)
    target = _load_stage(cfg, "target.json", ex.load_target, "explore")
    split = _load_stage(cfg, "split.json", ex.load_split, "explore")
    roles = _roles(cfg, split)
    single_root, _ = _resolve_roots(cfg.data_root)
    eval_root = _eval_root(cfg)
    var_dir = cfg.output_dir / "prepared" / cfg.variant
    var_dir.mkdir(parents=True, exist_ok=True)
    pp.save_roles(roles, var_dir / "roles.json")

    jobs = [(sample_id, single_root) for sample_id in roles.train + roles.val]
    jobs += [(sample_id, eval_root) for sample_id in roles.eval]

    def work(job):
        sample_id, root = job
        sample = pp.load_tile_sample(root, sample_id, cfg.loc_columns)
        ps = pp.prepare_sample(
            sample, table, target, strip_bbox=roles.strip_bbox, anchor=cfg.crop_anchor
        )
        pp.save_prepared(ps, var_dir / f"{sample_id}.hsp")

    workers = ex.worker_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, jobs))
    else:
        for job in jobs:
            work(job)
    print(f"prepared {len(jobs)} samples for variant {cfg.variant} -> {var_dir}")


def cmd_train(cfg: PipelineConfig) -> None:
    table = _table(cfg)
    target = _load_stage(cfg, "target.json", ex.load_target, "explore")
    split = _load_stage(cfg, "split.json", ex.load_split, "explore")
    roles = _roles(cfg, split)
    single_root, _ = _resolve_roots(cfg.data_root)
    staged_train = pp.stage_dataset(
        single_root, roles.train, table, roles.strip_bbox, cfg.crop_anchor, cfg.loc_columns
    )
    staged_val = pp.stage_dataset(
        single_root, roles.val, table, roles.strip_bbox, cfg.crop_anchor, cfg.loc_columns
    )
    net = build_unet(replace(cfg.network, input_side=target.side), cfg.net_seed)
    best, log = fit(net, staged_train, staged_val, cfg.trainer, target)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    save_checkpoint(best, cfg.output_dir / "best.ckpt")
    save_checkpoint(net, cfg.output_dir / "last.ckpt")
    save_train_log(log, cfg.output_dir / "train_log.csv")
    last = log.rows[-1]
    print(
        f"trained {len(log.rows)} epochs (best epoch {log.best_epoch}); "
        f"final val loss {last.val_loss:.4f}, lr {last.lr:g}"
    )


def cmd_evaluate(cfg: PipelineConfig) -> None:
    ckpt = cfg.output_dir / "best.ckpt"
    if not ckpt.is_file():
        raise ConfigError(f"{ckpt} is missing; run 'train' first")
    net = load_checkpoint(ckpt)
    split = _load_stage(cfg, "split.json", ex.load_split, "explore")
    roles = _roles(cfg, split)
    if not roles.eval:
        raise EmptyDataset("the evaluation id list is empty for this variant/split")
    var_dir = cfg.output_dir / "prepared" / cfg.variant
    pairs = []
    batch = cfg.trainer.batch_size
    prepared = []
    for sample_id in roles.eval:
        archive = var_dir / f"{sample_id}.hsp"
        if not archive.is_file():
            raise ConfigError(f"{archive} is missing; run 'prepare' first")
        prepared.append(pp.load_prepared(archive))
    for start in range(0, len(prepared), batch):
        chunk = prepared[start : start + batch]
        xs = np.stack([s.pixels.transpose(2, 0, 1) for s in chunk])
        probs = net.forward(Tensor(xs)).data
        preds = probs.argmax(axis=1)
        for i, sample in enumerate(chunk):
            truth = sample.onehot.argmax(axis=-1)
            pairs.append((preds[i], truth))
    result = me.evaluate_dataset(pairs, classes=cfg.metric_classes, sample_ids=roles.eval)
    me.save_results(result, cfg.output_dir / "results.csv")
    pred_dir = cfg.output_dir / "pred"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for sample_id, (pred, _) in zip(roles.eval, pairs):
        write_label_png(pred_dir / f"{sample_id}.png", pred)
    means = " ".join(f"{m}={getattr(result.overall, m):.3f}" for m in me.METRIC_NAMES)
    print(f"evaluated {len(roles.eval)} samples: {means}")


def _display_tile(image01: np.ndarray, target: ex.TargetShape) -> np.ndarray:
    h, w = image01.shape[:2]
    if h <= target.side and w <= target.side:
        canvas = pp.pad_to_shape(image01, target)
    else:
        canvas = pp.resize_to_shape(image01, target, "image")
    return np.clip(np.rint(canvas * 255.0), 0, 255).astype(np.uint8)


def cmd_report(cfg: PipelineConfig) -> None:
    results_path = cfg.output_dir / "results.csv"
    if not results_path.is_file():
        raise ConfigError(f"{results_path} is missing; run 'evaluate' first")
    rows = me.load_result_rows(results_path)
    report_dir = cfg.output_dir / "report"
    rp.render_boxplots(rows, report_dir)
    shutil.copyfile(results_path, report_dir / "results.csv")

    table = _table(cfg)
    target = _load_stage(cfg, "target.json", ex.load_target, "explore")
    split = _load_stage(cfg, "split.json", ex.load_split, "explore")
    roles = _roles(cfg, split)
    eval_root = _eval_root(cfg)
    pred_dir = cfg.output_dir / "pred"
    overlays = 0
    for sample_id in roles.eval:
        pred_path = pred_dir / f"{sample_id}.png"
        if not pred_path.is_file():
            raise ConfigError(f"{pred_path} is missing; run 'evaluate' first")
        sample = pp.load_tile_sample(eval_root, sample_id, cfg.loc_columns)
        image01, _ = pp.stage_sample(sample, table, strip_bbox=False, anchor=cfg.crop_anchor)
        tile = _display_tile(image01, target)
        overlay = rp.render_overlay(tile, read_label_png(pred_path), cfg.overlay_alpha)
        write_image_png(report_dir / f"overlay_{sample_id}.png", overlay)
        overlays += 1
    print(f"report written to {report_dir} ({len(rows)} result rows, {overlays} overlays)")


def cmd_make_fixture(cfg: PipelineConfig) -> None:
    fx = cfg.fixture
    root = make_fixture(
        cfg.data_root, n_single=fx.n_single, n_multi=fx.n_multi, side=fx.side, seed=fx.seed
    )
    print(f"fixture with {fx.n_single}+{fx.n_multi} samples at {fx.side}x{fx.side} -> {root}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="histoseg", description="nucleus segmentation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="INI config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a config entry (repeatable)",
        )
        if name == "explore":
            p.add_argument("--root", help="dataset root (shorthand for paths.data_root)")
            p.add_argument("--divisor", type=int, help="target-shape divisor")
            p.add_argument("--seed", type=int, help="split seed")
            p.add_argument("--ratios", help="train,val,eval ratios, e.g. 0.6,0.2,0.2")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    command = args.command
    overrides = list(args.overrides)
    if command == "explore":
        if args.root:
            overrides.insert(0, f"paths.data_root={args.root}")
            if args.config is None:
                overrides.insert(1, "paths.output_dir=out")
        if args.divisor is not None:
            overrides.append(f"dataset.divisor={args.divisor}")
        if args.seed is not None:
            overrides.append(f"dataset.seed={args.seed}")
        if args.ratios is not None:
            overrides.append(f"dataset.ratios={args.ratios}")
    handlers = {
        "explore": cmd_explore,
        "prepare": cmd_prepare,
        "train": cmd_train,
        "evaluate": cmd_evaluate,
        "report": cmd_report,
        "make-fixture": cmd_make_fixture,
    }
    try:
        cfg = load_config(args.config, overrides, check_paths=command != "make-fixture")
        handlers[command](cfg)
    except ConfigError as exc:
        print(f"histoseg {command}: config error: {exc}", file=sys.stderr)
        return 2
    except HistosegError as exc:
        print(f"histoseg {command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
