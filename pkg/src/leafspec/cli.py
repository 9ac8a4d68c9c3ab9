"""Command-line entry point.

Commands: gen-data, ingest, train, eval, predict.  Parameters resolve from a
flat key=value config file first, then flag overrides; every command writes
its resolved configuration next to its outputs so runs can be reproduced.

Exit codes: 0 success, 1 runtime failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import glob as globmod
import json
import sys
from pathlib import Path

import numpy as np

from .annotations import (
    AnnotationError,
    SplitAssignment,
    build_semantic_mask,
    dataset_statistics,
    parse_labelme,
    split_dataset,
    write_statistics_csv,
)
from .data import PlateDataset
from .labels import CLASS_NAMES, ClassLabel
from .metrics import write_confusion_csv, write_report_csv
from .model.checkpoint import load_checkpoint, save_checkpoint
from .model.config import ModelConfig, auto_patch
from .model.postprocess import compose_instance_masks, semantic_from_instances, semantic_from_scores
from .plots import plot_confusion, plot_history, plot_metric_bars, save_overlay, save_panel
from .raster_io import read_image, read_mask, write_mask
from .synth import default_plate_spec, default_signatures, gen_dataset
from .spectral import BandManifest
from .training import TrainConfig, evaluate, oracle_report, train, write_history_csv

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def read_config_file(path: str) -> dict:
    values: dict[str, str] = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise UsageError(f"config line is not key=value: {line!r}")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def write_run_config(args: argparse.Namespace, out_dir: Path) -> None:
    skip = {"func", "config"}
    lines = [
        f"{k} = {v}"
        for k, v in sorted(vars(args).items())
        if k not in skip and v is not None
    ]
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_config.txt").write_text("\n".join(lines) + "\n")


def cmd_gen_data(args) -> int:
    if args.n < 1:
        raise UsageError(f"--n must be >= 1, got {args.n}")
    out = Path(args.out)
    manifest = BandManifest.default()
    signatures = default_signatures(manifest, args.chlorosis_rgb_contrast)
    spec = default_plate_spec(frame_size=args.frame_size, seed=args.seed, day=args.day)
    entries = gen_dataset(args.n, spec, out, signatures=signatures, manifest=manifest)
    write_run_config(args, out)
    print(f"wrote {len(entries)} plates to {out} (manifest.csv, class_balance.csv)")
    return EXIT_OK


def cmd_ingest(args) -> int:
    ann_dir = Path(args.annotations)
    files = sorted(ann_dir.glob("*.json"))
    if not files:
        raise UsageError(f"no annotation JSON files in {ann_dir}")
    out = Path(args.out)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    sets, skipped = [], 0
    for f in files:
        result = parse_labelme(f.read_text(), sample_id=f.stem)
        skipped += result.skipped_shapes
        sets.append(result.annotations)
        write_mask(build_semantic_mask(result.annotations), out / "masks" / f"{f.stem}.pgm")
    write_statistics_csv(dataset_statistics(sets), out / "class_balance.csv")
    if len(sets) >= 2:
        split = split_dataset([s.sample_id for s in sets], args.val_fraction, args.seed)
        (out / "split.json").write_text(split.to_json())
    write_run_config(args, out)
    msg = f"ingested {len(sets)} annotation files -> {out}"
    if skipped:
        msg += f" ({skipped} non-polygon shapes skipped)"
    print(msg)
    return EXIT_OK


def _load_split(args, dataset: PlateDataset) -> SplitAssignment:
    if args.split:
        path = Path(args.split)
        if not path.exists():
            raise UsageError(f"split file not found: {path}")
        return SplitAssignment.from_json(path.read_text())
    return split_dataset(dataset.sample_ids, args.val_fraction, args.seed)


def cmd_train(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise UsageError(f"dataset manifest not found: {manifest_path}")
    dataset = PlateDataset(manifest_path)
    split = _load_split(args, dataset)
    size = dataset.frame_size()
    model_cfg = ModelConfig(
        in_channels=args.channels,
        input_size=size,
        width_multiple=args.width_multiple,
        depth_multiple=args.depth_multiple,
        head=args.head,
        tf_patch=args.tf_patch if args.tf_patch else auto_patch(size),
        tf_dim=args.tf_dim,
        tf_heads=args.tf_heads,
        tf_layers=args.tf_layers,
        mask_proto_channels=args.proto_channels,
    )
    train_cfg = TrainConfig(
        epochs=args.epochs,
        lr=args.lr,
        momentum=args.momentum,
        batch_size=args.batch_size,
        seed=args.seed,
        class_weighting=args.class_weighting,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(args, out)
    (out / "split.json").write_text(split.to_json())
    ckpt, history = train(
        model_cfg, train_cfg, dataset, split.train_ids, split.val_ids,
        log_every=args.log_every,
    )
    if ckpt.metrics.get("diverged"):
        print("training diverged; last finished epoch retained", file=sys.stderr)
        write_history_csv(history, out / "history.csv")
        save_checkpoint(ckpt, out / "last.npz")
        return EXIT_RUNTIME
    write_history_csv(history, out / "history.csv")
    plot_history(history, out / "training_curves.png")
    save_checkpoint(ckpt, out / "best.npz")
    print(f"best epoch {ckpt.epoch}: mAP50 {ckpt.metrics.get('map50'):.4f} -> {out / 'best.npz'}")
    return EXIT_OK


def _eval_ids(args, dataset: PlateDataset) -> list[str]:
    if args.subset == "all":
        return dataset.sample_ids
    split = _load_split(args, dataset)
    return split.val_ids if args.subset == "val" else split.train_ids


def cmd_eval(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise UsageError(f"dataset manifest not found: {manifest_path}")
    dataset = PlateDataset(manifest_path)
    ids = _eval_ids(args, dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(args, out)

    if args.oracle:
        report = oracle_report(dataset, ids)
        write_report_csv(report, out / "report.csv")
        write_confusion_csv(report.confusion, out / "confusion.csv")
        plot_confusion(report.confusion, out / "confusion.png", title="oracle")
        print(f"oracle report -> {out} (mean IoU {report.mean.iou:.4f})")
        return EXIT_OK

    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    _check_channels(ckpt, dataset)
    report = evaluate(ckpt, dataset, ids, args.conf_thresh, args.nms_iou, out_dir=out)
    plot_confusion(report.confusion, out / "confusion.png", title=ckpt_path.stem)
    reports = {ckpt_path.stem: report}

    if args.compare:
        other_path = Path(args.compare)
        if not other_path.exists():
            raise UsageError(f"checkpoint not found: {other_path}")
        other = load_checkpoint(other_path)
        _check_channels(other, dataset)
        other_report = evaluate(other, dataset, ids, args.conf_thresh, args.nms_iou)
        reports[other_path.stem] = other_report
        _write_comparison(report, other_report, ckpt_path.stem, other_path.stem,
                          out / "comparison.csv")
        plot_confusion(other_report.confusion, out / f"confusion_{other_path.stem}.png",
                       title=other_path.stem)
    plot_metric_bars(reports, out / "metric_bars.png")
    print(f"evaluation of {len(ids)} samples -> {out} "
          f"(mean IoU {report.mean.iou:.4f}, mean Dice {report.mean.dice:.4f}, "
          f"mAP50 {report.map50:.4f})")
    return EXIT_OK


def _check_channels(ckpt, dataset: PlateDataset) -> None:
    have = dataset.image(dataset.sample_ids[0]).channels
    need = ckpt.config.in_channels
    if need > have:
        raise UsageError(
            f"checkpoint expects {need} channels but dataset images have {have}"
        )


def _write_comparison(rep_a, rep_b, name_a: str, name_b: str, path: Path) -> None:
    lines = [f"class,iou_{name_a},iou_{name_b},iou_delta,"
             f"dice_{name_a},dice_{name_b},dice_delta"]
    for cls in ClassLabel:
        a, b = rep_a.per_class[cls], rep_b.per_class[cls]
        lines.append(
            f"{CLASS_NAMES[cls]},{a.iou:.4f},{b.iou:.4f},{a.iou - b.iou:+.4f},"
            f"{a.dice:.4f},{b.dice:.4f},{a.dice - b.dice:+.4f}"
        )
    ma, mb = rep_a.mean, rep_b.mean
    lines.append(
        f"mean,{ma.iou:.4f},{mb.iou:.4f},{ma.iou - mb.iou:+.4f},"
        f"{ma.dice:.4f},{mb.dice:.4f},{ma.dice - mb.dice:+.4f}"
    )
    path.write_text("\n".join(lines) + "\n")


def cmd_predict(args) -> int:
    import torch

    paths: list[str] = []
    for pattern in args.images:
        paths.extend(sorted(globmod.glob(pattern)))
    if not paths:
        raise UsageError(f"no images match {args.images}")
    ckpt_path = Path(args.ckpt)
    if not ckpt_path.exists():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    ckpt = load_checkpoint(ckpt_path)
    model = ckpt.build_model()
    compare_model = None
    if args.compare:
        compare_model = load_checkpoint(Path(args.compare)).build_model()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(args, out)

    failures = 0
    for p in paths:
        try:
            img = read_image(p)
            mask = _predict_mask(model, img, args)
            stem = Path(p).stem
            write_mask(mask, out / f"{stem}_mask.pgm")
            save_overlay(img, mask, out / f"{stem}_overlay.png")
            panels = []
            if args.gt:
                gt_path = Path(args.gt) / f"{stem}.pgm"
                if gt_path.exists():
                    panels.append(("ground truth", read_mask(gt_path)))
            panels.append((ckpt_path.stem, mask))
            if compare_model is not None:
                panels.append((Path(args.compare).stem, _predict_mask(compare_model, img, args)))
            if len(panels) > 1:
                save_panel(img, panels, out / f"{stem}_panel.png")
        except Exception as exc:  # continue the batch, report at the end
            print(f"error on {p}: {exc}", file=sys.stderr)
            failures += 1
    print(f"predicted {len(paths) - failures}/{len(paths)} images -> {out}")
    return EXIT_OK if failures == 0 else EXIT_RUNTIME


def _predict_mask(model, img, args):
    import torch

    from .spectral import select_bands

    pixels = img.pixels if model.cfg.in_channels == img.channels else select_bands(img).pixels
    with torch.no_grad():
        out = model(torch.from_numpy(pixels).unsqueeze(0))
    if args.route == "instances":
        instances = compose_instance_masks(out, model.cfg, args.conf_thresh, args.nms_iou)
        return semantic_from_instances(instances, img.height, img.width)
    thresholded, _ = semantic_from_scores(out.semantic_map)
    return thresholded


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="leafspec",
        description="Multi-spectral leaf anomaly segmentation pipeline",
    )
    parser.add_argument("--config", help="flat key=value config file; flags override")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic plate dataset")
    p.add_argument("--n", type=int, default=160)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--frame-size", type=int, default=640)
    p.add_argument("--day", type=int, default=17)
    p.add_argument("--chlorosis-rgb-contrast", type=float, default=0.4)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("ingest", help="parse annotations into masks + stats + split")
    p.add_argument("--annotations", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("train", help="train a model variant")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--channels", type=int, choices=(3, 9), default=9)
    p.add_argument("--head", choices=("conv", "transformer"), default="transformer")
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--momentum", type=float, default=0.99)
    p.add_argument("--batch-size", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width-multiple", type=float, default=0.5)
    p.add_argument("--depth-multiple", type=float, default=0.33)
    p.add_argument("--tf-dim", type=int, default=128)
    p.add_argument("--tf-heads", type=int, default=4)
    p.add_argument("--tf-layers", type=int, default=2)
    p.add_argument("--tf-patch", type=int, default=0, help="0 = auto")
    p.add_argument("--proto-channels", type=int, default=16)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--split", help="existing split.json to reuse")
    p.add_argument("--class-weighting", action="store_true",
                   help="inverse-frequency class weights in the semantic loss")
    p.add_argument("--log-every", type=int, default=10)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on a split")
    p.add_argument("--ckpt")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split")
    p.add_argument("--subset", choices=("val", "train", "all"), default="val")
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--compare", help="second checkpoint for a side-by-side table")
    p.add_argument("--oracle", action="store_true",
                   help="score ground truth against itself")
    p.add_argument("--conf-thresh", type=float, default=0.25)
    p.add_argument("--nms-iou", type=float, default=0.45)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="segment images with a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--gt", help="directory of <stem>.pgm ground-truth masks")
    p.add_argument("--compare", help="second checkpoint for side-by-side panels")
    p.add_argument("--route", choices=("semantic", "instances"), default="semantic")
    p.add_argument("--conf-thresh", type=float, default=0.25)
    p.add_argument("--nms-iou", type=float, default=0.45)
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        # Two-phase parse so --config supplies defaults that flags override.
        pre, _ = parser.parse_known_args(argv)
        if pre.config:
            values = read_config_file(pre.config)
            for action in parser._subparsers._group_actions[0].choices[pre.command]._actions:
                if action.dest in values:
                    action.default = _coerce(values[action.dest], action)
        args = parser.parse_args(argv)
        if args.command == "eval" and args.ckpt is None and not args.oracle:
            raise UsageError("eval requires --ckpt (or --oracle)")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (AnnotationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _coerce(value: str, action: argparse.Action):
    if action.type is not None:
        return action.type(value)
    if isinstance(action, argparse._StoreTrueAction):
        return value.lower() in ("1", "true", "yes")
    return value


if __name__ == "__main__":
    sys.exit(main())
