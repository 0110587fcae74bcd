"""Command-line front end: synth, segment, train, predict, evaluate, ablate.

Exit codes: 0 success, 2 usage or input error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import statistics
import sys
from pathlib import Path

import numpy as np

from mdgcn import datacube as dc
from mdgcn.dyngcn import load_checkpoint, save_checkpoint
from mdgcn.errors import MDGCNError, NumericError
from mdgcn.evaluate import encode_ppm, evaluate, load_palette, render_map
from mdgcn.graph import save_edge_list
from mdgcn.pipeline import Prepared, fit, predict, prepare
from mdgcn.superpixel import boundary_mask, save_segmentation, slic_segment
from mdgcn.synthetic import block_scene
from mdgcn.train import TrainConfig, parse_variant

log = logging.getLogger("mdgcn")

EXIT_USAGE = 2
EXIT_NUMERIC = 3


class UsageError(Exception):
    pass


def _scales(text: str) -> tuple[int, ...]:
    try:
        scales = tuple(int(s) for s in text.split(",") if s.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated hop counts, got {text!r}")
    if not scales or min(scales) < 1:
        raise argparse.ArgumentTypeError("hop counts must be >= 1")
    return scales


def _existing(path: str | None, flag: str) -> Path | None:
    if path is None:
        return None
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{flag}: no such file: {p}")
    return p


def _add_segment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=None, help="target superpixel count (default ceil(H*W/100))")
    p.add_argument("--m", type=float, default=0.1, help="SLIC compactness")
    p.add_argument("--slic-iters", type=int, default=10)


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--split", help="split file (row,col,class,role); generated when omitted")
    p.add_argument("--per-class", type=int, default=30)
    p.add_argument("--val-fraction", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    _add_segment_args(p)
    p.add_argument("--gamma", type=float, default=0.2)
    p.add_argument("--scales", type=_scales, default=(1, 2, 3))
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden", type=int, default=20)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--beta", type=float, default=0.01)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--lr", type=float, default=0.0005)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true", help="log progress")
    parser = argparse.ArgumentParser(prog="mdgcn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, **kw) -> argparse.ArgumentParser:
        return sub.add_parser(name, parents=[common], **kw)

    p = add("synth", help="write a block-structured synthetic cube and label map")
    p.add_argument("--out", required=True)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--bands", type=int, default=16)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--blocks", type=int, default=4)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)

    p = add("segment", help="SLIC segmentation export and boundary overlay")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    _add_segment_args(p)

    p = add("train", help="segment, build graphs and train")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--variant", default="mdgcn", help="mdgcn | fixed-graph | single-scale=<s>")
    p.add_argument("--export-graphs", action="store_true", help="also write per-scale edge lists")
    _add_train_args(p)

    for name, needs_labels in (("predict", False), ("evaluate", True)):
        p = add(name, help="apply a trained run" + (" and score it" if needs_labels else ""))
        p.add_argument("--cube", required=True)
        p.add_argument("--labels", required=needs_labels)
        p.add_argument("--run", required=True, help="output directory of a train run")
        p.add_argument("--checkpoint", help="default <run>/model.mdgc")
        p.add_argument("--split", help="pixels to exclude from scoring (default <run>/split.csv)")
        p.add_argument("--palette", help="class,r,g,b lines")
        p.add_argument("--map", help="PPM output path (default <out>/map.ppm)")
        p.add_argument("--out", required=True)

    p = add("ablate", help="run every ablation variant over several seeds")
    p.add_argument("--cube", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n-seeds", type=int, default=5)
    _add_train_args(p)
    return parser


def _train_config(args, variant: str, seed: int | None = None) -> TrainConfig:
    return TrainConfig(
        iterations=args.iters, learning_rate=args.lr, scales=args.scales, layers=args.layers,
        hidden=args.hidden, alpha=args.alpha, beta=args.beta,
        seed=args.seed if seed is None else seed, variant=variant,
    )


def _load_inputs(args) -> tuple[dc.DataCube, dc.LabelMap | None]:
    cube = dc.load_cube(_existing(args.cube, "--cube"))
    labels = None
    if getattr(args, "labels", None):
        labels = dc.load_labels(_existing(args.labels, "--labels"), cube)
    return cube, labels


def _resolve_k(args, cube: dc.DataCube) -> int:
    return args.k if args.k is not None else math.ceil(cube.height * cube.width / 100)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cube, labels = block_scene(args.height, args.width, args.bands, args.classes, args.blocks, args.noise, args.seed)
    dc.save_cube(out / "cube.hsic", cube)
    dc.save_labels(out / "labels.hsil", labels)
    print(f"wrote {out / 'cube.hsic'} and {out / 'labels.hsil'}")
    return 0


def _overlay(cube: dc.DataCube, seg) -> bytes:
    gray = dc.standardize(cube).values.mean(axis=2)
    lo, hi = gray.min(), gray.max()
    gray = np.zeros_like(gray) if hi == lo else (gray - lo) / (hi - lo)
    rgb = np.repeat((gray * 255).round().astype(np.uint8)[:, :, None], 3, axis=2)
    rgb[boundary_mask(seg)] = (255, 0, 0)
    return encode_ppm(rgb)


def cmd_segment(args) -> int:
    cube = dc.load_cube(_existing(args.cube, "--cube"))
    seg = slic_segment(dc.standardize(cube), _resolve_k(args, cube), args.m, args.slic_iters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_segmentation(out / "segmentation.csv", seg)
    (out / "boundaries.ppm").write_bytes(_overlay(cube, seg))
    print(f"M = {seg.n_segments}")
    return 0


def _split(args, labels: dc.LabelMap, seed: int) -> dc.SplitSpec:
    if args.split:
        return dc.load_split(_existing(args.split, "--split"), labels)
    return dc.sample_training_pixels(labels, args.per_class, args.val_fraction, seed)


def _prepare(args, cube, scales) -> Prepared:
    return prepare(cube, _resolve_k(args, cube), args.m, args.slic_iters, args.gamma, scales)


def cmd_train(args) -> int:
    cube, labels = _load_inputs(args)
    config = _train_config(args, args.variant)
    split = _split(args, labels, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dc.save_split(out / "split.csv", split)

    prep = _prepare(args, cube, config.active_scales)
    log.info("%d superpixels", prep.segmentation.n_segments)
    if args.export_graphs:
        for g in prep.graphs:
            save_edge_list(out / f"graph_s{g.scale}.csv", g)
    result, _, val_nodes = fit(prep, split, config, labels.n_classes)
    save_checkpoint(out / "model.mdgc", result.best_model)
    save_checkpoint(out / "final.mdgc", result.model)
    result.save_history(out / "history.csv")

    resolved = {
        "cube": str(Path(args.cube).resolve()),
        "labels": str(Path(args.labels).resolve()),
        "split": str((out / "split.csv").resolve()),
        "per_class": args.per_class,
        "val_fraction": args.val_fraction,
        "k": _resolve_k(args, cube),
        "m": args.m,
        "slic_iters": args.slic_iters,
        "gamma": args.gamma,
        "n_classes": labels.n_classes,
        "n_superpixels": prep.segmentation.n_segments,
        "best_iteration": result.best_iteration,
        "train": config.to_dict(),
    }
    (out / "config.json").write_text(json.dumps(resolved, indent=2) + "\n")
    final_acc = result.history[-1][2]
    print(f"final val_acc = {final_acc:.4f} (best checkpoint at iteration {result.best_iteration})")
    return 0


def _apply_run(args) -> tuple[np.ndarray, dc.DataCube, dc.LabelMap | None, dict, Path]:
    run = Path(args.run)
    config_path = _existing(str(run / "config.json"), "--run")
    resolved = json.loads(config_path.read_text())
    cube, labels = _load_inputs(args)
    model = load_checkpoint(_existing(args.checkpoint or str(run / "model.mdgc"), "--checkpoint"))
    tc = resolved["train"]
    config = TrainConfig(**{**tc, "scales": tuple(tc["scales"])})
    if model.bands != cube.bands:
        raise UsageError(f"checkpoint expects {model.bands} bands but the cube has {cube.bands}")
    if model.n_scales != len(config.active_scales):
        raise UsageError(f"checkpoint has {model.n_scales} scales, run config implies {len(config.active_scales)}")
    prep = prepare(cube, resolved["k"], resolved["m"], resolved["slic_iters"], resolved["gamma"], config.active_scales)
    return predict(prep, model, config), cube, labels, resolved, run


def _write_map(args, pred: np.ndarray, out: Path) -> Path:
    palette = load_palette(_existing(args.palette, "--palette")) if args.palette else None
    target = Path(args.map) if args.map else out / "map.ppm"
    target.write_bytes(render_map(pred, palette))
    return target


def cmd_predict(args) -> int:
    pred, *_ = _apply_run(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dc.save_labels(out / "prediction.hsil", dc.LabelMap(pred))
    print(f"map written to {_write_map(args, pred, out)}")
    return 0


def cmd_evaluate(args) -> int:
    pred, cube, labels, resolved, run = _apply_run(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    split_path = args.split or resolved.get("split")
    split = dc.load_split(_existing(split_path, "--split"), labels) if split_path else None
    report = evaluate(pred, labels, exclude=split)
    report.save(out / "report.json")
    _write_map(args, pred, out)
    print(f"OA = {report.oa:.4f}  AA = {report.aa:.4f}  kappa = {report.kappa:.4f}")
    return 0


def cmd_ablate(args) -> int:
    cube, labels = _load_inputs(args)
    variants = ["mdgcn", "fixed_graph"] + [f"single_scale={s}" for s in args.scales]
    prep = _prepare(args, cube, args.scales)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i in range(args.n_seeds):
        seed = args.seed + i
        split = _split(args, labels, seed)
        for variant in variants:
            config = _train_config(args, variant, seed)
            result, _, _ = fit(prep, split, config, labels.n_classes)
            report = evaluate(predict(prep, result.best_model, config), labels, exclude=split)
            rows.append((variant, seed, report.oa, report.aa, report.kappa))
            log.info("%s seed %d: OA %.4f", variant, seed, report.oa)
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "oa", "aa", "kappa"])
        writer.writerows(rows)
    for variant in variants:
        oas = [r[2] for r in rows if r[0] == variant]
        print(f"{variant:16s} median OA {statistics.median(oas):.4f}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "segment": cmd_segment,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if hasattr(args, "variant"):
            parse_variant(args.variant)
        return COMMANDS[args.command](args)
    except NumericError as exc:
        print(f"mdgcn: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (UsageError, MDGCNError, OSError) as exc:
        print(f"mdgcn: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
