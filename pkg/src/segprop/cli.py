"""Command-line entry points.

Exit codes: 0 on success, 2 on validation/usage errors, 3 on numerical
non-convergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .engine import config_from_overrides, run_image
from .fixtures import SCENARIOS, synth_fixture
from .graph import GraphConstructionError
from .grids import LabelMap, ScoreGrid, label_upsample_nearest
from .manifest import ManifestError, load_manifest
from .metrics import BoundaryParams, ConfusionAccumulator, boundary_iou, miou, oracle_patch_resolution
from .pipeline import argmax_labels, refine_pixel_scores
from .render import render_labels
from .solver import ConvergenceError
from .tensorio import TensorIOError, read_tensor, write_tensor
from .windows import WindowPlanError, resize_shorter_side

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NONCONVERGENCE = 3

_VALIDATION_ERRORS = (
    ManifestError,
    GraphConstructionError,
    WindowPlanError,
    TensorIOError,
    ValueError,
    FileNotFoundError,
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    cfg = parser.add_argument_group("config overrides")
    cfg.add_argument("--config", type=Path, help="JSON file with config overrides")
    cfg.add_argument("--alpha", type=float, help="propagation damping (default 0.95)")
    cfg.add_argument("--k", type=int, help="patch-graph neighbors (default 400)")
    cfg.add_argument("--gamma", type=float, help="appearance exponent (default 3.0)")
    cfg.add_argument("--sigma", type=float, help="spatial bandwidth (default 100)")
    cfg.add_argument("--r", type=int, help="pixel neighborhood side (default 13)")
    cfg.add_argument("--tau", type=float, help="color bandwidth (default 0.01)")
    cfg.add_argument("--win", type=int, help="window size (default 224)")
    cfg.add_argument("--stride", type=int, help="window stride (default 112)")
    cfg.add_argument("--short-side", type=int, help="resize shorter side (default 448)")
    cfg.add_argument("--patch", type=int, help="patch size in pixels (default 16)")
    cfg.add_argument(
        "--initial-scores",
        choices=("vlm_dot", "dinoiser", "external"),
        help="source of the initial per-patch scores",
    )


def _cli_overrides(args: argparse.Namespace) -> list[dict]:
    maps = []
    if getattr(args, "config", None):
        maps.append(json.loads(Path(args.config).read_text()))
    flags = {
        "alpha": args.alpha,
        "k": args.k,
        "gamma": args.gamma,
        "sigma": args.sigma,
        "r": args.r,
        "tau": args.tau,
        "win": args.win,
        "stride": args.stride,
        "short_side": args.short_side,
        "patch": args.patch,
        "initial_scores": args.initial_scores,
    }
    maps.append({k: v for k, v in flags.items() if v is not None})
    return maps


def _build_config(manifest, args: argparse.Namespace):
    return config_from_overrides(manifest.config, *_cli_overrides(args))


def _iter_images(manifest, image_id: str | None):
    if image_id is None:
        return manifest.images
    return [manifest.image(image_id)]


def _cmd_synth(args) -> int:
    path = synth_fixture(args.scenario, args.seed, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def _cmd_propagate(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _build_config(manifest, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in _iter_images(manifest, args.image):
        result = run_image(manifest, spec, cfg, pixel_stage=False, ensemble=args.ensemble)
        write_tensor(result["scores"].data.astype(np.float32), out / f"{spec.id}_scores.lpt")
        write_tensor(result["labels"].labels, out / f"{spec.id}_labels.lpt")
        print(f"{spec.id}: wrote patch-level scores and labels")
    return EXIT_OK


def _cmd_refine(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _build_config(manifest, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scores_dir = Path(args.scores)
    for spec in _iter_images(manifest, args.image):
        scores = ScoreGrid(read_tensor(scores_dir / f"{spec.id}_scores.lpt"))
        work = resize_shorter_side(manifest.load_rgb(spec), cfg.shorter_side)
        refined = refine_pixel_scores(scores, work, cfg.pixel_graph, cfg.propagation)
        labels = argmax_labels(refined)
        if spec.gt is not None:
            gt = manifest.load_gt(spec)
            if (gt.height, gt.width) != (labels.height, labels.width):
                labels = label_upsample_nearest(labels, gt.height, gt.width)
        write_tensor(refined.data.astype(np.float32), out / f"{spec.id}_scores.lpt")
        write_tensor(labels.labels, out / f"{spec.id}_labels.lpt")
        print(f"{spec.id}: wrote pixel-refined scores and labels")
    return EXIT_OK


def _cmd_run(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = _build_config(manifest, args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in _iter_images(manifest, args.image):
        result = run_image(
            manifest,
            spec,
            cfg,
            pixel_stage=not args.no_pixel_stage,
            ensemble=args.ensemble,
        )
        write_tensor(result["scores"].data.astype(np.float32), out / f"{spec.id}_scores.lpt")
        write_tensor(result["labels"].labels, out / f"{spec.id}_labels.lpt")
        print(f"{spec.id}: wrote final scores and labels")
    return EXIT_OK


def _metric_table(names, per_iou, mean_iou, per_biou, mean_biou) -> str:
    lines = [f"{'class':<20s} {'IoU':>8s} {'BIoU':>8s}"]
    for idx, name in enumerate(names):
        iou = per_iou[idx] if idx < len(per_iou) else float("nan")
        biou = per_biou[idx] if idx < len(per_biou) else float("nan")
        lines.append(f"{name:<20s} {iou:>8.2f} {biou:>8.2f}")
    lines.append(f"{'mean':<20s} {mean_iou:>8.2f} {mean_biou:>8.2f}")
    return "\n".join(lines)


def _cmd_evaluate(args) -> int:
    manifest = load_manifest(args.manifest)
    if not manifest.class_names:
        raise ManifestError("manifest lists no class names")
    num_classes = len(manifest.class_names)
    acc = ConfusionAccumulator(num_classes)
    boundary_per = []
    pred_dir = Path(args.pred)
    params = BoundaryParams(dilation_ratio=args.dilation_ratio)
    for spec in _iter_images(manifest, args.image):
        gt = manifest.load_gt(spec)
        pred = LabelMap(read_tensor(pred_dir / f"{spec.id}_labels.lpt"))
        acc.update(pred, gt)
        per_b, _ = boundary_iou(pred, gt, params)
        padded = np.full(num_classes, np.nan)
        padded[: per_b.size] = per_b[:num_classes]
        boundary_per.append(padded)
    per_iou, mean_iou = miou(acc)
    stacked = np.vstack(boundary_per)
    with np.errstate(invalid="ignore"):
        per_biou = np.nanmean(stacked, axis=0)
    mean_biou = float(np.nanmean(per_biou))
    print(_metric_table(manifest.class_names, per_iou, mean_iou, per_biou, mean_biou))
    if args.report:
        report = {
            "miou": round(mean_iou, 4),
            "boundary_iou": round(mean_biou, 4),
            "per_class_iou": [None if np.isnan(v) else round(float(v), 4) for v in per_iou],
            "per_class_boundary_iou": [
                None if np.isnan(v) else round(float(v), 4) for v in per_biou
            ],
            "classes": list(manifest.class_names),
        }
        Path(args.report).write_text(json.dumps(report, indent=2) + "\n")
    return EXIT_OK


def _cmd_oracle(args) -> int:
    manifest = load_manifest(args.manifest)
    rows = []
    for spec in _iter_images(manifest, args.image):
        gt = manifest.load_gt(spec)
        mean_iou, mean_biou = oracle_patch_resolution(gt, args.patch)
        rows.append((spec.id, mean_iou, mean_biou))
        print(f"{spec.id}: mIoU {mean_iou:.2f}  BIoU {mean_biou:.2f}")
    if len(rows) > 1:
        avg_iou = sum(r[1] for r in rows) / len(rows)
        avg_biou = sum(r[2] for r in rows) / len(rows)
        print(f"mean: mIoU {avg_iou:.2f}  BIoU {avg_biou:.2f}")
    return EXIT_OK


def _cmd_render(args) -> int:
    labels = LabelMap(read_tensor(args.labels))
    render_labels(labels, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="segprop",
        description="Graph label propagation over sliding-window patch scores "
        "and color pixel graphs, with mIoU / Boundary IoU evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic fixture")
    p.add_argument("--scenario", required=True, choices=SCENARIOS)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_synth)

    for name, func, desc in (
        ("propagate", _cmd_propagate, "patch-level propagation to image scores"),
        ("run", _cmd_run, "full pipeline: propagate, pixel refine, decide"),
    ):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--manifest", required=True, type=Path)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--image", help="restrict to one image id")
        p.add_argument("--ensemble", action="store_true", help="average two window setups")
        if name == "run":
            p.add_argument(
                "--no-pixel-stage", action="store_true", help="skip pixel-level refinement"
            )
        _add_config_flags(p)
        p.set_defaults(func=func)

    p = sub.add_parser("refine", help="pixel-level refinement of stored scores")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--scores", required=True, type=Path, help="directory with *_scores.lpt")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--image", help="restrict to one image id")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_refine)

    p = sub.add_parser("evaluate", help="mIoU and Boundary IoU against ground truth")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--pred", required=True, type=Path, help="directory with *_labels.lpt")
    p.add_argument("--image", help="restrict to one image id")
    p.add_argument("--report", type=Path, help="write a JSON report here")
    p.add_argument("--dilation-ratio", type=float, default=0.02)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("oracle", help="patch-resolution round-trip bound on ground truth")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--patch", type=int, default=16)
    p.add_argument("--image", help="restrict to one image id")
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("render", help="label map tensor to indexed PNG")
    p.add_argument("--labels", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.set_defaults(func=_cmd_render)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
