"""Command-line entry point: synth / depth / fuse / eval.

``synth`` renders a scene description into a dataset directory, ``depth``
estimates one depth + confidence PFM per reference view and writes a JSON
report with per-stage timings and hypothesis-storage bytes, ``fuse`` filters
and merges the depth maps into a PLY point cloud (dumping the filter masks),
and ``eval`` compares a predicted cloud against ground truth.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .dataset import Dataset, load_dataset, write_dataset
from .fusion import FilterParams, fuse, geometric_filter, photometric_filter, read_ply, write_ply
from .geometry import back_project
from .harness import CDF_ABSCISSAE, error_cdf, eval_clouds, load_scene, render
from .hypothesis import StageConfig
from .imgio import read_pfm, write_pfm
from .pipeline import PipelineConfig, run_cascade
from .coeffs import load_coefficients

logger = logging.getLogger("patchmvs")

__all__ = ["main", "build_parser", "cmd_synth", "cmd_depth", "cmd_fuse", "cmd_eval"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="patchmvs",
        description="Cascade Patchmatch multi-view stereo engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="render a scene file into a dataset")
    p_synth.add_argument("scene", type=Path, help="scene description file")
    p_synth.add_argument("out_dir", type=Path, help="dataset directory to create")

    p_depth = sub.add_parser("depth", help="estimate per-view depth maps")
    p_depth.add_argument("dataset", type=Path)
    p_depth.add_argument("out_dir", type=Path)
    p_depth.add_argument("--views", type=int, default=5, help="views per estimation (reference + sources)")
    p_depth.add_argument("--seed", type=int, default=0)
    p_depth.add_argument("--stage-iters", default="2,2,1", help="iterations per stage, coarse to fine")
    p_depth.add_argument("--temperature", type=float, default=None)
    p_depth.add_argument("--no-ap", action="store_true", help="fixed-grid propagation offsets")
    p_depth.add_argument("--no-ae", action="store_true", help="fixed, unweighted spatial aggregation")
    p_depth.add_argument("--no-view-weight", action="store_true", help="uniform view weights")
    p_depth.add_argument("--coefficients", type=Path, default=None, help="coefficient file for learned blocks")
    p_depth.add_argument("--ref-views", default=None, help="comma-separated reference view indices (default: all)")

    p_fuse = sub.add_parser("fuse", help="fuse filtered depth maps into a point cloud")
    p_fuse.add_argument("dataset", type=Path)
    p_fuse.add_argument("depth_dir", type=Path, help="output directory of the depth command")
    p_fuse.add_argument("out_ply", type=Path)
    p_fuse.add_argument("--conf-min", type=float, default=FilterParams.conf_min)
    p_fuse.add_argument("--reproj-max", type=float, default=FilterParams.reproj_max)
    p_fuse.add_argument("--rel-depth-max", type=float, default=FilterParams.relative_depth_max)
    p_fuse.add_argument("--min-views", type=int, default=FilterParams.min_consistent_views)

    p_eval = sub.add_parser("eval", help="compare a predicted cloud with ground truth")
    p_eval.add_argument("pred_ply", type=Path)
    p_eval.add_argument("--gt-cloud", type=Path, default=None, help="ground-truth PLY")
    p_eval.add_argument("--dataset", type=Path, default=None, help="dataset with gt_depths/ for the truth cloud")
    p_eval.add_argument("--depths", type=Path, default=None, help="depth output dir (adds the error CDF table)")
    p_eval.add_argument("--cap", type=float, default=None, help="distance cap (default: 20x median truth spacing)")
    p_eval.add_argument("--json", type=Path, default=None, help="also write the report as JSON")
    return parser


def cmd_synth(args) -> int:
    scene = load_scene(args.scene)
    views = render(scene)
    write_dataset(
        args.out_dir,
        images=[v.image for v in views],
        cams=scene.cameras,
        gt_depths=[v.depth for v in views],
    )
    logger.info("wrote %d views to %s", len(views), args.out_dir)
    return 0


def _pipeline_config(args) -> PipelineConfig:
    iters = [int(tok) for tok in args.stage_iters.split(",")]
    if len(iters) != 3 or min(iters) < 1:
        raise SystemExit(f"--stage-iters needs three counts >= 1, got {args.stage_iters!r}")
    cfg = PipelineConfig(seed=args.seed)
    stages = tuple(
        dataclasses.replace(s, iterations=n) for s, n in zip(cfg.stages, iters)
    )
    coeffs = load_coefficients(args.coefficients) if args.coefficients else None
    return PipelineConfig(
        stages=stages,
        temperature=args.temperature if args.temperature else cfg.temperature,
        adaptive_propagation=not args.no_ap,
        adaptive_evaluation=not args.no_ae,
        view_weighting=not args.no_view_weight,
        seed=args.seed,
        feature_mode="coefficients" if coeffs is not None and coeffs.has_block("fpn") else "handcrafted",
        coefficients=coeffs,
    )


def _select_sources(num_views: int, ref: int, wanted: int) -> list[int]:
    """Reference first, then every other view in index order, capped."""
    order = [ref] + [i for i in range(num_views) if i != ref]
    return order[:wanted]


def cmd_depth(args) -> int:
    data = load_dataset(args.dataset)
    cfg = _pipeline_config(args)
    wanted = args.views
    if wanted > len(data):
        logger.warning(
            "requested %d views but dataset has %d; clamping", wanted, len(data)
        )
        wanted = len(data)
    if wanted < 2:
        raise SystemExit("need at least 2 views")

    refs = range(len(data))
    if args.ref_views:
        refs = [int(tok) for tok in args.ref_views.split(",")]

    depth_dir = args.out_dir / "depths"
    conf_dir = args.out_dir / "confidence"
    depth_dir.mkdir(parents=True, exist_ok=True)
    conf_dir.mkdir(exist_ok=True)

    report: dict = {"views": {}, "config": {"views": wanted, "seed": args.seed}}
    total_start = time.perf_counter()
    for ref in refs:
        chosen = _select_sources(len(data), ref, wanted)
        result = run_cascade(
            [data.images[i] for i in chosen], [data.cams[i] for i in chosen], cfg
        )
        name = data.names[ref]
        write_pfm(depth_dir / f"{name}.pfm", result.depth)
        write_pfm(conf_dir / f"{name}.pfm", result.confidence)
        report["views"][name] = {
            "seconds": result.seconds,
            "hypothesis_bytes": [
                {"stage": s, "iteration": i, "bytes": b}
                for s, i, b in result.hypothesis_bytes
            ],
            "peak_hypothesis_bytes": max(b for _, _, b in result.hypothesis_bytes),
            "degenerate": result.degenerate,
        }
        logger.info("view %s done in %.2fs", name, sum(result.seconds.values()))
    report["total_seconds"] = time.perf_counter() - total_start
    with open(args.out_dir / "report.json", "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
    return 0


def cmd_fuse(args) -> int:
    data = load_dataset(args.dataset)
    params = FilterParams(
        conf_min=args.conf_min,
        reproj_max=args.reproj_max,
        relative_depth_max=args.rel_depth_max,
        min_consistent_views=args.min_views,
    )
    depths, confidences = [], []
    for name in data.names:
        depths.append(read_pfm(args.depth_dir / "depths" / f"{name}.pfm"))
        confidences.append(read_pfm(args.depth_dir / "confidence" / f"{name}.pfm"))

    photo = [
        photometric_filter(d, c, params.conf_min) for d, c in zip(depths, confidences)
    ]
    geo = geometric_filter(depths, data.cams, params)
    masks = [p & g for p, g in zip(photo, geo)]

    mask_dir = args.out_ply.parent / "masks"
    mask_dir.mkdir(parents=True, exist_ok=True)
    for name, mask in zip(data.names, masks):
        write_pfm(mask_dir / f"{name}_mask.pfm", mask.astype(np.float32))

    cloud = fuse(depths, masks, data.images, data.cams, params)
    if len(cloud) == 0:
        raise SystemExit("fusion produced no surviving points; relax the filter thresholds")
    args.out_ply.parent.mkdir(parents=True, exist_ok=True)
    write_ply(cloud, args.out_ply)
    logger.info("wrote %d points to %s", len(cloud), args.out_ply)
    return 0


def _gt_cloud_from_dataset(data: Dataset) -> np.ndarray:
    if data.gt_depths is None:
        raise SystemExit(f"{data.root}: dataset has no gt_depths/")
    parts = []
    for depth, cam in zip(data.gt_depths, data.cams):
        pts = back_project(depth, cam)
        parts.append(pts[depth > 0])
    return np.concatenate(parts)


def cmd_eval(args) -> int:
    pred = read_ply(args.pred_ply)
    if len(pred) == 0:
        raise SystemExit(f"{args.pred_ply}: empty prediction cloud")
    data = None
    if args.gt_cloud is not None:
        gt_points = read_ply(args.gt_cloud).points
    elif args.dataset is not None:
        data = load_dataset(args.dataset)
        gt_points = _gt_cloud_from_dataset(data)
    else:
        raise SystemExit("eval needs --gt-cloud or --dataset")
    if gt_points.shape[0] == 0:
        raise SystemExit("empty ground-truth cloud")

    metrics = eval_clouds(pred.points, gt_points, args.cap)
    print(f"accuracy     {metrics.accuracy:.6f}")
    print(f"completeness {metrics.completeness:.6f}")
    print(f"overall      {metrics.overall:.6f}")

    report = {
        "accuracy": metrics.accuracy,
        "completeness": metrics.completeness,
        "overall": metrics.overall,
        "distance_cap": metrics.distance_cap,
    }

    if args.depths is not None:
        if data is None or data.gt_depths is None:
            raise SystemExit("--depths needs --dataset with gt_depths/")
        cdf_acc = np.zeros(len(CDF_ABSCISSAE))
        for i, name in enumerate(data.names):
            pred_depth = read_pfm(args.depths / "depths" / f"{name}.pfm")
            rng = (data.cams[i].depth_min, data.cams[i].depth_max)
            _, cdf = error_cdf(pred_depth, data.gt_depths[i], rng)
            cdf_acc += cdf
        cdf_acc /= len(data.names)
        print("error-cdf (normalized inverse-depth error -> fraction of pixels)")
        for t, v in zip(CDF_ABSCISSAE[::5], cdf_acc[::5]):
            print(f"  <= {t:4.2f}  {v:.4f}")
        report["error_cdf"] = {
            "abscissae": CDF_ABSCISSAE.tolist(),
            "cdf": cdf_acc.tolist(),
        }

    if args.json is not None:
        with open(args.json, "w", encoding="utf-8") as f:
            json.dump(report, f, indent=2)
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    commands = {
        "synth": cmd_synth,
        "depth": cmd_depth,
        "fuse": cmd_fuse,
        "eval": cmd_eval,
    }
    return commands[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
