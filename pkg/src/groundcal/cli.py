"""Command-line interface.

Exit codes: 0 success, 2 layout or config error, 3 ground alignment never
achieved, 4 refinement failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import dataio
from .edges import EmptyProjectionError, extract_image_edges, extract_occlusion_edges
from .geometry import RigidTransform
from .ground_init import NoGroundError, segment_ground
from .pipeline import (
    AlignmentExhaustedError,
    PipelineConfig,
    SequenceView,
    evaluate_calibration,
    render_overlay,
    run_calibration,
)
from .refine import InsufficientCorrespondencesError, RankDeficientError
from .sim import InvalidSpecError, generate_frames


def _cmd_simulate(args) -> int:
    try:
        spec = dataio.load_scene_spec(args.spec)
        frames = generate_frames(spec)
    except (dataio.DatasetLayoutError, InvalidSpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    dataio.write_dataset(args.out_dir, frames, spec.rig.intrinsics, spec.rig.extrinsic)
    print(f"wrote {len(frames)} frames to {args.out_dir}")
    return 0


def _cmd_calibrate(args) -> int:
    root = args.dataset
    try:
        if args.kitti:
            converted = root.rstrip("/\\") + "_dataset"
            dataio.convert_kitti(root, converted)
            root = converted
        cfg = PipelineConfig()
        if args.config:
            with open(args.config) as f:
                cfg = PipelineConfig.from_pairs(dataio.parse_config_text(f.read()))
        if args.seed is not None:
            cfg.seed = args.seed
        if args.no_gp_init:
            cfg.use_gp_init = False
        ds = dataio.load_dataset(root)
        view = SequenceView.from_dataset(ds)
    except (dataio.DatasetLayoutError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    try:
        result = run_calibration(view, cfg)
    except AlignmentExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InsufficientCorrespondencesError, RankDeficientError, NoGroundError,
            EmptyProjectionError) as exc:
        print(f"refinement failed: {exc}", file=sys.stderr)
        return 4

    out_dir = os.path.join(root, "output")
    os.makedirs(out_dir, exist_ok=True)
    dataio.write_extrinsic(os.path.join(out_dir, "estimated_extrinsic.txt"), result.estimate)
    with open(os.path.join(out_dir, "report.json"), "w") as f:
        json.dump(result.report.to_dict(), f, indent=2, sort_keys=True)

    if args.overlay:
        ref = result.reference_frame
        pts, _ = ds.cloud(ref)
        seg = segment_ground(pts, cell_size=cfg.cell_size)
        k = ds.intrinsics
        before = render_overlay(seg.non_ground, (k.width, k.height), result.initial_extrinsic, k)
        after = render_overlay(seg.non_ground, (k.width, k.height), result.estimate, k)
        dataio.write_ppm(os.path.join(out_dir, "overlay_before.ppm"), before)
        dataio.write_ppm(os.path.join(out_dir, "overlay_after.ppm"), after)

    rep = result.report
    print(f"reference frame: {rep.reference_frame}")
    print(f"correspondences: {rep.correspondence_count}   converged: {rep.converged}")
    print(
        "timing [s]: init {init_guess_s:.3f}  calibration {calibration_s:.3f}  "
        "total {total_s:.3f}".format(**rep.timing)
    )
    if rep.translation_error_xyz is not None:
        tx, ty, tz = rep.translation_error_xyz
        rr, rp, ry = rep.rotation_error_rpy
        print(f"translation error [cm]: x {tx:.3f}  y {ty:.3f}  z {tz:.3f}")
        print(f"rotation error [deg]: roll {rr:.4f}  pitch {rp:.4f}  yaw {ry:.4f}")
    print(f"estimate written to {out_dir}")
    return 0


def _cmd_evaluate(args) -> int:
    try:
        est = dataio.read_extrinsic(args.estimate)
        truth = dataio.read_extrinsic(args.truth)
    except (dataio.DatasetLayoutError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    trans, rot = evaluate_calibration(est, truth)
    print(f"translation error [cm]: x {trans[0]:.4f}  y {trans[1]:.4f}  z {trans[2]:.4f}")
    print(f"rotation error [deg]: roll {rot[0]:.4f}  pitch {rot[1]:.4f}  yaw {rot[2]:.4f}")
    return 0


def _cmd_edges(args) -> int:
    try:
        if args.kind == "image":
            img = dataio.read_pgm(args.path)
            segments = extract_image_edges(img)
            lines = ["frame,x0,y0,x1,y1,strength"]
            lines += [
                f"0,{s.p0[0]:.17g},{s.p0[1]:.17g},{s.p1[0]:.17g},{s.p1[1]:.17g},{s.strength:.17g}"
                for s in segments
            ]
        else:
            pts, _ = dataio.read_cloud(args.path)
            if args.extrinsic is None or args.intrinsics is None:
                print("error: edges cloud requires --extrinsic and --intrinsics", file=sys.stderr)
                return 2
            t = dataio.read_extrinsic(args.extrinsic)
            k = dataio.read_intrinsics(args.intrinsics)
            seg = segment_ground(pts, cell_size=args.cell_size)
            points = extract_occlusion_edges(seg, t, k)
            lines = ["x,y,z,cluster,kind"]
            lines += [
                f"{p.position[0]:.17g},{p.position[1]:.17g},{p.position[2]:.17g},"
                f"{p.cluster_id},{p.kind}"
                for p in points
            ]
    except (dataio.DatasetLayoutError, NoGroundError, EmptyProjectionError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="groundcal",
        description="Targetless LiDAR-camera extrinsic calibration via ground-plane "
        "initialization and edge matching.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="render a synthetic dataset from a scene file")
    p_sim.add_argument("spec", help="scene description (key = value text file)")
    p_sim.add_argument("out_dir", help="output dataset directory")

    p_cal = sub.add_parser("calibrate", help="run the two-stage calibration on a dataset")
    p_cal.add_argument("dataset")
    p_cal.add_argument("--no-gp-init", action="store_true",
                       help="skip ground-plane initialization (ablation mode)")
    p_cal.add_argument("--config", help="key = value pipeline config file")
    p_cal.add_argument("--overlay", action="store_true",
                       help="write before/after projection overlays (PPM)")
    p_cal.add_argument("--seed", type=int, default=None)
    p_cal.add_argument("--kitti", action="store_true",
                       help="treat the input as a KITTI raw directory and convert it first")

    p_eval = sub.add_parser("evaluate", help="compare an estimated extrinsic against truth")
    p_eval.add_argument("estimate")
    p_eval.add_argument("truth")

    p_edges = sub.add_parser("edges", help="debug dump of extracted edges")
    p_edges.add_argument("kind", choices=["image", "cloud"])
    p_edges.add_argument("path")
    p_edges.add_argument("--out")
    p_edges.add_argument("--extrinsic")
    p_edges.add_argument("--intrinsics")
    p_edges.add_argument("--cell-size", type=float, default=0.3, dest="cell_size")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return _cmd_simulate(args)
    if args.command == "calibrate":
        return _cmd_calibrate(args)
    if args.command == "evaluate":
        return _cmd_evaluate(args)
    if args.command == "edges":
        return _cmd_edges(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
