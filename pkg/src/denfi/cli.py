"""``denfi`` command-line entry point."""
import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import _backend, tensorio
from .config import ConfigError, load_config
from .evaluation import EvalConfig, EvaluationError, evaluate_dataset, postprocess, records_from_labels
from .kitti import FormatError as KittiFormatError
from .kitti import bev_to_label, difficulty_of, label_to_bev, parse_calib, read_label_file, write_detections
from .pointcloud import FormatError as CloudFormatError
from .pointcloud import (PillarConfig, PillarNetParams, load_velodyne, pillar_feature_forward, pillarize,
                         scatter_to_dense)
from .targets import AssignConfig, GridSpec, build_target_maps, decode_proposal, proposal_to_box
from .tensorio import TensorFormatError

log = logging.getLogger("denfi")

DATA_ERRORS = (ConfigError, KittiFormatError, CloudFormatError, TensorFormatError, EvaluationError,
               FileNotFoundError, ValueError)


def _out_dir(args):
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _pillar_config(cfg):
    return PillarConfig(cfg.x_min, cfg.x_max, cfg.y_min, cfg.y_max, cfg.cell, cfg.max_pillars,
                        cfg.max_points, cfg.pillar_channels)


def _feature_grid(cfg):
    cell = cfg.feature_cell
    return GridSpec(int(round((cfg.y_max - cfg.y_min) / cell)), int(round((cfg.x_max - cfg.x_min) / cell)),
                    cfg.x_min, cfg.y_min, cell)


def cmd_pillarize(args, cfg):
    pcfg = _pillar_config(cfg)
    params = PillarNetParams.random(pcfg.channels, args.seed)
    out = _out_dir(args)
    h, w = pcfg.grid_shape

    def one(path):
        points = load_velodyne(path)
        pillars = pillarize(points, pcfg)
        image = scatter_to_dense(pillar_feature_forward(pillars, params), pillars.indices, h, w, pillars.count)
        stem = Path(path).stem
        tensorio.save(out / f"{stem}.pseudo_image.dnft", image)
        tensorio.save(out / f"{stem}.pillar_indices.dnft", pillars.indices[:pillars.count].astype(np.float64)
                      if pillars.count else np.full((1, 2), -1.0))
        ratio = float(pillars.valid_ratio().mean()) if pillars.count else 0.0
        return stem, len(points), pillars.count, ratio

    with ThreadPoolExecutor(max_workers=args.jobs) as pool:
        rows = list(pool.map(one, args.inputs))
    for stem, npts, count, ratio in sorted(rows):
        print(f"{stem}: {npts} points -> {count} pillars, mean valid-point ratio {ratio:.4f}, "
              f"pseudo-image {h}x{w}x{pcfg.channels}")
    return 0


def cmd_assign(args, cfg):
    cls = cfg.classes[args.cls]
    labels = [lb for lb in read_label_file(args.labels) if lb.category == args.cls]
    grid = _feature_grid(cfg)
    acfg = AssignConfig(cls.sigma1, cls.sigma2, 1)
    targets = build_target_maps([(label_to_bev(lb), 1) for lb in labels], grid, acfg, cfg.bins)
    out = _out_dir(args)
    tensorio.save(out / "class_target.dnft", targets.class_target.astype(np.float64))
    stacked = np.concatenate([targets.log_boundary, targets.bin[..., None], targets.residual[..., None]], axis=-1)
    tensorio.save(out / "reg_target.dnft", stacked)
    ct = targets.class_target
    print(f"{args.cls}: {len(labels)} boxes on {grid.height}x{grid.width} grid (cell {grid.cell:.2f} m)")
    print(f"positive {targets.n_pos}  ignore {int(np.sum(ct < 0))}  negative {int(np.sum(ct == 0))}")
    return 0


def cmd_decode(args, cfg):
    reg = tensorio.load(args.reg)
    proposal = decode_proposal(reg, args.scale, cfg.bins)
    out = _out_dir(args)
    tensorio.save(out / "proposal.dnft", proposal)
    print(f"proposal map {proposal.shape[0]}x{proposal.shape[1]}x5 written")
    if args.scores:
        scores = tensorio.load(args.scores)
        names = sorted(cfg.classes, key=lambda k: cfg.classes[k].class_id)
        grid = _feature_grid(cfg)
        if scores.shape[:2] != proposal.shape[:2]:
            raise ValueError(f"score map {scores.shape} does not match regression map {reg.shape}")
        labels = []
        best = scores.argmax(axis=-1)
        for i, j in zip(*np.nonzero(scores.max(axis=-1) >= args.threshold)):
            box = proposal_to_box(proposal[i, j], grid.pixel_center(i, j))
            labels.append(bev_to_label(box, names[best[i, j]], float(scores[i, j, best[i, j]])))
        (out / "detections.txt").write_text(write_detections(labels))
        print(f"{len(labels)} boxes with score >= {args.threshold}")
    return 0


def cmd_postprocess(args, cfg):
    ids = {name: c.class_id for name, c in cfg.classes.items()}
    names = {v: k for k, v in ids.items()}
    src = Path(args.detections)
    files = sorted(src.glob("*.txt")) if src.is_dir() else [src]
    out = _out_dir(args)
    for path in files:
        dets = records_from_labels(read_label_file(path), ids)
        kept = postprocess(dets, cfg.top_k, cfg.score_threshold, cfg.nms_threshold)
        labels = [bev_to_label(d.box, names[d.class_id], d.score) for d in kept]
        (out / path.name).write_text(write_detections(labels))
        print(f"{path.stem}: {len(dets)} -> {len(kept)} detections")
    return 0


def cmd_eval(args, cfg):
    thresholds = {name: c.iou_threshold for name, c in cfg.classes.items()}
    classes = (args.cls,) if args.cls else tuple(thresholds)
    ecfg = EvalConfig(thresholds, classes, allow_missing=args.allow_missing)
    result = evaluate_dataset(args.det, args.gt, ecfg)
    text = result.report()
    print(text)
    if args.out:
        (_out_dir(args) / "ap_report.txt").write_text(text + "\n")
    return 0


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_all

    ok = True
    for res in run_all(args.instances, args.seed, detach_proposal=args.detach_proposal):
        print(res.line())
        ok &= res.passed
    print("all gradient checks passed" if ok else "gradient check FAILED")
    return 0 if ok else 1


def cmd_overfit(args, cfg):
    from .losses import LossWeights
    from .overfit import run_overfit

    weights = LossWeights(cfg.lambda_b, cfg.lambda_theta, cfg.lambda_D, cfg.lambda_joint, cfg.focal_alpha,
                          cfg.focal_gamma)
    res = run_overfit(args.steps, args.lr, n=cfg.bins, weights=weights, log_every=args.log_every)
    print(f"final dbpm_loss {res.final_loss:.6f}  min IoU over {res.n_pos} positive pixels {res.min_iou:.4f}  "
          f"auto-scale {res.scale:.4f}")
    return 0


def cmd_bench(args, cfg):
    from .bench import report

    text, _, _ = report(args.channels, args.size, args.repeats, args.seed)
    print(text)
    return 0


def cmd_render(args, cfg):
    from .render import render_svg

    points = None
    if args.points:
        cloud = load_velodyne(args.points)
        if args.calib:
            calib = parse_calib(Path(args.calib).read_text(), args.calib)
            rect = calib.velo_to_rect(cloud)
            points = np.stack([rect[:, 0], rect[:, 2]], axis=-1)
        else:
            points = cloud[:, :2]
    gts = []
    if args.labels:
        gts = [(label_to_bev(lb), difficulty_of(lb)) for lb in read_label_file(args.labels)
               if lb.category != "DontCare"]
    dets = [label_to_bev(lb) for lb in read_label_file(args.dets)] if args.dets else []
    svg = render_svg(points, gts, dets)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(svg)
    else:
        sys.stdout.write(svg)
    return 0


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI run configuration")
    common.add_argument("--out", help="output directory (file for render)")
    common.add_argument("--class", dest="cls", help="object category, e.g. Car")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--detach-proposal", action="store_true",
                        help="cut gradients from DENFIConv into the boundary proposal")
    common.add_argument("--jobs", type=int, default=1)

    parser = argparse.ArgumentParser(prog="denfi", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pillarize", parents=[common], help="velodyne .bin -> pseudo-image dump")
    p.add_argument("inputs", nargs="+")
    p.set_defaults(func=cmd_pillarize)

    p = sub.add_parser("assign", parents=[common], help="KITTI labels -> target maps")
    p.add_argument("labels")
    p.set_defaults(func=cmd_assign, cls="Car")

    p = sub.add_parser("decode", parents=[common], help="regression dump -> proposal map / boxes")
    p.add_argument("reg")
    p.add_argument("--scores")
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--threshold", type=float, default=0.05)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("postprocess", parents=[common], help="top-k, score filter and rotated NMS")
    p.add_argument("detections", help="detection file or directory of frame files")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("eval", parents=[common], help="BEV AP40 tables")
    p.add_argument("--det", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--allow-missing", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suites")
    p.add_argument("--instances", type=int, default=50)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("overfit", parents=[common], help="single-box gradient-descent demo")
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--log-every", type=int, default=100)
    p.set_defaults(func=cmd_overfit)

    p = sub.add_parser("bench", parents=[common], help="DC3x3 vs DSDC timing and MAC counts")
    p.add_argument("-C", "--channels", type=int, default=384)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--repeats", type=int, default=3)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("render", parents=[common], help="SVG of points, ground truth and detections")
    p.add_argument("--points")
    p.add_argument("--calib")
    p.add_argument("--labels")
    p.add_argument("--dets")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None):
    logging.basicConfig(level=os.environ.get("DENFI_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        cfg = load_config(args.config)
        if getattr(args, "cls", None) and args.cls not in cfg.classes:
            parser.error(f"unknown class {args.cls!r}; choose from {', '.join(cfg.classes)}")
        log.debug("kernel backend: %s", _backend.name)
        return args.func(args, cfg)
    except DATA_ERRORS as exc:
        print(f"denfi {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
