"""Command-line interface: ``boxfit3d {synth,fit,eval,gradcheck,train-toy}``.

Exit status is 0 on success, 2 on usage errors and 1 on data errors.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .detection import PipelineConfig, run_pipeline
from .errors import BoxFitError
from .kitti import (
    KittiLabel,
    emit_kitti_calib,
    emit_kitti_labels,
    emit_kitti_predictions,
    emit_predictions,
    parse_kitti_calib,
    parse_kitti_label_file,
    parse_predictions,
)
from .metrics import (
    DIFFICULTY,
    KINDS,
    EvalCriterion,
    average_localization_precision,
    average_orientation_similarity,
    average_precision,
    select_class,
)
from .synth import SynthConfig, candidate_list, generate_dataset

_CRITERION_ALIASES = {"iou2d": "2d", "ioubev": "bev", "iou3d": "3d"}


def _criterion(text):
    kind = _CRITERION_ALIASES.get(text, text)
    if kind not in KINDS:
        raise argparse.ArgumentTypeError(f"invalid choice {text!r} (choose from {', '.join(KINDS)})")
    return kind


def _unit_interval(text):
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"{text} is not in [0, 1]")
    return v


def _int_range(text):
    lo, _, hi = text.partition(",")
    try:
        lo, hi = int(lo), int(hi or lo)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or LO,HI, got {text!r}") from None
    if lo < 0 or lo > hi:
        raise argparse.ArgumentTypeError(f"bad range {text!r}")
    return lo, hi


def _frames(directory: Path):
    return sorted(p.stem for p in directory.glob("*.txt"))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    config = SynthConfig(n_objects=args.n_objects, noise_scale=args.noise_scale, seed=args.seed)
    out = Path(args.out_dir)
    for sub in ("calib", "label_2", "predictions"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for idx, synth in enumerate(generate_dataset(config, args.n_scenes)):
        name = f"{idx:06d}.txt"
        scene = synth.scene
        gt = [KittiLabel.from_box(o.label, o.box3d, o.box2d, truncated=0.0, occluded=0) for o in scene.objects]
        cands = candidate_list(synth, config, noisy=args.noise_scale > 0, rng=[args.seed, idx],
                               n_background=args.background)
        (out / "calib" / name).write_text(emit_kitti_calib(scene.camera))
        (out / "label_2" / name).write_text(emit_kitti_labels(gt))
        (out / "predictions" / name).write_text(emit_predictions(cands))
    print(f"wrote {args.n_scenes} scenes to {out}")
    return 0


def cmd_fit(args):
    data = Path(args.data_dir)
    pred_dir = data / "predictions"
    frames = _frames(pred_dir)
    if not frames:
        raise FileNotFoundError(f"no prediction files in {pred_dir}")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    config = PipelineConfig(score_thresh=args.score_thresh, nms_thresh=args.nms_thresh, compute_covariance=False)
    n_det = n_fail = 0
    for frame in frames:
        camera = parse_kitti_calib((data / "calib" / f"{frame}.txt").read_text())
        cands = parse_predictions((pred_dir / f"{frame}.txt").read_text(), camera)
        res = run_pipeline(cands, config)
        (out / f"{frame}.txt").write_text(emit_kitti_predictions(res.detections))
        n_det += len(res.detections)
        n_fail += len(res.failures)
        for cand, exc in res.failures:
            print(f"{frame}: dropped {cand.label} candidate: {exc}", file=sys.stderr)
    print(f"fitted {n_det} detections in {len(frames)} frames ({n_fail} failed fits) -> {out}")
    return 0


def _load_eval(gt_dir: Path, det_dir: Path):
    frames = _frames(gt_dir)
    if not frames:
        raise FileNotFoundError(f"no label files in {gt_dir}")
    if not det_dir.is_dir():
        raise FileNotFoundError(f"detection directory {det_dir} does not exist")
    dets, gts = [], []
    for frame in frames:
        gts.append([lb.to_eval() for lb in parse_kitti_label_file((gt_dir / f"{frame}.txt").read_text())])
        path = det_dir / f"{frame}.txt"
        text = path.read_text() if path.exists() else ""
        dets.append([lb.to_eval() for lb in parse_kitti_label_file(text)])
    return dets, gts


def cmd_eval(args):
    dets, gts = _load_eval(Path(args.gt_dir), Path(args.det_dir))
    levels = [args.difficulty] if args.difficulty else ["all", *DIFFICULTY]
    crit = EvalCriterion(args.criterion, args.iou_thresh, args.max_dist)
    print(f"class {args.class_name}  criterion {args.criterion}  IoU >= {args.iou_thresh}  {args.points}-point")
    print(f"{'difficulty':<10s} {'AP':>8s} {'AOS':>8s} {'ALP':>8s}")
    for level in levels:
        d, g = select_class(dets, gts, args.class_name, None if level == "all" else level)
        ap = average_precision(d, g, crit, args.points)
        aos = average_orientation_similarity(d, g, args.iou_thresh, args.points)
        alp = average_localization_precision(d, g, args.max_dist, args.iou_thresh, args.points)
        print(f"{level:<10s} {ap:8.4f} {aos:8.4f} {alp:8.4f}")
    return 0


def cmd_gradcheck(args):
    from .gradcheck import run_all

    results = run_all(quick=args.quick)
    failed = [r.name for r in results if not r.passed]
    print("all gradient checks passed" if not failed else f"FAILED: {', '.join(failed)}")
    return 1 if failed else 0


def cmd_train_toy(args):
    from .training import finetune_method3, make_regressor, make_toy_problem, pretrain_method2

    config = SynthConfig(n_objects=(1, 3), seed=args.seed)
    problem, stats = make_toy_problem(args.n_scenes, args.n_features, seed=args.seed, config=config)
    reg = make_regressor(problem, stats, hidden=args.hidden, seed=args.seed)
    n_obj = sum(len(s.ground_truth) for s in problem.scenes)
    print(f"{args.n_scenes} scenes, {n_obj} objects, {reg.params.size} regressor parameters")
    pretrain_method2(reg, problem, steps=args.method2_steps, lr=args.method2_lr, log=print)
    hist = finetune_method3(reg, problem, steps=args.method3_steps, lr=args.method3_lr, log=print)
    drop = 1.0 - hist[-1] / hist[0] if hist[0] > 0 else 0.0
    print(f"IoU loss {hist[0]:.5f} -> {hist[-1]:.5f} ({100 * drop:.1f}% reduction)")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="boxfit3d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic KITTI-style dataset with raw predictions")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-scenes", type=int, default=10)
    p.add_argument("--n-objects", type=_int_range, default=(1, 4), metavar="LO,HI")
    p.add_argument("--noise-scale", type=float, default=0.0,
                   help="multiplier on the default per-target noise (0 = noiseless)")
    p.add_argument("--background", type=int, default=0, help="low-score distractor candidates per scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit 3D boxes to raw predictions, write KITTI result files")
    p.add_argument("data_dir", help="directory with calib/ and predictions/")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--score-thresh", type=_unit_interval, default=0.7)
    p.add_argument("--nms-thresh", type=_unit_interval, default=0.3)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="AP / AOS / ALP of KITTI result files against labels")
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--det-dir", required=True)
    p.add_argument("--criterion", type=_criterion, default="3d", metavar="{2d,bev,3d,alp}")
    p.add_argument("--iou-thresh", "--thresh", dest="iou_thresh", type=_unit_interval, default=0.7)
    p.add_argument("--max-dist", type=float, default=1.0, help="ALP center-distance threshold in meters")
    p.add_argument("--class", dest="class_name", default="Car")
    p.add_argument("--difficulty", choices=sorted(DIFFICULTY))
    p.add_argument("--points", type=int, choices=(11, 40), default=11)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference checks of all analytic derivatives")
    p.add_argument("--quick", action="store_true", help="fewer random configurations")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train-toy", help="two-stage training of the toy regressor on synthetic scenes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-scenes", type=int, default=5)
    p.add_argument("--n-features", type=int, default=8)
    p.add_argument("--hidden", type=int, default=0)
    p.add_argument("--method2-steps", type=int, default=300)
    p.add_argument("--method2-lr", type=float, default=0.02)
    p.add_argument("--method3-steps", type=int, default=100)
    p.add_argument("--method3-lr", type=float, default=0.005)
    p.set_defaults(func=cmd_train_toy)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (BoxFitError, OSError, ValueError) as exc:
        print(f"boxfit3d {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
