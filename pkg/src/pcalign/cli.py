"""Command-line interface: ``align``, ``benchmark``, ``gradcheck`` and ``heatmap``.

Exit codes: 0 success, 1 usage error, 2 runtime failure (including a failed
gradient check).
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import colorxform, fileio, heatmap
from .aligner import AlignConfig, align
from .geometry import PoseParams

EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunConfig:
    """Everything ``align`` needs: inputs, optimizer settings and outputs."""

    cloud: str
    image: str
    intrinsics: str
    out: str
    init_pose: str | None = None
    align: AlignConfig = dataclasses.field(default_factory=AlignConfig)
    heatmap_interval: int = 0

    def __post_init__(self):
        for name in ("cloud", "image", "intrinsics", "out"):
            if not getattr(self, name):
                raise ValueError(f"{name} path must be non-empty")
        if self.heatmap_interval < 0:
            raise ValueError("heatmap_interval must be >= 0")


_ALIGN_FLAGS = {
    # flag: (AlignConfig field, type)
    "--strategy": ("strategy", str),
    "--color-mode": ("color_mode", str),
    "--max-iters": ("max_iters", int),
    "--lr-translation": ("lr_translation", float),
    "--lr-rotation": ("lr_rotation", float),
    "--param-tol": ("param_tol", float),
    "--beta-max": ("beta_max", float),
    "--seed": ("seed", int),
}


def _threads_arg(p):
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1,
                   help="worker threads/processes (default: all cores); results do not depend on it")


def build_parser():
    parser = _Parser(prog="pcalign", description="Photometric point-cloud to image alignment.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("align", help="refine a camera pose against an image")
    p.add_argument("--cloud", required=True, help="PLY point cloud")
    p.add_argument("--image", required=True, help="PPM (or PNG) image")
    p.add_argument("--intrinsics", required=True, help="key=value intrinsics file")
    p.add_argument("--init-pose", help="initial pose file (default: identity)")
    p.add_argument("--config", help="key=value file of alignment settings")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--heatmap-interval", type=int, default=None,
                   help="write a difference heatmap every N iterations (0 = off)")
    for flag, (_, kind) in _ALIGN_FLAGS.items():
        p.add_argument(flag, type=kind, default=None)
    _threads_arg(p)

    p = sub.add_parser("benchmark", help="run the synthetic pose-recovery benchmark")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--family", default="mixed", help="texture profile: smooth, mixed, high_frequency")
    p.add_argument("--geometry", default="box_room")
    p.add_argument("--modes", default="second-A", help="comma-separated, e.g. second-A,first-A,zero-A")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0, help="first scene seed")
    p.add_argument("--perturb-seed", type=int, default=0)
    p.add_argument("--max-translation", type=float, default=0.02, help="metres")
    p.add_argument("--max-rotation", type=float, default=1.0, help="degrees")
    p.add_argument("--image-size", type=int, default=256)
    p.add_argument("--scene-depth", type=float, default=3.0)
    p.add_argument("--max-iters", type=int, default=None)
    p.add_argument("--no-color-effects", action="store_true")
    _threads_arg(p)

    p = sub.add_parser("gradcheck", help="compare analytic derivatives with finite differences")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--configs", type=int, default=100, help="random configurations per check")

    p = sub.add_parser("heatmap", help="color-difference heatmap of two images")
    p.add_argument("--a", required=True, help="image")
    p.add_argument("--b", required=True, help="image, or a PLY cloud rendered with --intrinsics/--pose")
    p.add_argument("--intrinsics")
    p.add_argument("--pose")
    p.add_argument("--out", required=True)
    return parser


def _align_config(args):
    values = fileio.load_config(args.config, RunConfigFile) if args.config else {}
    interval = values.pop("heatmap_interval", 0)
    for flag, (name, _) in _ALIGN_FLAGS.items():
        value = getattr(args, flag[2:].replace("-", "_"))
        if value is not None:
            values[name] = value
    if args.heatmap_interval is not None:
        interval = args.heatmap_interval
    return AlignConfig(**values), interval


@dataclass(frozen=True)
class RunConfigFile(AlignConfig):
    """Keys accepted in an ``align --config`` file."""

    heatmap_interval: int = 0


def cmd_align(args):
    cfg, interval = _align_config(args)
    run = RunConfig(args.cloud, args.image, args.intrinsics, args.out,
                    args.init_pose, cfg, interval)
    pc = fileio.load_ply(run.cloud)
    image = fileio.load_image(run.image)
    K = fileio.load_intrinsics(run.intrinsics)
    if image.shape[:2] != (K.height, K.width):
        raise ValueError(f"image is {image.shape[1]}x{image.shape[0]} but intrinsics say {K.width}x{K.height}")
    theta0 = fileio.load_pose(run.init_pose) if run.init_pose else PoseParams.identity()
    out = Path(run.out)
    out.mkdir(parents=True, exist_ok=True)

    callback = None
    if run.heatmap_interval:
        (out / "heatmaps").mkdir(exist_ok=True)

        def callback(it, state):
            if it % run.heatmap_interval == 0:
                rendered, coverage = heatmap.render_point_cloud(pc, K, state.theta)
                mapped, _ = colorxform.apply_color_transform(state.D, image)
                fileio.save_image(out / "heatmaps" / f"iter_{it:05d}.ppm",
                                  heatmap.difference_heatmap(mapped, rendered, coverage))

    with threadpool_limits(limits=max(1, args.threads), user_api="blas"):
        result = align(pc, image, K, theta0, run.align, callback=callback)
    fileio.save_pose(out / "pose.txt", result.theta_final)
    rows = ["iteration,loss,inliers"]
    rows += [f"{i},{loss!r},{n}" for i, (loss, n) in enumerate(zip(result.loss_trace, result.inlier_counts))]
    (out / "loss_trace.csv").write_text("\n".join(rows) + "\n")
    print(f"iterations={result.iterations_run} converged={result.converged} "
          f"final_loss={result.loss_trace[-1]:.6g}")
    print(f"pose written to {out / 'pose.txt'}")
    return EXIT_OK


def cmd_benchmark(args):
    from . import synthbench as sb

    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    family = sb.SceneSpec(args.seed, args.family, args.geometry,
                          (args.image_size, args.image_size), args.scene_depth)
    perturb = sb.PerturbationSpec(args.max_translation, args.max_rotation, args.perturb_seed)
    modes = {}
    for label in filter(None, (m.strip() for m in args.modes.split(","))):
        try:
            cfg = sb.parse_mode(label)
        except ValueError as exc:
            raise UsageError(f"--modes: {exc}") from None
        if args.max_iters is not None:
            cfg = dataclasses.replace(cfg, max_iters=args.max_iters)
        modes[label] = cfg
    if not modes:
        raise UsageError("--modes is empty")
    report = sb.run_benchmark(args.trials, family, perturb, modes,
                              color_effects=not args.no_color_effects,
                              workers=max(1, args.threads))
    path = sb.write_report(report, args.out)
    for mode, summary in report.summary.items():
        print(f"{mode}: median {summary['median_translation_error_mm']:.3f} mm, "
              f"{summary['median_rotation_error_deg']:.4f} deg, "
              f"converged {summary['convergence_rate']:.0%}, failed {summary['failure_rate']:.0%}")
    print(f"report written to {path}")
    return EXIT_OK


def cmd_gradcheck(args):
    from .gradcheck import run_gradcheck

    results = run_gradcheck(args.seed, args.configs)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_FAILURE


def cmd_heatmap(args):
    a = fileio.load_image(args.a)
    coverage = None
    if Path(args.b).suffix.lower() == ".ply":
        if not (args.intrinsics and args.pose):
            raise UsageError("rendering a cloud needs --intrinsics and --pose")
        K = fileio.load_intrinsics(args.intrinsics)
        b, coverage = heatmap.render_point_cloud(fileio.load_ply(args.b), K, fileio.load_pose(args.pose))
    else:
        b = fileio.load_image(args.b)
    fileio.save_image(args.out, heatmap.difference_heatmap(a, b, coverage))
    diff = np.linalg.norm(a - b, axis=-1)
    if coverage is not None:
        diff = diff[coverage]
    print(f"mean color difference {diff.mean():.6g}; heatmap written to {args.out}")
    return EXIT_OK


COMMANDS = {"align": cmd_align, "benchmark": cmd_benchmark,
            "gradcheck": cmd_gradcheck, "heatmap": cmd_heatmap}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        # argparse exits 0 after --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
