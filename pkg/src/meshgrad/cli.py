"""meshgrad command line: render, optimize and gradcheck over scene config files.

Exit codes: 0 success, 1 config/schema error, 2 runtime failure,
3 gradient check failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .config import SceneConfig, build_scene, parse_scene
from .errors import MeshgradError, SchemaError
from .io import ensure_dir, save_png
from .pipeline import GROUPS, expand_groups, forward_render, gradcheck
from .tasks import run_task, write_artifacts

log = logging.getLogger("meshgrad")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_GRADCHECK = 0, 1, 2, 3


def _resolution(text: str):
    try:
        w, h = (int(x) for x in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got {text!r}") from None
    return [w, h]


def _common(p: argparse.ArgumentParser, out_default: str) -> None:
    p.add_argument("--config", metavar="PATH", help="scene config file (JSON); built-in defaults when omitted")
    p.add_argument("--out", metavar="DIR", default=out_default, help=f"output directory (default: {out_default})")
    p.add_argument("--seed", type=int, metavar="N", help="random seed for colors, textures, views and init")
    p.add_argument("--delta", type=float, metavar="F", help="soft silhouette sharpness delta (> 0)")
    p.add_argument("--workers", type=int, metavar="N", help="rasterizer tile workers; output does not depend on it")
    p.add_argument("--res", type=_resolution, metavar="WxH", help="image resolution, e.g. 64x64")
    p.add_argument("--precision", choices=("single", "double"),
                   help="input storage precision; gradcheck requires double")
    p.add_argument("-v", "--verbose", action="store_true", help="debug log output")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors on standard error")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshgrad", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="{render,optimize,gradcheck}", required=True)

    p = sub.add_parser("render", help="render a scene to color.png, alpha.png and depth.png")
    _common(p, "out")

    p = sub.add_parser("optimize", help="run a round-trip optimization task and write its artifacts")
    _common(p, "out")
    p.add_argument("--iters", type=int, metavar="N", help="number of Adam iterations (overrides task.iterations)")
    p.add_argument("--snapshot-every", type=int, metavar="N", help="write a snapshot PNG every N iterations (0 = off)")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients for one group")
    _common(p, "out")
    p.add_argument("--group", metavar="NAME", default="vertex_positions",
                   help="parameter group: " + ", ".join(GROUPS) + ", or the aliases light, material")
    p.add_argument("--samples", type=int, default=20, metavar="N", help="coordinates to check (default: 20)")
    p.add_argument("--h", type=float, default=1e-4, metavar="F", help="central difference step (default: 1e-4)")
    p.add_argument("--tol", type=float, default=1e-3, metavar="F", help="relative error tolerance (default: 1e-3)")
    return parser


def _overrides(args) -> dict:
    o = {}
    if args.seed is not None:
        o["seed"] = args.seed
    if args.delta is not None:
        o["soft"] = {"delta": args.delta}
    if args.workers is not None:
        o["workers"] = args.workers
    if args.res is not None:
        o["resolution"] = args.res
    if args.precision is not None:
        o["precision"] = args.precision
    if getattr(args, "iters", None) is not None:
        o.setdefault("task", {})["iterations"] = args.iters
    if getattr(args, "snapshot_every", None) is not None:
        o.setdefault("task", {})["snapshot_every"] = args.snapshot_every
    return o


def _load(args) -> SceneConfig:
    return parse_scene(args.config if args.config else {}, _overrides(args))


def _echo(cfg: SceneConfig, out_dir: str) -> None:
    text = cfg.to_json()
    print(text)
    with open(os.path.join(out_dir, "resolved_config.json"), "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def depth_image(depth: np.ndarray, covered: np.ndarray) -> np.ndarray:
    """Near surfaces bright, far surfaces dark, background black."""
    out = np.zeros(depth.shape)
    if covered.any():
        d = depth[covered]
        lo, hi = float(d.min()), float(d.max())
        out[covered] = 1.0 if hi == lo else 1.0 - 0.8 * (d - lo) / (hi - lo)
    return out


def cmd_render(args, cfg: SceneConfig) -> int:
    scene = build_scene(cfg)
    color, alpha, tapes = forward_render(scene, workers=cfg.workers)
    buf = tapes.buffers
    save_png(os.path.join(args.out, "color.png"), color)
    save_png(os.path.join(args.out, "alpha.png"), alpha)
    save_png(os.path.join(args.out, "depth.png"), depth_image(buf.depth, buf.covered))
    log.info("wrote color.png, alpha.png, depth.png to %s", args.out)
    return EXIT_OK


def cmd_optimize(args, cfg: SceneConfig) -> int:
    if cfg.task is None:
        raise SchemaError("$.task", "optimize needs a task section in the config")
    every = max(1, cfg.task["iterations"] // 10)

    def progress(i, rep, scene):
        if i % every == 0:
            log.info("iter %5d  loss %.6g", i, rep.total)

    report = run_task(cfg, out_dir=args.out, callback=progress)
    for p in write_artifacts(report, args.out):
        log.info("wrote %s", p)
    log.info("final loss %.6g (reduction %.4f) in %.1fs", report.final.total, report.reduction, report.wall_time)
    return EXIT_OK


def cmd_gradcheck(args, cfg: SceneConfig) -> int:
    scene = build_scene(cfg)
    try:
        groups = expand_groups(scene, [args.group])
    except ValueError as exc:
        raise SchemaError("--group", str(exc)) from None
    code = EXIT_OK
    for group in groups:
        report = gradcheck(scene, group, sample_count=args.samples, h=args.h, tolerance=args.tol,
                           weights=cfg.weights, seed=cfg.seed, precision=cfg.precision, workers=cfg.workers)
        table = report.table()
        with open(os.path.join(args.out, f"gradcheck_{group}.tsv"), "w", encoding="utf-8") as fh:
            fh.write(table)
        sys.stderr.write(table)
        if report.rejected:
            print(f"error: {report.rejected}", file=sys.stderr)
            return EXIT_CONFIG
        if report.failed or not report.passed:
            print(f"{group}: gradcheck FAILED on {report.failed} of {report.passed + report.failed} samples",
                  file=sys.stderr)
            code = EXIT_GRADCHECK
        else:
            print(f"{group}: gradcheck passed, {report.passed} samples, {report.skipped} skipped", file=sys.stderr)
    return code


COMMANDS = {"render": cmd_render, "optimize": cmd_optimize, "gradcheck": cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help, 2 for usage errors
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    level = logging.WARNING if args.quiet else (logging.DEBUG if args.verbose else logging.INFO)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _load(args)
        ensure_dir(args.out)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _echo(cfg, args.out)
    try:
        return COMMANDS[args.command](args, cfg)
    except SchemaError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshgradError, ValueError, FloatingPointError, OSError) as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
