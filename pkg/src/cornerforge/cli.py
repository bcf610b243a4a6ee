"""Command-line surface: detection, tree learning, evaluation, annealing,
benchmarking, and synthetic dataset generation.

Every text output starts with a provenance header (tool version, full
command configuration, seed) in the format's native comment syntax. Exit
codes: 0 success, 1 usage, 2 I/O, 3 data validation.
"""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .annealing import (CostWeights, default_offsets_48, distill, multi_run)
from .datasets import make_dataset, synthetic_base_image
from .detectors import (FastRefDetector, HarrisDetector, RandomDetector,
                        ShiTomasiDetector, SixteenFoldDetector, TreeDetector)
from .image import (GrayImage, PgmError, load_image, save_pgm)
from .learn import (InconsistentLabelsError, augment_exhaustive, build_tree,
                    empty_training_set, extract_training_data,
                    force_shared_second_test)
from .repeatability import (MissingWarpError, area_under_curve, make_pairs,
                            repeatability_curve)
from .runtime import write_keypoints
from .trees import RING16, TreeFormatError, deserialize_tree, serialize_tree
from .warp import SingularHomographyError, load_homography, save_homography

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_DATA = 3

ALGOS = ("fast-ref", "fast-tree", "faster", "harris", "shi-tomasi", "random")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit(2); we use 1
        raise UsageError(message)


def _provenance(command: str, args: argparse.Namespace) -> list[str]:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    return [f"cornerforge {__version__}",
            f"command: {command}",
            f"config: {json.dumps(cfg, default=str, sort_keys=True)}"]


def _expand_images(paths) -> list[str]:
    out = []
    for p in paths:
        if any(ch in p for ch in "*?["):
            hits = sorted(glob.glob(p))
            if not hits:
                raise FileNotFoundError(f"glob {p!r} matched nothing")
            out.extend(hits)
        else:
            out.append(p)
    return out


def _load_tree(path):
    with open(path, "rb") as f:
        return deserialize_tree(f.read())


def _build_detector(args, spec: str | None = None):
    """Detector from CLI flags, or from a spec string like "fast-ref:n=9"."""
    params = {}
    if spec:
        name, _, rest = spec.partition(":")
        if rest:
            for item in rest.split(","):
                key, _, val = item.partition("=")
                if not val:
                    raise UsageError(f"bad detector parameter {item!r} in {spec!r}")
                params[key] = val
    else:
        name = args.algo

    def p(key, default, cast):
        if key in params:
            return cast(params[key])
        return getattr(args, key.replace("-", "_"), None) or default

    if name == "fast-ref":
        return FastRefDetector(n=int(p("n", 9, int)), t_min=int(p("t", 1, int)))
    if name == "fast-tree":
        tree_path = params.get("tree") or args.tree
        if not tree_path:
            raise UsageError(f"{name} needs --tree (or tree= in the spec)")
        tree, table = _load_tree(tree_path)
        if len(table) != 16:
            raise UsageError(f"{tree_path}: fast-tree expects a 16-offset tree")
        return TreeDetector(tree, table, t_min=int(p("t", 1, int)))
    if name == "faster":
        tree_path = params.get("tree") or args.tree
        if not tree_path:
            raise UsageError(f"{name} needs --tree (or tree= in the spec)")
        tree, table = _load_tree(tree_path)
        if len(table) != 48:
            raise UsageError(f"{tree_path}: faster expects a 48-offset tree")
        return SixteenFoldDetector(tree, table, t_min=int(p("t", 1, int)))
    if name == "harris":
        return HarrisDetector(sigma=float(p("sigma", 2.5, float)))
    if name == "shi-tomasi":
        return ShiTomasiDetector(sigma=float(p("sigma", 2.5, float)))
    if name == "random":
        return RandomDetector(seed=int(p("seed", 0, int)))
    raise UsageError(f"unknown algo {name!r}; choose from {', '.join(ALGOS)}")


def _open_out(path):
    return sys.stdout if path in (None, "-") else open(path, "w")


def cmd_detect(args) -> int:
    img = load_image(args.image)
    detector = _build_detector(args)
    if args.n_features is not None:
        kps = detector.detect(img, args.n_features)
    elif isinstance(detector, RandomDetector):
        raise UsageError("random detector needs --n-features")
    else:
        kps = detector.all_keypoints(img)
    out = _open_out(args.out)
    try:
        write_keypoints(out, kps, header_lines=_provenance("detect", args))
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_learn_tree(args) -> int:
    images = [load_image(p) for p in _expand_images(args.images)]
    if images:
        ts = extract_training_data(images, args.n, args.t,
                                   weight_scale=args.weight_scale)
    elif args.exhaustive:
        ts = empty_training_set()
    else:
        raise UsageError("need training images or --exhaustive")
    if args.exhaustive:
        ts = augment_exhaustive(ts, args.n, low_weight=args.low_weight)
    tree = build_tree(ts)
    if args.shared_second:
        tree = force_shared_second_test(tree, ts)
    Path(args.out).write_bytes(serialize_tree(tree, RING16))
    return EXIT_OK


def _parse_counts(spec: str) -> list[int]:
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise UsageError(f"counts spec {spec!r} must be start:stop:step")
        start, stop, step = (int(v) for v in parts)
        return list(range(start, stop + 1, step))
    return [int(v) for v in spec.split(",")]


def _load_dataset(dirpath):
    d = Path(dirpath)
    frame_paths = sorted(d.glob("frame_*.pgm"))
    if not frame_paths:
        raise FileNotFoundError(f"{dirpath}: no frame_*.pgm files")
    frames = [load_image(p) for p in frame_paths]
    return d, frames


def _load_warps(d: Path, frames, pairs):
    warps = {}
    for i, j in pairs:
        path = d / f"H_{i}_to_{j}.txt"
        if not path.exists():
            raise MissingWarpError(f"missing homography file for pair "
                                   f"({i}, {j}): {path}")
        with open(path) as f:
            warps[(i, j)] = load_homography(
                f, (frames[j].width, frames[j].height))
    return warps


def cmd_eval_repeat(args) -> int:
    d, frames = _load_dataset(args.dataset)
    sizes = {(f.width, f.height) for f in frames}
    if len(sizes) != 1:
        raise ValueError(f"mismatched frame sizes in {args.dataset}: {sorted(sizes)}")
    pairs = make_pairs(len(frames), args.pairs)
    warps = _load_warps(d, frames, pairs)
    counts = _parse_counts(args.counts)
    header = _provenance("eval-repeat", args)
    prefix = args.out
    auc_rows = []
    curves = []
    for spec in args.algo:
        detector = _build_detector(args, spec)
        curve = repeatability_curve(frames, warps, detector, counts,
                                    args.epsilon, pairs)
        label = spec.replace(":", "_").replace("/", "_").replace(",", "_")
        with open(f"{prefix}{label}.csv", "w") as f:
            for line in header:
                f.write(f"# {line}\n")
            f.write("count,repeatability\n")
            for count, r in curve:
                f.write(f"{count},{r:.6f}\n")
        auc_rows.append((detector.name, spec, area_under_curve(curve)))
        curves.append((detector.name, curve))
    with open(f"{prefix}auc.csv", "w") as f:
        for line in header:
            f.write(f"# {line}\n")
        f.write("detector,A\n")
        for name, spec, auc in auc_rows:
            f.write(f"{name},{auc:.2f}\n")
    if args.svg:
        write_svg_curves(args.svg, curves, header)
    return EXIT_OK


def cmd_bench(args) -> int:
    paths = _expand_images(args.images)
    images = [load_image(p) for p in paths]
    out = _open_out(args.out)
    try:
        for line in _provenance("bench", args):
            out.write(f"# {line}\n")
        out.write("algo,mpix_per_s,median_seconds,total_pixels\n")
        if not images:
            return EXIT_OK
        total_px = sum(im.width * im.height for im in images)
        for spec in args.algos.split(","):
            detector = _build_detector(args, spec)
            times = []
            for rep in range(args.warmup + args.repeats):
                detector.clear_cache()
                t0 = time.perf_counter()
                for im in images:
                    detector.detect(im, args.n_features)
                dt = time.perf_counter() - t0
                if rep >= args.warmup:
                    times.append(dt)
            med = float(np.median(times))
            out.write(f"{detector.name},{total_px / med / 1e6:.3f},{med:.6f},"
                      f"{total_px}\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_make_dataset(args) -> int:
    if args.base:
        base = load_image(args.base)
    else:
        w, _, h = args.synthetic.partition("x")
        base = synthetic_base_image(int(w), int(h), args.seed)
    frames, warps, _ = make_dataset(base, args.frames, args.warp_mag,
                                    args.noise, args.seed)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    header = _provenance("make-dataset", args)
    for k, frame in enumerate(frames):
        (outdir / f"frame_{k:03d}.pgm").write_bytes(
            save_pgm(frame, comment=header[0] + " " + header[2]))
    for (i, j), warp in sorted(warps.items()):
        with open(outdir / f"H_{i}_to_{j}.txt", "w") as f:
            save_homography(f, warp.matrix, header_lines=header)
    with open(outdir / "dataset.txt", "w") as f:
        for line in header:
            f.write(f"# {line}\n")
        f.write(f"frames {len(frames)}\n")
        f.write("pair_policy adjacent2\n")
        for k in range(len(frames)):
            f.write(f"frame frame_{k:03d}.pgm\n")
    return EXIT_OK


def cmd_anneal(args) -> int:
    d, frames = _load_dataset(args.dataset)
    pairs = make_pairs(len(frames), "adjacent2")
    warps = _load_warps(d, frames, pairs)
    weights = CostWeights(w_r=args.wr, w_n=args.wn, w_s=args.ws,
                          alpha=args.alpha, beta=args.beta, t=args.t,
                          i_max=args.imax, runs=args.runs,
                          epsilon=args.epsilon)
    seeds = [args.seed + k for k in range(args.runs)]
    best, results = multi_run(frames, warps, weights, args.runs, seeds=seeds,
                              jobs=args.jobs)
    prefix = args.out
    header = _provenance("anneal", args)
    Path(f"{prefix}best.tree").write_bytes(
        serialize_tree(best.best_tree, default_offsets_48()))
    for res in results:
        with open(f"{prefix}run{res.seed}.csv", "w") as f:
            for line in header:
                f.write(f"# {line}\n")
            f.write("iteration,cost,best_cost,temperature\n")
            for row in res.trace:
                f.write(f"{int(row[0])},{row[1]:.6g},{row[2]:.6g},{row[3]:.6g}\n")
    with open(f"{prefix}summary.csv", "w") as f:
        for line in header:
            f.write(f"# {line}\n")
        f.write("seed,best_cost,initial_cost\n")
        for res in results:
            f.write(f"{res.seed},{res.best_cost:.6g},{res.trace[0, 1]:.6g}\n")
    return EXIT_OK


def cmd_distill(args) -> int:
    tree, table = _load_tree(args.tree)
    if len(table) != 48:
        raise UsageError(f"{args.tree}: distill expects a 48-offset tree")
    _, frames = _load_dataset(args.dataset)
    single = distill(tree, frames, t=args.t, table=table)
    Path(args.out).write_bytes(serialize_tree(single, table))
    return EXIT_OK


def write_svg_curves(path, curves, header_lines=()) -> None:
    """Self-contained SVG line plot of repeatability-vs-count curves."""
    width, height, pad = 640, 400, 45
    xmax = max((c for name, curve in curves for c, _ in curve), default=1) or 1
    palette = ("#c33", "#36c", "#393", "#a3a", "#973", "#333")
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">']
    for line in header_lines:
        parts.append(f"<!-- {line} -->")
    parts.append(f'<rect width="{width}" height="{height}" fill="white"/>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{width - 10}" '
                 f'y2="{height - pad}" stroke="black"/>')
    parts.append(f'<line x1="{pad}" y1="{height - pad}" x2="{pad}" y2="10" '
                 f'stroke="black"/>')

    def sx(c):
        return pad + (width - pad - 10) * c / xmax

    def sy(r):
        return (height - pad) - (height - pad - 10) * r

    for k, (name, curve) in enumerate(curves):
        color = palette[k % len(palette)]
        pts = " ".join(f"{sx(c):.1f},{sy(r):.1f}" for c, r in curve)
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" '
                     f'stroke-width="1.5"/>')
        parts.append(f'<text x="{width - 150}" y="{20 + 16 * k}" '
                     f'fill="{color}" font-size="12">{name}</text>')
    parts.append(f'<text x="{width // 2}" y="{height - 12}" font-size="12">'
                 f'features per frame</text>')
    parts.append(f'<text x="12" y="{height // 2}" font-size="12" '
                 f'transform="rotate(-90 12 {height // 2})">repeatability</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def build_parser() -> _Parser:
    parser = _Parser(prog="cornerforge", description=__doc__)
    parser.add_argument("--jobs", type=int,
                        default=int(os.environ.get("CORNERFORGE_JOBS", "1")),
                        help="worker cap; 1 defines canonical output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="detect corners in one image")
    p.add_argument("image")
    p.add_argument("--algo", default="fast-ref", choices=ALGOS)
    p.add_argument("--n", type=int, default=9, help="segment arc length")
    p.add_argument("--t", type=int, default=35, help="detection threshold")
    p.add_argument("--tree", help="tree file for fast-tree/faster")
    p.add_argument("--sigma", type=float, default=2.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-features", type=int, default=None)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("learn-tree", help="compile the segment test via ID3")
    p.add_argument("images", nargs="*")
    p.add_argument("--n", type=int, default=9)
    p.add_argument("--t", type=int, default=35)
    p.add_argument("--exhaustive", action="store_true",
                   help="cover all 3^16 ring configurations")
    p.add_argument("--low-weight", type=int, default=1)
    p.add_argument("--weight-scale", type=int, default=256)
    p.add_argument("--shared-second", action="store_true",
                   help="force one shared second-level test")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_learn_tree)

    p = sub.add_parser("eval-repeat", help="repeatability curves and AUC")
    p.add_argument("--dataset", required=True)
    p.add_argument("--algo", action="append", required=True,
                   help="detector spec, e.g. fast-ref:n=9 (repeatable)")
    p.add_argument("--counts", default="0:2000:25")
    p.add_argument("--epsilon", type=float, default=5.0)
    p.add_argument("--pairs", default="adjacent2", choices=("adjacent2", "all"))
    p.add_argument("--tree")
    p.add_argument("--out", default="repeat_")
    p.add_argument("--svg")
    p.set_defaults(func=cmd_eval_repeat)

    p = sub.add_parser("bench", help="throughput in megapixels per second")
    p.add_argument("images", nargs="*")
    p.add_argument("--algos", default="fast-ref:n=9")
    p.add_argument("--tree")
    p.add_argument("--t", type=int, default=35)
    p.add_argument("--n-features", type=int, default=500)
    p.add_argument("--repeats", type=int, default=10)
    p.add_argument("--warmup", type=int, default=2)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("make-dataset", help="synthetic warped frame sequence")
    p.add_argument("--base", help="base image path")
    p.add_argument("--synthetic", default="640x480",
                   help="WxH generated base when --base is absent")
    p.add_argument("--frames", type=int, default=6)
    p.add_argument("--warp-mag", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("anneal", help="optimize a detector tree for repeatability")
    p.add_argument("--dataset", required=True)
    p.add_argument("--imax", type=int, default=5000,
                   help="iterations per run (desk-scale default)")
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--wr", type=float, default=1.0)
    p.add_argument("--wn", type=float, default=3500.0)
    p.add_argument("--ws", type=float, default=10000.0)
    p.add_argument("--alpha", type=float, default=30.0)
    p.add_argument("--beta", type=float, default=100.0)
    p.add_argument("--t", type=int, default=35)
    p.add_argument("--epsilon", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="anneal_")
    p.set_defaults(func=cmd_anneal)

    p = sub.add_parser("distill", help="single tree reproducing a 16-fold detector")
    p.add_argument("--tree", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--t", type=int, default=35)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_distill)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PgmError, TreeFormatError, InconsistentLabelsError,
            MissingWarpError, SingularHomographyError, ValueError,
            KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
