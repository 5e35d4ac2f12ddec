"""Command-line front end: gen-model, profile, quantize, detect, eval, bench.

Exit codes: 0 success, 1 usage, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import json
import logging
import statistics
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import ellipse_to_box, load_image, parse_fddb
from .detection import default_anchors, load_anchors, multi_scale_detect, read_detections, write_detections
from .evaluation import average_precision, evaluate, format_report, merge_matches, write_pr_csv
from .fixedpoint import AccumulatorOverflow, QFormat
from .model import (
    ModelConfig,
    build_detector,
    load_model,
    parameter_count,
    save_model,
    storage_size,
    to_mib,
)
from .quantizer import (
    DEFAULT_CALIBRATION_IMAGES,
    ActivationProfile,
    QuantPlan,
    plan_quantization,
    profile_activations,
    quantize_model,
    unrepresentable_layers,
    weight_range,
)

log = logging.getLogger("qfacedet")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
IMAGE_SUFFIXES = (".ppm", ".pgm", ".pnm", ".png", ".jpg", ".jpeg", ".bmp")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _scales(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad scale list {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("scales must be positive")
    return values


def _size_line(n_params: int, g) -> str:
    return (f"params {n_params} (~{n_params / 1e6:.2f}M); size fp32 {to_mib(storage_size(g, 'fp32')):.2f} MB, "
            f"fp16 {to_mib(storage_size(g, 'fp16')):.2f} MB, q16 {to_mib(storage_size(g, 16)):.2f} MB")


# ------------------------------------------------------------------ commands


def cmd_gen_model(args) -> dict:
    anchors = load_anchors(args.anchors) if args.anchors else default_anchors()
    try:
        cfg = ModelConfig(alpha=args.alpha, out_strategy=f"Out{args.out}", anchors=anchors,
                          input_hw=(args.input_size, args.input_size), frozen_until=args.frozen_until)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    g = build_detector(cfg, seed=args.seed)
    save_model(g, args.output)
    n = parameter_count(g)
    print(_size_line(n, g))
    return {"parameters": n}


def _image_paths(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DataError(f"{d} is not a directory")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)


def cmd_profile(args) -> dict:
    g = load_model(args.model)
    if g.storage_format != "fp32":
        raise DataError("profiling needs a float (fp32) model")
    paths = _image_paths(args.images)
    if not paths:
        raise DataError(f"no images found in {args.images}")
    if len(paths) > args.max_images:
        pick = np.random.default_rng(args.seed).choice(len(paths), args.max_images, replace=False)
        paths = [paths[i] for i in sorted(pick)]
    images = [load_image(p).rgb() for p in paths]
    profile = profile_activations(g, images, threads=args.threads)
    Path(args.output).write_text(profile.to_text())
    lo, hi = profile.global_range()
    print(f"profiled {len(images)} images over {len(profile.records)} layers; activation range [{lo:.4f}, {hi:.4f}]")
    return {"images": len(images), "range": [lo, hi]}


def cmd_quantize(args) -> dict:
    g = load_model(args.model)
    if g.storage_format != "fp32":
        raise DataError(f"model is already stored as {g.storage_format}; quantize needs an fp32 model")
    profile = ActivationProfile.from_text(Path(args.profile).read_text())
    if args.auto:
        plan = plan_quantization(profile, weight_range(g), args.word_bits)
    else:
        fmt = QFormat.from_fractional(args.fractional, args.word_bits)
        bad = unrepresentable_layers(profile, fmt)
        if bad:
            raise DataError(f"activation range of layer {bad[0]} does not fit {fmt} "
                            f"({len(bad)} layer(s) affected)")
        lo, hi = weight_range(g)
        if lo < fmt.min_value or hi > fmt.max_value:
            offender = max(g.weights, key=lambda k: float(np.abs(g.weights[k]).max(initial=0)))
            raise DataError(f"weights of layer {offender.split('/')[0]} do not fit {fmt}")
        plan = QuantPlan(fmt, fmt)
    qg = quantize_model(g, plan)
    save_model(qg, args.output)
    size = storage_size(qg)
    print(f"weight format {plan.weight_fmt}, activation format {plan.activation_fmt}; "
          f"params {parameter_count(qg)}, size {to_mib(size):.2f} MB")
    return {"weight_format": str(plan.weight_fmt), "activation_format": str(plan.activation_fmt), "bytes": size}


def _detect_inputs(args) -> list[tuple[str, Path]]:
    if args.image:
        return [(Path(args.image).with_suffix("").name, Path(args.image))]
    root = Path(args.image_root) if args.image_root else Path(args.list).parent
    items = []
    for line in Path(args.list).read_text().splitlines():
        image_id = line.strip()
        if not image_id:
            continue
        path = root / image_id
        if not path.suffix and args.ext:
            path = path.with_name(path.name + args.ext)
        items.append((image_id, path))
    return items


def cmd_detect(args) -> dict:
    g = load_model(args.model)
    items = _detect_inputs(args)

    def run(item):
        image_id, path = item
        try:
            img = load_image(path).rgb()
        except (OSError, ValueError) as exc:
            log.warning("skipping %s: %s", image_id, exc)
            return image_id, None
        return image_id, multi_scale_detect(g, img, args.scales, args.score_t, args.iou_t)

    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(run, items))
    else:
        results = [run(item) for item in items]
    ok = [(i, d) for i, d in results if d is not None]
    if items and not ok:
        raise DataError("every input image failed to load")
    with open(args.output, "w") as out:
        write_detections(out, ok)
    n = sum(len(d) for _, d in ok)
    print(f"{n} detections over {len(ok)} images ({len(items) - len(ok)} skipped)")
    return {"images": len(ok), "skipped": len(items) - len(ok), "detections": n}


def cmd_eval(args) -> dict:
    dets = {}
    for image_id, d in read_detections(Path(args.dets).read_text()):
        dets.setdefault(image_id, []).extend(d)
    folds, known = {}, set()
    for path in args.annotations:
        records = parse_fddb(Path(path).read_text())
        folds[Path(path).stem] = {k: [ellipse_to_box(e) for e in faces] for k, faces in records}
        known.update(folds[Path(path).stem])
    unknown = sorted(set(dets) - known)
    if unknown:
        raise DataError(f"detections for unknown image ids: {', '.join(unknown)}")
    per_fold = {name: evaluate({k: v for k, v in dets.items() if k in gts}, gts, args.iou)
                for name, gts in folds.items()}
    overall = merge_matches(per_fold.values())
    sys.stdout.write(format_report(per_fold, overall))
    ap = average_precision(overall)
    print(f"AP {ap:.4f}")
    if args.pr_csv:
        with open(args.pr_csv, "w") as out:
            write_pr_csv(out, overall)
    return {"ap": ap, "per_fold": {k: average_precision(m) for k, m in per_fold.items()}}


def cmd_bench(args) -> dict:
    if args.model:
        g = load_model(args.model)
    else:
        g = build_detector(ModelConfig(alpha=args.alpha, input_hw=(args.input_size, args.input_size)), seed=args.seed)
    if g.storage_format != "fp32":
        raise DataError("bench needs an fp32 model; the q16 variant is derived from it")
    rng = np.random.default_rng(args.seed)
    x = rng.uniform(0.0, 1.0, (1, args.input_size, args.input_size, 3))
    profile = profile_activations(g, [x])
    qg = quantize_model(g, plan_quantization(profile, weight_range(g), 16))

    def timeit(fn):
        fn()  # warm-up
        samples = []
        for _ in range(args.iters):
            t0 = time.perf_counter()
            fn()
            samples.append(time.perf_counter() - t0)
        return statistics.mean(samples), statistics.median(samples)

    report = {}
    for label, model, mode in (("fp32", g, "float"), ("q16", qg, "fixed")):
        mean, median = timeit(lambda: model.forward(x, mode))
        report[label] = {"mean_s": mean, "median_s": median, "fps": 1.0 / mean}
        print(f"{label}: mean {mean * 1e3:.2f} ms, median {median * 1e3:.2f} ms, {1.0 / mean:.2f} FPS")
    ratio = report["q16"]["mean_s"] / report["fp32"]["mean_s"]
    print(f"q16/fp32 latency ratio {ratio:.2f} (activation {qg.activation_fmt}, weights {qg.weight_fmt})")
    report["ratio"] = ratio
    return report


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="qfacedet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", help="write the run manifest (JSON) here instead of stderr")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("gen-model", parents=[common], help="build and save a seeded random-weight detector")
    s.add_argument("--alpha", type=float, default=1.0)
    s.add_argument("--out", choices=("A", "B", "C"), default="A")
    s.add_argument("--anchors", help="anchor file ('id width height' per line)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--input-size", type=int, default=224)
    s.add_argument("--frozen-until", type=int, default=98)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("profile", parents=[common], help="record per-layer activation ranges")
    s.add_argument("--model", required=True)
    s.add_argument("--images", required=True, help="directory of calibration images")
    s.add_argument("--output", required=True)
    s.add_argument("--max-images", type=int, default=DEFAULT_CALIBRATION_IMAGES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--threads", type=int, default=1)
    s.set_defaults(func=cmd_profile)

    s = sub.add_parser("quantize", parents=[common], help="post-training Q-format quantization")
    s.add_argument("--model", required=True)
    s.add_argument("--profile", required=True)
    s.add_argument("--word-bits", type=int, default=16)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--fractional", type=int, help="force n fractional bits for weights and activations")
    g.add_argument("--auto", action="store_true", help="size formats from the profile and weight ranges")
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_quantize)

    s = sub.add_parser("detect", parents=[common], help="multi-scale detection into an FDDB detection file")
    s.add_argument("--model", required=True)
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--image")
    g.add_argument("--list", help="file with one image id per line")
    s.add_argument("--image-root", help="directory the ids in --list are relative to")
    s.add_argument("--ext", default=".ppm", help="suffix appended to ids without one")
    s.add_argument("--scales", type=_scales, default=[0.5, 1.0, 2.0])
    s.add_argument("--score-t", type=float, default=0.5)
    s.add_argument("--iou-t", type=float, default=0.3)
    s.add_argument("--threads", type=int, default=1)
    s.add_argument("--output", required=True)
    s.set_defaults(func=cmd_detect)

    s = sub.add_parser("eval", parents=[common], help="average precision against FDDB ellipse annotations")
    s.add_argument("--dets", required=True)
    s.add_argument("--annotations", required=True, action="append", help="ellipse list; repeat per fold")
    s.add_argument("--iou", type=float, default=0.5)
    s.add_argument("--pr-csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("bench", parents=[common], help="fp32 vs q16 forward latency")
    s.add_argument("--model")
    s.add_argument("--alpha", type=float, default=0.5)
    s.add_argument("--input-size", type=int, default=224)
    s.add_argument("--iters", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_bench)
    return p


def _config_echo(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func", "manifest")}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    t0 = time.perf_counter()
    code, result, error = EXIT_OK, None, None
    try:
        result = args.func(args)
    except UsageError as exc:
        code, error = EXIT_USAGE, str(exc)
    except AccumulatorOverflow as exc:
        code, error = EXIT_NUMERIC, str(exc)
    except (DataError, ValueError, KeyError, OSError) as exc:
        code, error = EXIT_DATA, str(exc)
    if error:
        print(f"qfacedet {args.command}: error: {error}", file=sys.stderr)
    manifest = {
        "command": args.command,
        "config": _config_echo(args),
        "exit_code": code,
        "wall_seconds": time.perf_counter() - t0,
        "engine_version": __version__,
        "result": result,
        "error": error,
    }
    text = json.dumps(manifest, default=str, sort_keys=True)
    if args.manifest:
        Path(args.manifest).write_text(text + "\n")
    else:
        print(text, file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
