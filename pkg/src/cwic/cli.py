"""Command-line entry point.

Exit codes: 0 success, 1 usage, 2 I/O, 3 format or corruption.  Every
subcommand prints its effective configuration to stderr before running.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from cwic import __version__, container, metrics, nets
from cwic.entropy import models as emodels
from cwic.entropy.bitplanes import binarize_importance
from cwic.errors import FormatError
from cwic.train import TrainConfig, load_patches, train

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_FORMAT = 0, 1, 2, 3

log = logging.getLogger("cwic")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _threads() -> int:
    value = os.environ.get("CWIC_THREADS")
    if not value:
        return 1
    try:
        return max(1, int(value))
    except ValueError:
        raise UsageError(f"CWIC_THREADS must be an integer, got {value!r}") from None


def _print_config(command: str, items: dict) -> None:
    print(f"# cwic {__version__} {command}", file=sys.stderr)
    for key, value in items.items():
        print(f"{key} = {value}", file=sys.stderr)


def _image_files(dir_path) -> list[Path]:
    d = Path(dir_path)
    if not d.is_dir():
        raise FileNotFoundError(f"not a directory: {d}")
    return sorted(p for p in d.iterdir() if p.suffix.lower() in (".ppm", ".pnm"))


# --------------------------------------------------------------------------
# subcommands


def cmd_train(args) -> int:
    if args.config:
        cfg = TrainConfig.from_file(args.config)
    else:
        if args.gamma is None or args.bpp is None:
            raise UsageError("train: --gamma and --bpp are required unless --config is given")
        cfg = TrainConfig(gamma=args.gamma, r0=args.bpp, n=args.n,
                          importance_map_enabled=not args.no_importance_map)
    overrides = {"batch_size": args.batch_size, "max_iters": args.iters,
                 "total_iters": args.total_iters, "seed": args.seed, "patch_size": args.patch_size}
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)
    _print_config("train", {"data": args.data, "out": args.out, "warm_start": args.warm_start,
                            "max_patches": args.max_patches})
    print(cfg.to_text(), end="", file=sys.stderr)
    patches = load_patches(args.data, cfg.patch_size, cfg.seed, args.max_patches)
    if len(patches) == 0:
        raise UsageError(f"train: no {cfg.patch_size}x{cfg.patch_size} patches found in {args.data}")
    start = nets.load_model(args.warm_start) if args.warm_start else None
    params = train(cfg, patches, start)
    nets.save_model(params, args.out)
    print(f"wrote {args.out} ({len(patches)} patches, model crc {params.checksum():08x})")
    return EXIT_OK


def harvest_corpora(params, images, include_masked: bool = False):
    """Code and importance-bitplane corpora from compressing ``images``."""
    code_parts, imp_parts = [], []
    for img in images:
        bundle = container.analyze(img, params)
        code_parts.append(emodels.harvest(bundle.codes, bundle.mask, include_masked))
        if params.importance_enabled:
            planes = binarize_importance(bundle.imp_q, params.L)
            imp_parts.append(emodels.harvest(planes, np.ones_like(planes)))
    return emodels.Corpus.concat(code_parts), emodels.Corpus.concat(imp_parts)


def fit_entropy_model(codes, imp, freq_table: bool = False, **kw) -> emodels.EntropyModel:
    if freq_table:
        base = emodels.EntropyModel.frequency_tables()
    else:
        seed = kw.get("seed", 0)
        base = emodels.EntropyModel(emodels.NetPredictor.random(seed),
                                    emodels.NetPredictor.random(seed + 1))
    code_model = emodels.train_entropy(base.codes, codes, **kw)
    imp_model = emodels.train_entropy(base.importance, imp, **kw) if len(imp) else base.importance
    return emodels.EntropyModel(code_model, imp_model)


def cmd_train_entropy(args) -> int:
    _print_config("train-entropy", {"model": args.model, "data": args.data, "out": args.out,
                                    "freq_table": args.freq_table, "iters": args.iters,
                                    "batch_size": args.batch_size, "seed": args.seed,
                                    "max_images": args.max_images})
    params = nets.load_model(args.model)
    files = _image_files(args.data)[: args.max_images]
    if not files:
        raise UsageError(f"train-entropy: no PPM images in {args.data}")
    codes, imp = harvest_corpora(params, [container.read_ppm(f) for f in files])
    if len(codes) == 0:
        raise UsageError("train-entropy: the model kept no code bits on these images")
    model = fit_entropy_model(codes, imp, args.freq_table, max_iters=args.iters,
                              batch_size=args.batch_size, seed=args.seed)
    emodels.save_entropy(model, args.out)
    nll = emodels.masked_nll(model.codes, codes)
    print(f"wrote {args.out} ({len(codes)} code bits, training nll {nll:.4f} bits/bit)")
    return EXIT_OK


def _variant(args) -> str:
    chosen = [name for name, on in (("no-entropy", args.no_entropy), ("codes-only", args.codes_only),
                                    ("imp-only", args.imp_only)) if on]
    if len(chosen) > 1:
        raise UsageError("compress: --no-entropy, --codes-only and --imp-only are exclusive")
    return chosen[0] if chosen else "full"


def _entropy_for(args):
    if args.freq_table:
        if args.entropy:
            model = emodels.load_entropy(args.entropy)
            if model.kind == 1:
                return model
        return emodels.EntropyModel.frequency_tables()
    return emodels.load_entropy(args.entropy) if args.entropy else None


def cmd_compress(args) -> int:
    variant = _variant(args)
    _print_config("compress", {"model": args.model, "entropy": args.entropy, "input": args.input,
                               "output": args.output, "variant": variant,
                               "freq_table": args.freq_table})
    params = nets.load_model(args.model)
    entropy = _entropy_for(args)
    if entropy is None and variant != "no-entropy":
        raise UsageError("compress: --entropy is required unless --no-entropy or --freq-table")
    image = container.read_ppm(args.input)
    stream = container.compress(image, params, entropy, container.CompressOptions.variant(variant))
    data = stream.to_bytes()
    Path(args.output).write_bytes(data)
    print(f"wrote {args.output}: {len(data)} bytes, {container.stream_bpp(stream):.4f} bpp "
          f"(payload {container.payload_bpp(stream):.4f} bpp)")
    return EXIT_OK


def cmd_decompress(args) -> int:
    _print_config("decompress", {"model": args.model, "entropy": args.entropy,
                                 "input": args.input, "output": args.output})
    params = nets.load_model(args.model)
    entropy = emodels.load_entropy(args.entropy) if args.entropy else None
    image = container.decompress(Path(args.input).read_bytes(), params, entropy)
    container.write_ppm(image, args.output)
    print(f"wrote {args.output}: {image.width}x{image.height}")
    return EXIT_OK


def cmd_eval(args) -> int:
    _print_config("eval", {"orig": args.orig, "recon": args.recon, "stream": args.stream,
                           "codec": args.codec})
    orig = container.read_ppm(args.orig)
    recon = container.read_ppm(args.recon)
    nbytes = Path(args.stream).stat().st_size
    point = metrics.evaluate(Path(args.orig).stem, args.codec, orig.pixels, recon.pixels, nbytes)
    print(",".join(metrics.CSV_COLUMNS))
    print(point.line())
    return EXIT_OK


def _curve_points(path: Path, models: list, threads: int) -> list:
    try:
        image = container.read_ppm(path)
    except (OSError, FormatError) as exc:
        log.warning("skipping %s: %s", path.name, exc)
        return []
    points = []
    for label, params, entropy in models:
        stream = container.compress(image, params, entropy,
                                    container.CompressOptions.variant("full" if entropy else "no-entropy"))
        recon = container.decompress(stream, params, entropy)
        points.append(metrics.evaluate(path.stem, label, image.pixels, recon.pixels, len(stream)))
    return points


def cmd_curves(args) -> int:
    model_paths = [m for m in args.models.split(",") if m]
    entropy_paths = [e for e in args.entropy.split(",")] if args.entropy else [""] * len(model_paths)
    if len(entropy_paths) != len(model_paths):
        raise UsageError("curves: --entropy needs one entry per model (empty for none)")
    threads = _threads()
    _print_config("curves", {"images": args.images, "models": args.models, "entropy": args.entropy,
                             "out": args.out, "baseline_csv": args.baseline_csv,
                             "threads": threads})
    models = []
    labels = [Path(mp).stem for mp in model_paths]
    for i, (mp, ep) in enumerate(zip(model_paths, entropy_paths)):
        label = labels[i] if labels.count(labels[i]) == 1 else f"{labels[i]}-{i + 1}"
        models.append((label, nets.load_model(mp), emodels.load_entropy(ep) if ep else None))
    files = _image_files(args.images)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        per_image = list(pool.map(lambda p: _curve_points(p, models, threads), files))
    points = [p for group in per_image for p in group]
    if args.baseline_csv:
        points += metrics.read_csv(args.baseline_csv)
    metrics.write_csv(points, args.out)
    print(f"wrote {args.out}: {len(points)} rows")
    return EXIT_OK


# --------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cwic", description="Learned image compression with importance-map bit allocation")
    parser.add_argument("--version", action="version", version=f"cwic {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train encoder, decoder and importance net")
    p.add_argument("--data", required=True, help="directory of PPM training images")
    p.add_argument("--gamma", type=float, help="rate-loss weight")
    p.add_argument("--bpp", type=float, help="target r0; threshold r = r0*h*w (half that for n=128)")
    p.add_argument("--n", type=int, choices=(64, 128), default=64)
    p.add_argument("--no-importance-map", action="store_true")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="key = value file as printed by a previous run")
    p.add_argument("--warm-start", help="initialise from this model file")
    p.add_argument("--iters", type=int, help="max steps per learning-rate stage")
    p.add_argument("--total-iters", type=int, help="max steps over all stages")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--patch-size", type=int)
    p.add_argument("--max-patches", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("train-entropy", help="fit the context model on codes of a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--freq-table", action="store_true", help="prime adaptive frequency tables instead")
    p.add_argument("--iters", type=int, default=3000, help="max steps per learning-rate stage")
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--max-images", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_train_entropy)

    p = sub.add_parser("compress")
    p.add_argument("--model", required=True)
    p.add_argument("--entropy")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--no-entropy", action="store_true", help="raw payloads")
    p.add_argument("--codes-only", action="store_true", help="entropy-code only the binary codes")
    p.add_argument("--imp-only", action="store_true", help="entropy-code only the importance map")
    p.add_argument("--freq-table", action="store_true", help="adaptive frequency-table contexts")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress")
    p.add_argument("--model", required=True)
    p.add_argument("--entropy")
    p.add_argument("input")
    p.add_argument("output")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("eval", help="print one rate-distortion point")
    p.add_argument("--orig", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--stream", required=True)
    p.add_argument("--codec", default="cwic")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("curves", help="rate-distortion CSV over a directory of images")
    p.add_argument("--images", required=True)
    p.add_argument("--models", required=True, help="comma-separated model files")
    p.add_argument("--entropy", help="comma-separated entropy files, one per model")
    p.add_argument("--out", required=True)
    p.add_argument("--baseline-csv", help="external codec rows to append unchanged")
    p.set_defaults(func=cmd_curves)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("cwic: a subcommand is required (see --help)")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
