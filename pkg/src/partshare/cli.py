"""Command line driver: ``partshare {synth,train,predict,fuse,analyze,eval}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
Every command writes ``<output>.config.json`` with all resolved parameters.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict, replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .analysis import (
    DEFAULT_BINS,
    DEFAULT_CONTEXT_THRESHOLD,
    histogram_from_table,
    provenance_table,
    write_histogram_csv,
    write_provenance_csv,
)
from .boosting import DEFAULT_DEPTH
from .errors import DataError, InvalidConfig, PartShareError
from .formats import Dataset, ingest, write_synthetic
from .fusion import BOOTSTRAP, DEFAULT_TRANSFER_EXPONENT, LATE, FusedModel, fuse_responses
from .metrics import compute_accuracy, mean_ap
from .model_io import load_model, save_model
from .part_model import DEFAULT_SHRINKAGE, PartUniverse
from .sampling import (
    DEFAULT_CANDIDATES,
    DEFAULT_EPSILON,
    STRATEGIES,
    SamplerStrategy,
    attach_parts,
    train_shared,
    write_training_log,
)
from .synthgen import PRESETS, generate, preset, split

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _echo_config(target: Path, command: str, args: argparse.Namespace, **resolved) -> None:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "command")}
    cfg.update(resolved)
    doc = {"command": command, "version": __version__, "parameters": cfg}
    Path(f"{target}.config.json").write_text(json.dumps(doc, sort_keys=True, indent=1, default=str) + "\n")


def _data_path(arg: str) -> Path:
    if arg == "-":
        line = sys.stdin.readline().strip()
        if not line:
            raise UsageError("--data - expects a manifest path on standard input")
        return Path(line)
    return Path(arg)


def _load(args) -> Dataset:
    path = _data_path(args.data)
    args.data = str(path)  # the echoed config records the resolved manifest
    return ingest(path)


def _strategy(args) -> SamplerStrategy:
    return SamplerStrategy(args.strategy, args.candidates, args.epsilon)


def _part_responses(model, data: Dataset) -> np.ndarray:
    pm = model.part_model if isinstance(model, FusedModel) else model
    if not pm.pool.selected:
        return np.zeros((len(data.images), 0))
    if pm.detectors is None:
        raise DataError("model carries no detectors")
    return pm.lift(pm.pool_responses(data.images))


def _scores(model, data: Dataset) -> np.ndarray:
    r = _part_responses(model, data)
    if isinstance(model, FusedModel):
        if data.global_features is None:
            raise DataError("a fused model needs global features in the dataset")
        return model.scores(data.global_features, r)
    return model.scores(r)


def _check_categories(extra: dict, data: Dataset) -> None:
    names = extra.get("categories")
    if names is not None and list(names) != list(data.categories):
        raise DataError(f"model categories {names} differ from dataset categories {data.categories}")


# -- commands ----------------------------------------------------------------------

def cmd_synth(args) -> int:
    try:
        cfg = preset(args.preset, args.seed)
        overrides = {}
        if args.num_images is not None:
            overrides["num_images"] = args.num_images
        if args.num_test is not None:
            overrides["num_test"] = args.num_test
        if overrides:
            cfg = replace(cfg, **overrides)
        cfg.validate()
    except InvalidConfig as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out or f"synth_{args.preset}_s{args.seed}")
    train, test = split(generate(cfg))
    train_path = write_synthetic(train, out, "train")
    if len(test.images):
        write_synthetic(test, out, "test")
    _echo_config(out / "synth", "synth", args, out=str(out), num_images=cfg.num_images,
                 num_test=cfg.num_test, generator=asdict(cfg))
    print(train_path)
    return EXIT_OK


def cmd_train(args) -> int:
    data = _load(args)
    universe = PartUniverse.from_images(data.images, args.shrinkage)
    responses = universe.encode(data.images)
    model = train_shared(responses, data.labels, _strategy(args), args.budget, args.iters, args.depth,
                         args.seed)
    attach_parts(model, universe)
    out = Path(args.out)
    save_model(model, out, extra={"categories": data.categories})
    write_training_log(model.training_log, f"{out}.log.csv")
    _echo_config(out, "train", args, universe_size=len(universe), num_images=len(data.images))
    largest = max(row["pool_size"] for row in model.training_log)
    print(f"trained {args.iters} iterations, |P| = {len(model.pool)} (max {largest}, budget {args.budget})",
          file=sys.stderr)
    return EXIT_OK


def cmd_fuse(args) -> int:
    data = _load(args)
    g = data.global_features
    if args.global_features:
        from .formats import read_features

        g = read_features(args.global_features).vectors.astype(np.float64)
    if g is None:
        raise DataError("fusion needs global features (manifest global_features or --global)")
    if g.shape[0] != len(data.images):
        raise DataError(f"{g.shape[0]} global rows for {len(data.images)} images")
    universe = PartUniverse.from_images(data.images, args.shrinkage)
    responses = universe.encode(data.images)
    model = fuse_responses(g, responses, data.labels, _strategy(args), args.budget, args.iters,
                           alpha=args.alpha, depth=args.depth, global_iterations=args.global_iters,
                           seed=args.seed, fusion=args.fusion)
    attach_parts(model.part_model, universe)
    out = Path(args.out)
    save_model(model, out, extra={"categories": data.categories})
    write_training_log(model.part_model.training_log, f"{out}.log.csv")
    _echo_config(out, "fuse", args, universe_size=len(universe), num_images=len(data.images))
    return EXIT_OK


def cmd_predict(args) -> int:
    model, extra = load_model(args.model)
    data = _load(args)
    _check_categories(extra, data)
    scores = _scores(model, data)
    out = Path(args.out)
    names = data.categories
    with open(out, "w") as fh:
        if model.mode == "multiclass":
            fh.write(",".join(["image_id", "predicted"] + [f"score_{n}" for n in names]) + "\n")
            for im, row in zip(data.images, scores):
                fh.write(",".join([im.image_id, names[int(np.argmax(row))]] + [repr(float(v)) for v in row]) + "\n")
        else:
            fh.write(",".join(["image_id"] + [f"score_{n}" for n in names]) + "\n")
            for im, row in zip(data.images, scores):
                fh.write(",".join([im.image_id] + [repr(float(v)) for v in row]) + "\n")
    _echo_config(out, "predict", args)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, extra = load_model(args.model)
    data = _load(args)
    _check_categories(extra, data)
    scores = _scores(model, data)
    if args.metric == "accuracy":
        value = compute_accuracy(np.argmax(scores, axis=1), data.labels)
        result = {"metric": "accuracy", "value": value}
    else:
        value, per = mean_ap(scores, data.labels)
        result = {"metric": "map", "value": value,
                  "per_category": {n: (None if np.isnan(v) else v) for n, v in zip(data.categories, per)}}
    text = json.dumps(result, sort_keys=True) + "\n"
    sys.stdout.write(text)
    if args.out:
        Path(args.out).write_text(text)
        _echo_config(Path(args.out), "eval", args)
    return EXIT_OK


def cmd_analyze(args) -> int:
    model, extra = load_model(args.model)
    data = _load(args)
    _check_categories(extra, data)
    pm = model.part_model if isinstance(model, FusedModel) else model
    responses = _part_responses(pm, data)
    rows = provenance_table(pm, responses, data.labels, data.boxes_by_image(), args.tau)
    out = Path(args.out)
    write_histogram_csv(histogram_from_table(rows, args.bins), out)
    if args.table:
        write_provenance_csv(rows, args.table)
    _echo_config(out, "analyze", args)
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def _positive(kind):
    def parse(text):
        try:
            value = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}")
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return value
    return parse


def _training_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="dataset manifest, or - to read its path from stdin")
    p.add_argument("--strategy", choices=STRATEGIES, default="max-exploit")
    p.add_argument("--budget", type=_positive(int), required=True, help="global part budget s")
    p.add_argument("--iters", type=_positive(int), default=100, help="boosting iterations T")
    p.add_argument("--depth", type=_positive(int), default=DEFAULT_DEPTH)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--candidates", type=_positive(int), default=DEFAULT_CANDIDATES)
    p.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
    p.add_argument("--shrinkage", type=float, default=DEFAULT_SHRINKAGE)
    p.add_argument("--out", default="model.zip")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="partshare", description="Shared part selection under a global budget.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    p.add_argument("--preset", choices=PRESETS, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-images", type=_positive(int))
    p.add_argument("--num-test", type=int)
    p.add_argument("--out", help="output directory (default synth_<preset>_s<seed>)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="select shared parts and train the boosted classifiers")
    _training_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("fuse", help="bootstrap fusion of global features and shared parts")
    _training_args(p)
    p.add_argument("--global", dest="global_features", help="SPF1 file of global features (one row per image)")
    p.add_argument("--global-iters", type=_positive(int))
    p.add_argument("--alpha", type=_positive(float), default=DEFAULT_TRANSFER_EXPONENT)
    p.add_argument("--fusion", choices=(BOOTSTRAP, LATE), default=BOOTSTRAP)
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("predict", help="score a dataset with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default="predictions.csv")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("analyze", help="importance-vs-agreement histogram of the selected parts")
    p.add_argument("--model", required=True)
    p.add_argument("--data", "--boxes", dest="data", required=True,
                   help="manifest of the training images, with ground-truth boxes")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--tau", type=float, default=DEFAULT_CONTEXT_THRESHOLD)
    p.add_argument("--out", default="importance_histogram.csv")
    p.add_argument("--table", help="also write the per-part provenance table here")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("eval", help="accuracy or mean AP of a model on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--metric", choices=("map", "accuracy"), default="accuracy")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "analyze" and args.bins < 2:
            raise UsageError("--bins must be at least 2")
        return args.func(args)
    except UsageError as exc:
        print(f"partshare: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"partshare: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PartShareError as exc:
        print(f"partshare: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
