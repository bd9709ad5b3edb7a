"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import load_config, make_pipeline_config, make_scene_spec, make_train_config
from .data import (
    DEFAULT_CLASSES,
    load_manifest,
    load_rgbn,
    rebase_manifest,
    save_manifest,
    split_manifest,
)
from .engine import backend_name, finite_diff_check
from .errors import DataError, NumericError, RgbnError
from .geometry import polygon_bbox
from .metrics import InstancePrediction
from .models import RELU_INIT_GAIN, build_fcn, build_resnet15, build_sequential
from .pipeline import (
    LoadedPipeline,
    evaluate_pipeline,
    run_inference,
    train_classifier,
    train_segmenter,
    write_metrics,
)
from .surgery import STRATEGIES, expand_input_conv, load_archive, save_archive, verify_expansion
from .synth import PRESETS, generate_dataset, generate_preset
from .transforms import (
    ChannelPlan,
    consolidate_to_leaf,
    extract_crop_dataset,
    fuse_dataset,
    grid_dataset,
    occlude_dataset,
)

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on usage errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _doc(args) -> dict:
    return load_config(args.config) if getattr(args, "config", None) else {}


def _require_out(args) -> Path:
    if not args.out:
        raise DataError("--out is required for this command")
    return Path(args.out)


# ---------------------------------------------------------------------------
# subcommand handlers

def cmd_synth(args) -> int:
    out = _require_out(args)
    seed = 0 if args.seed is None else args.seed
    if args.preset:
        manifest = generate_preset(args.preset, out, seed=seed,
                                   overrides=_doc(args).get("scene"))
    else:
        spec = make_scene_spec(_doc(args))
        manifest = generate_dataset(spec, args.scenes, out, seed=seed)
    counts = manifest.counts_by_split()
    print(json.dumps({"manifest": str(out / "manifest.json"),
                      "records": len(manifest.records), "splits": counts}))
    return 0


def cmd_transform(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _require_out(args)
    if args.kind == "consolidate":
        out.parent.mkdir(parents=True, exist_ok=True)
        result = consolidate_to_leaf(rebase_manifest(manifest, out.parent))
        save_manifest(result, out)
        print(json.dumps({"manifest": str(out), "records": len(result.records)}))
        return 0
    if args.kind == "crops":
        plan = ChannelPlan.parse(args.plan)
        path = extract_crop_dataset(manifest, args.size, plan, out, split=args.split)
        doc = json.loads(path.read_text())
        print(json.dumps({"crops_json": str(path), "crops": len(doc["crops"])}))
        return 0
    if args.kind == "fuse":
        result = fuse_dataset(manifest, ChannelPlan.parse(args.plan), out)
    elif args.kind == "occlude":
        result = occlude_dataset(manifest, out)
    elif args.kind == "grid":
        result = grid_dataset(manifest, out)
    else:  # pragma: no cover - argparse restricts choices
        raise DataError(f"unknown transform {args.kind!r}")
    print(json.dumps({"manifest": str(out / "manifest.json"),
                      "records": len(result.records)}))
    return 0


def cmd_split(args) -> int:
    manifest = load_manifest(args.manifest)
    out = _require_out(args)
    try:
        ratios = tuple(float(r) for r in args.ratios.split(","))
    except ValueError as e:
        raise DataError(f"malformed split ratios {args.ratios!r}: {e}") from e
    if len(ratios) != 3:
        raise DataError("split ratios must be three comma-separated numbers")
    seed = 0 if args.seed is None else args.seed
    result = split_manifest(rebase_manifest(manifest, out.parent), ratios, seed=seed)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_manifest(result, out)
    print(json.dumps({"manifest": str(out), "splits": result.counts_by_split()}))
    return 0


def cmd_train(args) -> int:
    doc = _doc(args)
    config = make_train_config(doc, seed=args.seed)
    if args.mode == "cls":
        if not args.crops:
            raise DataError("train cls requires --crops")
        archive, metrics = train_classifier(config, args.crops)
    else:
        if not args.manifest:
            raise DataError(f"train {args.mode} requires --manifest")
        manifest = load_manifest(args.manifest)
        if args.mode == "seg":
            classes = ["leaf"]
        else:  # single
            classes = [c for c in DEFAULT_CLASSES if c in manifest.classes]
            if not classes:
                raise DataError("manifest has no condition classes for single-stage training")
        archive, metrics = train_segmenter(config, manifest, classes)
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_archive(archive, out)
    if args.metrics:
        Path(args.metrics).parent.mkdir(parents=True, exist_ok=True)
        write_metrics(metrics, args.metrics)
    for line in (json.dumps({k: m.get(k) for k in
                             ("epoch", "train_loss", "val_acc", "val_loss", "val_map")})
                 for m in metrics):
        print(line)
    return 0


def cmd_surgery(args) -> int:
    archive = load_archive(args.archive)
    seed = 0 if args.seed is None else args.seed
    expanded = expand_input_conv(archive, args.layer, args.strategy, seed=seed)
    out = _require_out(args)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_archive(expanded, out)
    report = verify_expansion(archive, expanded, args.strategy, args.layer)
    print(json.dumps(report))
    if not report["passed"]:
        raise NumericError("expansion verification failed")
    return 0


def _prediction_summary(pred: InstancePrediction) -> dict:
    rows = np.flatnonzero(pred.mask.any(axis=1))
    cols = np.flatnonzero(pred.mask.any(axis=0))
    bbox = [int(cols[0]), int(rows[0]), int(cols[-1] + 1), int(rows[-1] + 1)]
    return {"class": pred.class_name, "confidence": pred.confidence,
            "area": int(pred.mask.sum()), "bbox": bbox}


def cmd_infer(args) -> int:
    pipeline = LoadedPipeline(make_pipeline_config(_doc(args)))
    image = load_rgbn(args.rgb, args.nir)
    preds = run_inference(image, pipeline)
    payload = json.dumps([_prediction_summary(p) for p in preds], indent=2)
    if args.out:
        Path(args.out).write_text(payload + "\n")
    print(payload)
    return 0


def cmd_eval(args) -> int:
    pipeline = LoadedPipeline(make_pipeline_config(_doc(args)))
    manifest = load_manifest(args.manifest)
    report = evaluate_pipeline(pipeline, manifest)
    if args.out:
        Path(args.out).write_text(report.to_json() + "\n")
    print(report.to_json())
    return 0


def cmd_gradcheck(args) -> int:
    size = args.size
    # default seed 1: central differences are only meaningful away from
    # ReLU/pool kinks, and this seed keeps every checked weight clear of them
    seed = 1 if args.seed is None else args.seed
    # reduced widths keep every model under the parameter guard at desk sizes;
    # the training-time init gain keeps preactivations O(1) so the central
    # difference is well conditioned
    models = {
        "sequential": lambda: build_sequential(
            4, 3, size, widths=(4, 6, 6, 8, 8, 10), dense_hidden=16, seed=seed,
            init_gain=RELU_INIT_GAIN),
        "resnet15": lambda: build_resnet15(4, 3, size, widths=(4, 6, 8), seed=seed,
                                           init_gain=RELU_INIT_GAIN),
        "fcn": lambda: build_fcn(4, 3, size, encoder_widths=(4, 6, 8, 8),
                                 decoder_widths=(8, 8, 6, 4), seed=seed,
                                 init_gain=RELU_INIT_GAIN),
    }
    names = list(models) if args.model == "all" else [args.model]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in names:
        model = models[name]()
        batch = rng.standard_normal((2,) + model.input_shape)
        errors = finite_diff_check(model, batch, epsilon=args.epsilon, seed=seed)
        top = max(errors.values())
        worst = max(worst, top)
        print(json.dumps({"model": name, "backend": backend_name(),
                          "epsilon": args.epsilon, "max_rel_error": top,
                          "tolerance": GRADCHECK_TOLERANCE}))
    if worst >= GRADCHECK_TOLERANCE:
        raise NumericError(f"gradient check failed: max relative error {worst:.3e}")
    return 0


# ---------------------------------------------------------------------------
# parser wiring

def build_parser() -> _Parser:
    parser = _Parser(prog="rgbn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"rgbn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p):
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", help="output path")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    common(p)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--scenes", type=int, default=8)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("transform", help="apply a dataset conversion")
    common(p)
    p.add_argument("kind", choices=["fuse", "consolidate", "occlude", "grid", "crops"])
    p.add_argument("--manifest", required=True)
    p.add_argument("--plan", default="RGBN")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--split", default=None, help="restrict crop extraction to one split")
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("split", help="assign train/val/test tags")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--ratios", default="0.8,0.1,0.1")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a model")
    common(p)
    p.add_argument("mode", choices=["cls", "seg", "single"])
    p.add_argument("--crops", help="crops.json for cls mode")
    p.add_argument("--manifest", help="dataset manifest for seg/single modes")
    p.add_argument("--metrics", help="write per-epoch metrics JSONL here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("surgery", help="input-layer weight surgery")
    common(p)
    p.add_argument("action", choices=["expand"])
    p.add_argument("--archive", required=True)
    p.add_argument("--layer", default="conv1.weight")
    p.add_argument("--strategy", choices=list(STRATEGIES), required=True)
    p.set_defaults(func=cmd_surgery)

    p = sub.add_parser("infer", help="run a pipeline on one image pair")
    common(p)
    p.add_argument("--rgb", required=True)
    p.add_argument("--nir", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="evaluate a pipeline on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    common(p)
    p.add_argument("--model", choices=["all", "sequential", "resnet15", "fcn"],
                   default="all")
    p.add_argument("--size", type=int, default=32)
    # small steps keep the central difference off ReLU/pool kinks
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except RgbnError as e:
        print(f"rgbn: error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
