"""Command-line interface.

Subcommands: classify (one image, JSON to stdout), eval (dataset to a
report plus JSONL results), overlay (diagnostic heatmap PNG), selftest
(reference-stack golden suite, or exported-backend verification with
--backend).  Flags mirror RunConfig; --config supplies a JSON file that
explicit flags override.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import attention as attn_mod
from . import scoring, selftest
from .images import load_image
from .pipeline import (
    RunConfig,
    canonical_json,
    evaluate_dataset,
    load_backends,
    render_overlay,
    run_image,
)
from .rawcrop import crop_and_preprocess, full_image_box
from .seeding import make_rng, per_image_seed

_CONFIG_FLAGS = (
    ("--alpha", float, "crop size lower bound, fraction of each image side"),
    ("--beta", float, "crop size upper bound"),
    ("--k", int, "number of top attention patches to sample from"),
    ("--n-crops", int, "number of sampled crops per image"),
    ("--tau", float, "soft-matching softmax temperature"),
    ("--seed", int, "global run seed"),
    ("--split-layer", int, "feature-selection split layer override"),
    ("--patch-temperature", float, "softmax temperature over top-k attention values"),
)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file of RunConfig fields")
    for flag, typ, help_text in _CONFIG_FLAGS:
        p.add_argument(flag, type=typ, default=None, help=help_text)
    p.add_argument("--branches", choices=("raw_only", "feature_only", "both"), default=None)
    p.add_argument("--include-full-image", action="store_true", default=None,
                   help="also score the uncropped image embedding")


def _build_config(args: argparse.Namespace, paths: dict) -> RunConfig:
    base: dict = {}
    if args.config:
        with open(args.config) as f:
            base.update(json.load(f))
    for flag, _, _ in _CONFIG_FLAGS:
        name = flag.lstrip("-").replace("-", "_")
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    if args.branches is not None:
        base["branches"] = args.branches
    if args.include_full_image is not None:
        base["include_full_image"] = args.include_full_image
    base["paths"] = paths
    return RunConfig.from_dict(base)


def _cmd_classify(args: argparse.Namespace) -> int:
    config = _build_config(args, {
        "models": str(args.models), "catalog": str(args.catalog), "image": str(args.image),
    })
    backends = load_backends(args.models)
    catalog = scoring.load_catalog(args.catalog)
    image = load_image(args.image)
    if args.baseline:
        spec = backends.embedding.spec.input_spec()
        emb = backends.embedding.encode_image(
            crop_and_preprocess(image, full_image_box(image), spec)
        )
        scores = scoring.baseline_clip_score(emb, catalog.class_prototypes())
        predicted = int(np.argmax(scores))
        out = {
            "image_id": image.source,
            "mode": "baseline",
            "predicted": catalog.class_names[predicted],
            "class_scores": {n: float(s) for n, s in zip(catalog.class_names, scores)},
        }
    else:
        result = run_image(image, config, backends, catalog, image_id=image.source)
        out = result.to_dict()
    print(canonical_json(out))
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    config = _build_config(args, {
        "models": str(args.models), "catalog": str(args.catalog), "dataset": str(args.dataset),
    })
    backends = load_backends(args.models)
    catalog = scoring.load_catalog(args.catalog)
    class_map = None
    if args.class_map:
        with open(args.class_map) as f:
            class_map = json.load(f)
    report = evaluate_dataset(
        args.dataset, config, backends, catalog,
        workers=args.workers, output_dir=args.output, class_map=class_map,
    )
    print(canonical_json(report.to_dict()))
    return 0


def _cmd_overlay(args: argparse.Namespace) -> int:
    config = _build_config(args, {"models": str(args.models), "image": str(args.image)})
    backends = load_backends(args.models)
    image = load_image(args.image)
    att = backends.attention
    att_input = crop_and_preprocess(image, full_image_box(image), att.spec.input_spec())
    grid = attn_mod.average_heads(att.cls_attention(att_input))
    k = min(config.k, grid.values.size)
    topk = attn_mod.patch_probabilities(attn_mod.select_top_k(grid, k), config.patch_temperature)
    rng = make_rng(per_image_seed(config.seed, image.source))
    anchors = attn_mod.sample_patches(topk, config.n_crops, rng)
    from .rawcrop import patch_center_pixels, propose_crop_box

    boxes = [
        propose_crop_box(
            patch_center_pixels((p.row, p.col), grid.grid, (image.width, image.height)),
            config.alpha, config.beta, (image.width, image.height), rng,
            anchor=(p.row, p.col),
        )
        for p in anchors
    ]
    Path(args.out).write_bytes(render_overlay(image, grid, boxes))
    print(f"wrote {args.out}")
    return 0


def _cmd_selftest(args: argparse.Namespace) -> int:
    if args.backend:
        results = selftest.backend_suite(args.backend)
    else:
        results = selftest.reference_suite()
    failed = 0
    for name, ok, detail in results:
        status = "PASS" if ok else "FAIL"
        line = f"{status}  {name}"
        if detail:
            line += f"  ({detail})"
        print(line)
        failed += 0 if ok else 1
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return 1 if failed else 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="abselect",
        description="Zero-shot image classification with attention-guided crop selection",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify one image, JSON to stdout")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--catalog", type=Path, required=True)
    p.add_argument("--baseline", action="store_true",
                   help="plain full-image cosine against per-class mean description embeddings")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_classify)

    p = sub.add_parser("eval", help="evaluate a class-per-directory dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--catalog", type=Path, required=True)
    p.add_argument("--output", type=Path, default=None, help="directory for report.json and results.jsonl")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--class-map", type=Path, default=None,
                   help="JSON mapping of dataset directory names to catalog class names")
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("overlay", help="render an attention heatmap and crop boxes")
    p.add_argument("--image", type=Path, required=True)
    p.add_argument("--models", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _add_config_flags(p)
    p.set_defaults(fn=_cmd_overlay)

    p = sub.add_parser("selftest", help="run the built-in verification suite")
    p.add_argument("--backend", type=Path, default=None,
                   help="verify an exported backend directory instead of the reference stack")
    p.set_defaults(fn=_cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except Exception as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
