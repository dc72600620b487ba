"""absexport command line.

Subcommands: encoder (split prefix/suffix graphs + sidecar + probes),
attention (attention-source graph), catalog (description embeddings),
fixtures (cross-check bundle incl. an exported world), stack (everything
into one directory with a manifest), verify-manifest.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .catalog import build_catalog, load_descriptions, make_text_encoder
from .fixtures import generate_fixtures
from .graphs import export_attention_model, export_split_encoder
from .manifest import verify_manifest, write_manifest
from .vit import ExportError, load_model


def _cmd_encoder(args) -> int:
    model = load_model(args.model)
    info = export_split_encoder(
        model, args.split_layer, args.out, fmt=args.format,
        probe_count=args.probes,
    )
    print(json.dumps(info, indent=2))
    return 0


def _cmd_attention(args) -> int:
    model = load_model(args.model)
    info = export_attention_model(model, args.out, fmt=args.format)
    print(json.dumps(info, indent=2))
    return 0


def _cmd_catalog(args) -> int:
    descriptions = load_descriptions(args.descriptions)
    encoder = make_text_encoder(args.text_encoder)
    order = args.classes.split(",") if args.classes else None
    stats = build_catalog(descriptions, encoder, args.out, class_order=order)
    print(json.dumps(stats, indent=2))
    return 0


def _cmd_fixtures(args) -> int:
    info = generate_fixtures(args.seed, args.out, fmt=args.format)
    print(json.dumps({"seed": info["seed"], "file_count": len(info["files"]),
                      "catalog": info["catalog"]}, indent=2))
    return 0


def _cmd_stack(args) -> int:
    out = Path(args.out)
    embedder = load_model(args.model)
    attention_id = args.attention_model or args.model
    attention = load_model(attention_id)
    split = args.split_layer if args.split_layer is not None else embedder.config.layers - 1
    enc_info = export_split_encoder(embedder, split, out / "models" / "embedding",
                                    fmt=args.format, probe_count=args.probes)
    att_info = export_attention_model(attention, out / "models" / "attention", fmt=args.format)
    stats = None
    if args.descriptions:
        encoder = make_text_encoder(args.text_encoder)
        stats = build_catalog(load_descriptions(args.descriptions), encoder, out)
    manifest = write_manifest(
        out,
        embedding_model=args.model,
        attention_model=attention_id,
        split_layer=split,
        catalog_stats=stats,
        sections={"encoder": enc_info, "attention": att_info},
    )
    print(f"wrote {manifest}")
    return 0


def _cmd_verify_manifest(args) -> int:
    bad = verify_manifest(args.manifest)
    if bad:
        print("hash mismatches:\n" + "\n".join(f"  {name}" for name in bad))
        return 1
    print("all file hashes match")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="absexport",
        description="Produce abselect engine inputs from model checkpoints",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encoder", help="export split prefix/suffix graphs")
    p.add_argument("--model", required=True,
                   help="random:<spec>, file:<ckpt.pt>, hf-clip:<name> or hf-dino:<name>")
    p.add_argument("--split-layer", type=int, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("torchscript", "onnx"), default="torchscript")
    p.add_argument("--probes", type=int, default=5)
    p.set_defaults(fn=_cmd_encoder)

    p = sub.add_parser("attention", help="export an attention-source graph")
    p.add_argument("--model", required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("torchscript", "onnx"), default="torchscript")
    p.set_defaults(fn=_cmd_attention)

    p = sub.add_parser("catalog", help="build a description-embedding catalog")
    p.add_argument("--descriptions", type=Path, required=True,
                   help="JSON file: {class name: [description, ...]}")
    p.add_argument("--text-encoder", default="hash:16",
                   help="hash:<dim>[:<seed>] or hf-clip-text:<name>")
    p.add_argument("--classes", default=None,
                   help="comma-separated class order (default: sorted)")
    p.add_argument("--out", type=Path, required=True)
    p.set_defaults(fn=_cmd_catalog)

    p = sub.add_parser("fixtures", help="generate the cross-check fixture bundle")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("torchscript", "onnx"), default="torchscript")
    p.set_defaults(fn=_cmd_fixtures)

    p = sub.add_parser("stack", help="export encoder + attention (+ catalog) with a manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--attention-model", default=None,
                   help="defaults to --model when omitted")
    p.add_argument("--split-layer", type=int, default=None,
                   help="defaults to layers-1 (just before the final layer)")
    p.add_argument("--descriptions", type=Path, default=None)
    p.add_argument("--text-encoder", default="hash:16")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("torchscript", "onnx"), default="torchscript")
    p.add_argument("--probes", type=int, default=5)
    p.set_defaults(fn=_cmd_stack)

    p = sub.add_parser("verify-manifest", help="re-hash an export directory")
    p.add_argument("--manifest", type=Path, required=True)
    p.set_defaults(fn=_cmd_verify_manifest)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ExportError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
