"""Export manifest: what was produced, from what, with content hashes."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(
    out_dir: str | Path,
    *,
    embedding_model: str = "",
    attention_model: str = "",
    split_layer: int | None = None,
    catalog_stats: dict | None = None,
    sections: dict | None = None,
) -> Path:
    """Hash every file under out_dir and record the export inputs."""
    out = Path(out_dir)
    hashes = {
        str(p.relative_to(out).as_posix()): file_sha256(p)
        for p in sorted(out.rglob("*"))
        if p.is_file() and p.name != "manifest.json"
    }
    manifest = {
        "embedding_model": embedding_model,
        "attention_model": attention_model,
        "split_layer": split_layer,
        "catalog": catalog_stats or {},
        "sections": sections or {},
        "file_hashes": hashes,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def verify_manifest(path: str | Path) -> list[str]:
    """Re-hash the tree; returns the names of files that do not match."""
    path = Path(path)
    with open(path) as f:
        manifest = json.load(f)
    base = path.parent
    bad = []
    for rel, expected in manifest["file_hashes"].items():
        target = base / rel
        if not target.exists() or file_sha256(target) != expected:
            bad.append(rel)
    return bad
