"""Description-embedding catalog construction.

Consumes a descriptions file (JSON mapping class name to a list of
strings) and a text encoder, and emits the engine's catalog pair:
catalog.json with ordered classes/counts/offsets and catalog.abst with
the pre-normalized f32 rows.

Text encoder ids:

    hash:<dim>[:<seed>]        deterministic featurizer (tests, demos)
    hf-clip-text:<model name>  CLIP text tower via transformers
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .abst import write_abst
from .vit import ExportError


class HashTextEncoder:
    """Deterministic text featurizer: character trigram counts through a
    seeded random projection, L2-normalized.

    Not a language model; it exists so catalogs can be built and verified
    end to end without pretrained weights.  Same text, same dim, same
    seed => same embedding on any machine.
    """

    def __init__(self, dim: int, seed: int = 0):
        if dim < 2:
            raise ExportError(f"hash encoder dim must be >= 2, got {dim}")
        self.dim = dim
        self.seed = seed
        self.name = f"hash:{dim}:{seed}"

    def _trigrams(self, text: str) -> dict[int, int]:
        padded = f"  {text.lower()} "
        counts: dict[int, int] = {}
        for i in range(len(padded) - 2):
            h = 0xCBF29CE484222325
            for ch in padded[i : i + 3].encode("utf-8"):
                h = ((h ^ ch) * 0x100000001B3) & ((1 << 64) - 1)
            counts[h] = counts.get(h, 0) + 1
        return counts

    def encode(self, texts: list[str]) -> np.ndarray:
        rows = np.zeros((len(texts), self.dim))
        for r, text in enumerate(texts):
            for h, count in self._trigrams(text).items():
                rng = np.random.Generator(np.random.PCG64((h ^ self.seed) & ((1 << 64) - 1)))
                rows[r] += count * rng.normal(size=self.dim)
            norm = np.linalg.norm(rows[r])
            if norm < 1e-12:
                raise ExportError(f"text {text!r} produced a zero embedding")
            rows[r] /= norm
        return rows


class HfClipTextEncoder:
    def __init__(self, name: str):
        try:
            from transformers import CLIPTextModelWithProjection, CLIPTokenizer
        except ImportError as e:
            raise ExportError(
                "hf-clip-text encoder ids require the transformers package"
            ) from e
        self._tokenizer = CLIPTokenizer.from_pretrained(name)
        self._model = CLIPTextModelWithProjection.from_pretrained(name).eval()
        self.name = f"hf-clip-text:{name}"
        self.dim = self._model.config.projection_dim

    def encode(self, texts: list[str]) -> np.ndarray:
        import torch

        out = []
        with torch.no_grad():
            for start in range(0, len(texts), 64):
                batch = self._tokenizer(
                    texts[start : start + 64], padding=True, truncation=True,
                    return_tensors="pt",
                )
                emb = self._model(**batch).text_embeds
                out.append((emb / emb.norm(dim=-1, keepdim=True)).numpy())
        return np.concatenate(out, axis=0).astype(np.float64)


def make_text_encoder(encoder_id: str):
    kind, _, rest = encoder_id.partition(":")
    if kind == "hash":
        parts = rest.split(":")
        return HashTextEncoder(int(parts[0]), int(parts[1]) if len(parts) > 1 else 0)
    if kind == "hf-clip-text":
        return HfClipTextEncoder(rest)
    raise ExportError(f"unknown text encoder id {encoder_id!r}")


def load_descriptions(path: str | Path) -> dict[str, list[str]]:
    with open(path) as f:
        data = json.load(f)
    if not isinstance(data, dict) or not data:
        raise ExportError(f"{path}: expected a non-empty mapping of class -> descriptions")
    for name, texts in data.items():
        if not isinstance(texts, list) or not texts:
            raise ExportError(f"class {name!r} has no descriptions")
    return {name: [str(t) for t in texts] for name, texts in data.items()}


def build_catalog(
    descriptions: dict[str, list[str]],
    encoder,
    out_dir: str | Path,
    class_order: list[str] | None = None,
) -> dict:
    """Write catalog.json + catalog.abst; returns catalog stats for the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    order = class_order if class_order is not None else sorted(descriptions)
    missing = [c for c in order if c not in descriptions]
    if missing:
        raise ExportError(f"classes without descriptions: {', '.join(missing)}")

    classes = []
    blocks = []
    offset = 0
    for name in order:
        texts = descriptions[name]
        rows = encoder.encode(texts)
        norms = np.linalg.norm(rows, axis=1)
        rows = rows / norms[:, None]
        classes.append({
            "name": name,
            "count": len(texts),
            "offset": offset,
            "descriptions": texts,
        })
        blocks.append(rows)
        offset += len(texts)

    embeddings = np.concatenate(blocks, axis=0).astype(np.float32)
    # re-normalize after the f32 cast so the engine's strict load check passes
    embeddings /= np.linalg.norm(embeddings.astype(np.float64), axis=1, keepdims=True).astype(np.float32)
    write_abst(embeddings, out / "catalog.abst")
    meta = {
        "classes": classes,
        "embedding_dim": int(embeddings.shape[1]),
        "source_model": getattr(encoder, "name", "unknown"),
        "embeddings_file": "catalog.abst",
    }
    (out / "catalog.json").write_text(json.dumps(meta, indent=2) + "\n")
    return {
        "classes": len(classes),
        "total_rows": int(embeddings.shape[0]),
        "embedding_dim": int(embeddings.shape[1]),
        "per_class_counts": {c["name"]: c["count"] for c in classes},
    }
