"""End-to-end orchestration: per-image runs, dataset evaluation, overlays.

One image flows attention -> anchor sampling -> N crop boxes -> raw-space
embeddings (full encode of each pixel crop) and feature-space embeddings
(token-grid crop, resample, final-layer re-entry) -> soft-matched class
scores.  Evaluation walks a class-per-directory dataset in lexicographic
order with per-image seeds derived from relative paths, so any worker
count reproduces the serial result exactly.
"""

from __future__ import annotations

import json
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import attention as attn_mod
from . import featcrop, scoring
from .backend import BackendError, EmbeddingSet, Provenance, SplitEncoder, load_backend
from .images import encode_png, load_image
from .rawcrop import (
    ConfigError,
    CropBox,
    ImageTensor,
    crop_and_preprocess,
    full_image_box,
    patch_center_pixels,
    propose_crop_box,
)
from .seeding import RNG_ALGORITHM, make_rng, per_image_seed

BRANCH_CHOICES = ("raw_only", "feature_only", "both")


@dataclass(frozen=True)
class RunConfig:
    """All knobs of one run; echoed verbatim into every result file."""

    alpha: float = 0.5
    beta: float = 0.9
    k: int = 20
    n_crops: int = 60
    tau: float = 0.01
    seed: int = 0
    split_layer: int | None = None
    include_full_image: bool = False
    branches: str = "both"
    patch_temperature: float = 1.0
    paths: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 < self.alpha <= self.beta <= 1):
            raise ConfigError(f"require 0 < alpha <= beta <= 1, got {self.alpha}, {self.beta}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.n_crops < 1:
            raise ConfigError(f"n_crops must be >= 1, got {self.n_crops}")
        if not self.tau > 0:
            raise ConfigError(f"tau must be positive, got {self.tau}")
        if self.branches not in BRANCH_CHOICES:
            raise ConfigError(f"branches must be one of {BRANCH_CHOICES}, got {self.branches!r}")

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "beta": self.beta,
            "k": self.k,
            "n_crops": self.n_crops,
            "tau": self.tau,
            "seed": self.seed,
            "split_layer": self.split_layer,
            "include_full_image": self.include_full_image,
            "branches": self.branches,
            "patch_temperature": self.patch_temperature,
            "paths": dict(self.paths),
            "rng_algorithm": RNG_ALGORITHM,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = set(cls.__dataclass_fields__)
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass
class Backends:
    """The embedding encoder and the (possibly different) attention source."""

    embedding: SplitEncoder
    attention: SplitEncoder


def load_backends(models_dir: str | Path) -> Backends:
    """Open <models_dir>/embedding and <models_dir>/attention.

    A models directory holding backend files directly (no subdirectories)
    serves as both embedding and attention source.
    """
    d = Path(models_dir)
    emb_dir = d / "embedding"
    att_dir = d / "attention"
    if emb_dir.is_dir():
        embedding = load_backend(emb_dir)
        attention = load_backend(att_dir) if att_dir.is_dir() else embedding
    else:
        embedding = load_backend(d)
        attention = embedding
    return Backends(embedding=embedding, attention=attention)


@dataclass
class ImageResult:
    image_id: str
    predicted: str
    predicted_index: int
    margin: float
    class_scores: dict[str, float]
    boxes: list[CropBox]
    seed: int
    config: dict
    timing_ms: dict[str, float] = field(default_factory=dict)
    true_class: str | None = None

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "image_id": self.image_id,
            "predicted": self.predicted,
            "predicted_index": self.predicted_index,
            "margin": self.margin,
            "class_scores": self.class_scores,
            "boxes": [
                {
                    "x0": b.x0, "y0": b.y0, "width": b.width, "height": b.height,
                    "anchor": list(b.anchor), "fx": b.fx, "fy": b.fy,
                }
                for b in self.boxes
            ],
            "seed": self.seed,
            "config": self.config,
        }
        if self.true_class is not None:
            d["true_class"] = self.true_class
        if include_timing:
            d["timing_ms"] = self.timing_ms
        return d


@dataclass
class EvalReport:
    dataset_id: str
    image_count: int
    correct: int
    top1_accuracy: float
    per_class: dict[str, dict]
    config: dict
    wall_time_s: float
    errors: list[dict] = field(default_factory=list)

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "dataset_id": self.dataset_id,
            "image_count": self.image_count,
            "correct": self.correct,
            "top1_accuracy": self.top1_accuracy,
            "per_class": self.per_class,
            "config": self.config,
            "errors": self.errors,
        }
        if include_timing:
            d["wall_time_s"] = self.wall_time_s
        return d


def _round_floats(obj, places: int = 9):
    if isinstance(obj, float):
        return round(obj, places)
    if isinstance(obj, dict):
        return {k: _round_floats(v, places) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v, places) for v in obj]
    return obj


def canonical_json(obj) -> str:
    """Stable serialized form: floats rounded to 9 decimals, sorted keys."""
    return json.dumps(_round_floats(obj), sort_keys=True, separators=(",", ":"))


def _with_split_layer(backend: SplitEncoder, layer: int) -> SplitEncoder:
    if layer == backend.spec.split_layer:
        return backend
    from .backend import ReferenceEncoder

    if isinstance(backend, ReferenceEncoder):
        resplit = ReferenceEncoder.__new__(ReferenceEncoder)
        resplit.__dict__.update(backend.__dict__)
        resplit.spec = replace(backend.spec, split_layer=layer)
        return resplit
    raise BackendError(
        f"{backend.name}: split layer is fixed at export time "
        f"({backend.spec.split_layer}); re-export to change it"
    )


class _StageTimer:
    def __init__(self):
        self.ms = {"crop_preprocess_ms": 0.0, "encoding_ms": 0.0, "scoring_ms": 0.0}

    def add(self, bucket: str, t0: float) -> None:
        self.ms[bucket] += (time.perf_counter() - t0) * 1e3


def _gather_embeddings(
    image: ImageTensor,
    config: RunConfig,
    backends: Backends,
    seed: int,
    timer: _StageTimer,
) -> tuple[list[CropBox], EmbeddingSet]:
    """Attention, sampling, boxes and both selection branches for one image.

    RNG draw order is pinned: n anchor draws, then (fx, fy) per box in
    sample order, all before any branch work, so the boxes are identical
    whichever branches are enabled.
    """
    embedder = backends.embedding
    if config.split_layer is not None:
        embedder = _with_split_layer(embedder, config.split_layer)
    att = backends.attention
    w, h = image.width, image.height
    rng = make_rng(seed)

    t0 = time.perf_counter()
    att_input = crop_and_preprocess(image, full_image_box(image), att.spec.input_spec())
    timer.add("crop_preprocess_ms", t0)

    t0 = time.perf_counter()
    head_maps = att.cls_attention(att_input)
    timer.add("encoding_ms", t0)

    t0 = time.perf_counter()
    grid = attn_mod.average_heads(head_maps)
    k = min(config.k, grid.values.size)
    topk = attn_mod.patch_probabilities(attn_mod.select_top_k(grid, k), config.patch_temperature)
    anchors = attn_mod.sample_patches(topk, config.n_crops, rng)
    boxes = [
        propose_crop_box(
            patch_center_pixels((p.row, p.col), grid.grid, (w, h)),
            config.alpha, config.beta, (w, h), rng, anchor=(p.row, p.col),
        )
        for p in anchors
    ]
    timer.add("crop_preprocess_ms", t0)

    enc_spec = embedder.spec.input_spec()
    rows: list[np.ndarray] = []
    provenance: list[Provenance] = []

    if config.branches in ("raw_only", "both"):
        t0 = time.perf_counter()
        raw_inputs = np.stack([crop_and_preprocess(image, b, enc_spec) for b in boxes])
        timer.add("crop_preprocess_ms", t0)
        t0 = time.perf_counter()
        rows.extend(embedder.encode_image_batch(raw_inputs))
        timer.add("encoding_ms", t0)
        provenance.extend(Provenance(kind="raw", anchor=b.anchor, box=b) for b in boxes)

    needs_full = config.branches in ("feature_only", "both") or config.include_full_image
    if needs_full:
        t0 = time.perf_counter()
        full_input = crop_and_preprocess(image, full_image_box(image), enc_spec)
        timer.add("crop_preprocess_ms", t0)

    if config.branches in ("feature_only", "both"):
        t0 = time.perf_counter()
        cls, token_grid = embedder.encode_prefix(full_input)
        g = token_grid.grid
        seqs = []
        for b in boxes:
            tb = featcrop.map_box_to_tokens(b, (w, h), g)
            resized = featcrop.resize_token_grid(featcrop.crop_token_grid(token_grid, tb), g)
            seqs.append(featcrop.assemble_crop_sequence(cls, resized))
        rows.extend(embedder.encode_suffix_batch(np.stack(seqs)))
        timer.add("encoding_ms", t0)
        provenance.extend(Provenance(kind="feature", anchor=b.anchor, box=b) for b in boxes)

    if config.include_full_image:
        t0 = time.perf_counter()
        rows.append(embedder.encode_image(full_input))
        timer.add("encoding_ms", t0)
        provenance.append(Provenance(kind="full", box=full_image_box(image)))

    return boxes, EmbeddingSet(rows=np.stack(rows), provenance=provenance)


def collect_embeddings(
    image: ImageTensor, config: RunConfig, backends: Backends, seed: int
) -> EmbeddingSet:
    """The EmbeddingSet a run would score; exposed for branch-level tests."""
    _, embeddings = _gather_embeddings(image, config, backends, seed, _StageTimer())
    return embeddings


def run_image(
    image: ImageTensor,
    config: RunConfig,
    backends: Backends,
    catalog: scoring.DescriptionCatalog,
    image_id: str | None = None,
    seed: int | None = None,
) -> ImageResult:
    """Classify one image; deterministic for a fixed seed and backend."""
    image_id = image_id if image_id is not None else image.source
    seed = seed if seed is not None else per_image_seed(config.seed, image_id)
    timer = _StageTimer()
    boxes, embeddings = _gather_embeddings(image, config, backends, seed, timer)

    t0 = time.perf_counter()
    table = scoring.aggregate_scores(embeddings, catalog, config.tau)
    timer.add("scoring_ms", t0)

    return ImageResult(
        image_id=image_id,
        predicted=table.predicted_name,
        predicted_index=table.predicted,
        margin=table.margin,
        class_scores={n: float(s) for n, s in zip(table.class_names, table.class_scores)},
        boxes=boxes,
        seed=seed,
        config=config.to_dict(),
        timing_ms=timer.ms,
    )


def _list_dataset(root: Path, class_map: dict[str, str] | None) -> list[tuple[str, str]]:
    """(relative path, catalog class) pairs in lexicographic path order."""
    entries = []
    for class_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        mapped = (class_map or {}).get(class_dir.name, class_dir.name)
        files = sorted(
            p for p in class_dir.iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg")
        )
        if not files:
            warnings.warn(f"class directory {class_dir.name!r} contains no images")
        for f in files:
            entries.append((f.relative_to(root).as_posix(), mapped))
    return entries


def evaluate_dataset(
    root: str | Path,
    config: RunConfig,
    backends: Backends,
    catalog: scoring.DescriptionCatalog,
    workers: int = 1,
    output_dir: str | Path | None = None,
    class_map: dict[str, str] | None = None,
) -> EvalReport:
    """Classify every image under root (one subdirectory per class).

    Results stream to results.jsonl in deterministic lexicographic image
    order; per-image seeds depend only on the relative path, so the
    report is identical for any worker count.  Unreadable images are
    recorded as errors and evaluation continues.
    """
    root = Path(root)
    if not root.is_dir():
        raise ConfigError(f"dataset root not found: {root}")
    entries = _list_dataset(root, class_map)
    dataset_classes = sorted({cls for _, cls in entries})
    known = set(catalog.class_names)
    unmatched = [c for c in dataset_classes if c not in known]
    if unmatched:
        raise ConfigError(f"dataset classes not present in the catalog: {', '.join(unmatched)}")
    if len(dataset_classes) < 2:
        raise ConfigError(f"evaluation needs at least 2 classes, found {len(dataset_classes)}")

    t_start = time.perf_counter()
    errors: list[dict] = []

    def run_one(entry: tuple[str, str]) -> ImageResult | dict:
        rel, true_class = entry
        try:
            image = load_image(root / rel)
        except Exception as e:
            return {"image_id": rel, "error": f"{type(e).__name__}: {e}"}
        result = run_image(
            image, config, backends, catalog,
            image_id=rel, seed=per_image_seed(config.seed, rel),
        )
        result.true_class = true_class
        return result

    out_f = None
    if output_dir is not None:
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        out_f = open(output_dir / "results.jsonl", "w")

    per_class: dict[str, dict] = {
        c: {"count": 0, "correct": 0, "accuracy": 0.0} for c in dataset_classes
    }
    correct = 0
    total = 0
    pool = None
    try:
        if workers <= 1:
            outcomes = map(run_one, entries)
        else:
            pool = ThreadPoolExecutor(max_workers=workers)
            outcomes = pool.map(run_one, entries)
        for outcome in outcomes:
            if isinstance(outcome, dict):
                errors.append(outcome)
                continue
            total += 1
            pc = per_class[outcome.true_class]
            pc["count"] += 1
            if outcome.predicted == outcome.true_class:
                pc["correct"] += 1
                correct += 1
            if out_f is not None:
                out_f.write(canonical_json(outcome.to_dict()) + "\n")
    finally:
        if pool is not None:
            pool.shutdown()
        if out_f is not None:
            out_f.close()

    for stats in per_class.values():
        stats["accuracy"] = stats["correct"] / stats["count"] if stats["count"] else 0.0

    report = EvalReport(
        dataset_id=root.name,
        image_count=total,
        correct=correct,
        top1_accuracy=correct / total if total else 0.0,
        per_class=per_class,
        config=config.to_dict(),
        wall_time_s=time.perf_counter() - t_start,
        errors=errors,
    )
    if output_dir is not None:
        (Path(output_dir) / "report.json").write_text(canonical_json(report.to_dict()) + "\n")
    return report


def _bilinear_upsample(plane: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    h, w = plane.shape
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = np.clip(ys - y0, 0.0, 1.0)[:, None]
    tx = np.clip(xs - x0, 0.0, 1.0)[None, :]
    top = plane[np.ix_(y0, x0)] * (1 - tx) + plane[np.ix_(y0, x1)] * tx
    bot = plane[np.ix_(y1, x0)] * (1 - tx) + plane[np.ix_(y1, x1)] * tx
    return top * (1 - ty) + bot * ty


def render_overlay(
    image: ImageTensor,
    grid: attn_mod.AttentionGrid,
    boxes: list[CropBox],
    tint_strength: float = 0.6,
) -> bytes:
    """Diagnostic PNG: attention heatmap tint plus crop box outlines.

    The attention grid is bilinear-upsampled to the image size and
    normalized by its maximum; tinting blends towards pure red with the
    fixed strength, and boxes get 1-pixel green outlines.  Purely
    diagnostic, no effect on scoring.
    """
    h, w = image.height, image.width
    heat = _bilinear_upsample(grid.values, h, w)
    peak = float(heat.max())
    heat = heat / peak if peak > 0 else np.zeros_like(heat)
    base = image.pixels.astype(np.float64)
    red = np.array([255.0, 0.0, 0.0])
    blend = tint_strength * heat[:, :, None]
    out = base * (1.0 - blend) + red * blend
    pixels = np.clip(np.rint(out), 0, 255).astype(np.uint8)
    green = np.array([0, 255, 0], dtype=np.uint8)
    for b in boxes:
        x1, y1 = b.x0 + b.width - 1, b.y0 + b.height - 1
        pixels[b.y0, b.x0 : x1 + 1] = green
        pixels[y1, b.x0 : x1 + 1] = green
        pixels[b.y0 : y1 + 1, b.x0] = green
        pixels[b.y0 : y1 + 1, x1] = green
    return encode_png(pixels)
