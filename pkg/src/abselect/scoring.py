"""Soft matching of crop embeddings against a description catalog.

Every crop gets a similarity row over all descriptions of all classes
jointly; a softmax over that full row yields per-description weights, so
descriptions irrelevant to the crop contribute little.  The class score
sums weight times similarity over the class's descriptions and over all
crops; no per-class normalization by description count is applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core
from .backend import EmbeddingSet


@dataclass
class CatalogClass:
    name: str
    count: int
    offset: int
    descriptions: list[str] | None = None


@dataclass
class DescriptionCatalog:
    """Per-class description embeddings, rows unit-norm, classes ordered.

    embeddings is (T, d) with class c owning rows
    [classes[c].offset, classes[c].offset + classes[c].count).
    """

    classes: list[CatalogClass]
    embeddings: np.ndarray
    source_model: str = ""

    def __post_init__(self):
        emb = np.asarray(self.embeddings, dtype=np.float64)
        if emb.ndim != 2:
            raise ValueError(f"expected (T, d) embeddings, got {emb.shape}")
        names = [c.name for c in self.classes]
        if len(set(names)) != len(names):
            raise ValueError("class names must be unique")
        expect = 0
        for c in self.classes:
            if c.count < 1:
                raise ValueError(f"class {c.name}: needs at least one description")
            if c.offset != expect:
                raise ValueError(f"class {c.name}: offset {c.offset}, expected {expect}")
            expect += c.count
        if expect != emb.shape[0]:
            raise ValueError(f"offsets cover {expect} rows, embeddings have {emb.shape[0]}")
        norms = np.linalg.norm(emb, axis=1)
        bad = np.abs(norms - 1.0) > 1e-5
        if np.any(bad):
            raise ValueError(f"{int(bad.sum())} embedding rows are not unit-norm within 1e-5")
        self.embeddings = emb

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def total_rows(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    @property
    def class_names(self) -> list[str]:
        return [c.name for c in self.classes]

    def rows_for(self, class_index: int) -> slice:
        c = self.classes[class_index]
        return slice(c.offset, c.offset + c.count)

    def class_prototypes(self) -> np.ndarray:
        """Unit-normalized mean embedding per class, for baseline scoring."""
        protos = np.stack(
            [core.l2_normalize(self.embeddings[self.rows_for(i)].mean(axis=0))
             for i in range(self.num_classes)]
        )
        return protos

    @classmethod
    def from_rows(
        cls,
        per_class_rows: dict[str, np.ndarray],
        descriptions: dict[str, list[str]] | None = None,
        source_model: str = "",
    ) -> "DescriptionCatalog":
        """Build a catalog from ordered {class name: (M_c, d) rows}."""
        classes = []
        blocks = []
        offset = 0
        for name, rows in per_class_rows.items():
            rows = np.asarray(rows, dtype=np.float64)
            texts = descriptions.get(name) if descriptions else None
            classes.append(CatalogClass(name=name, count=rows.shape[0], offset=offset, descriptions=texts))
            blocks.append(rows)
            offset += rows.shape[0]
        return cls(classes=classes, embeddings=np.concatenate(blocks, axis=0), source_model=source_model)


def load_catalog(json_path: str | Path) -> DescriptionCatalog:
    """Load the catalog.json + catalog.abst pair; norms are re-verified."""
    json_path = Path(json_path)
    with open(json_path) as f:
        meta = json.load(f)
    emb_path = json_path.with_name(meta.get("embeddings_file", "catalog.abst"))
    emb = core.read_tensor(emb_path).astype(np.float64)
    classes = [
        CatalogClass(
            name=c["name"],
            count=int(c["count"]),
            offset=int(c["offset"]),
            descriptions=c.get("descriptions"),
        )
        for c in meta["classes"]
    ]
    if int(meta["embedding_dim"]) != emb.shape[1]:
        raise ValueError(
            f"catalog.json embedding_dim {meta['embedding_dim']} != rows of dim {emb.shape[1]}"
        )
    return DescriptionCatalog(classes=classes, embeddings=emb, source_model=meta.get("source_model", ""))


def save_catalog(catalog: DescriptionCatalog, json_path: str | Path) -> None:
    """Write the catalog.json + catalog.abst pair next to each other."""
    json_path = Path(json_path)
    emb_name = "catalog.abst"
    meta = {
        "classes": [
            {
                "name": c.name,
                "count": c.count,
                "offset": c.offset,
                **({"descriptions": c.descriptions} if c.descriptions else {}),
            }
            for c in catalog.classes
        ],
        "embedding_dim": catalog.dim,
        "source_model": catalog.source_model,
        "embeddings_file": emb_name,
    }
    core.write_tensor(catalog.embeddings.astype(np.float32), json_path.with_name(emb_name))
    json_path.write_text(json.dumps(meta, indent=2) + "\n")


@dataclass
class ScoreTable:
    """Similarities, soft-match weights and aggregated class scores."""

    similarities: np.ndarray  # (count, T)
    weights: np.ndarray  # (count, T), rows sum to 1
    class_scores: np.ndarray  # (K,)
    predicted: int
    margin: float
    class_names: list[str] = field(default_factory=list)

    @property
    def predicted_name(self) -> str:
        return self.class_names[self.predicted] if self.class_names else str(self.predicted)


def similarity_row(f: np.ndarray, catalog: DescriptionCatalog) -> np.ndarray:
    """Cosines between one unit embedding and every catalog row."""
    f = np.asarray(f, dtype=np.float64)
    if f.shape != (catalog.dim,):
        raise ValueError(f"embedding dim {f.shape} != catalog dim {catalog.dim}")
    return catalog.embeddings @ f


def description_weights(sim_row: np.ndarray, temperature: float) -> np.ndarray:
    """Softmax over the full row: all descriptions of all classes jointly."""
    return core.softmax(sim_row, temperature)


def aggregate_scores(
    embeddings: EmbeddingSet, catalog: DescriptionCatalog, temperature: float
) -> ScoreTable:
    """Soft-matched class scores over a whole embedding set.

    score(y) = sum_i sum_{t in class y} weights[i, t] * sim[i, t], with
    weights[i] the softmax of crop i's full similarity row.  Prediction
    is the argmax; ties break to the lowest class index.
    """
    if embeddings.count == 0:
        raise ValueError("aggregate_scores requires a non-empty embedding set")
    if catalog.num_classes < 2:
        raise ValueError(f"classification needs K >= 2 classes, got {catalog.num_classes}")
    sims = embeddings.rows @ catalog.embeddings.T
    shifted = (sims - sims.max(axis=1, keepdims=True)) / temperature
    expd = np.exp(shifted)
    weights = expd / expd.sum(axis=1, keepdims=True)
    weighted = weights * sims
    scores = np.empty(catalog.num_classes, dtype=np.float64)
    for k in range(catalog.num_classes):
        scores[k] = weighted[:, catalog.rows_for(k)].sum()
    predicted = int(np.argmax(scores))  # argmax takes the first (lowest) index on ties
    top2 = np.partition(scores, -2)[-2]
    return ScoreTable(
        similarities=sims,
        weights=weights,
        class_scores=scores,
        predicted=predicted,
        margin=float(scores[predicted] - top2),
        class_names=catalog.class_names,
    )


def baseline_clip_score(f: np.ndarray, class_embeddings: np.ndarray) -> np.ndarray:
    """Plain cosine of one image embedding against one embedding per class."""
    f = np.asarray(f, dtype=np.float64)
    ce = np.asarray(class_embeddings, dtype=np.float64)
    if ce.ndim != 2 or ce.shape[1] != f.shape[0]:
        raise ValueError(f"class embeddings {ce.shape} incompatible with f {f.shape}")
    return ce @ f
