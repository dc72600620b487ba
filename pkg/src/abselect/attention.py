"""Attention-guided patch sampling.

Per-head class-token attention rows, laid out on the patch grid, are
averaged into a single map; the top-k patches by attention value form a
categorical distribution (softmax of their raw values) from which crop
anchor patches are drawn with replacement.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import core


@dataclass(frozen=True)
class MultiHeadClsAttention:
    """Class-token attention over the patch grid, one map per head.

    values has shape (heads, rows, cols) and must be non-negative and
    finite; each head's map is the softmaxed class-token row of the
    source model's last transformer layer, minus the class column.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ValueError(f"expected (heads, rows, cols), got shape {v.shape}")
        if v.shape[0] < 1 or v.shape[1] * v.shape[2] < 1:
            raise ValueError(f"degenerate attention shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("attention values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def heads(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape[1], self.values.shape[2]


@dataclass(frozen=True)
class AttentionGrid:
    """Head-averaged 2-D attention over the patch grid."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ValueError(f"expected (rows, cols), got shape {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("attention values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    @property
    def grid(self) -> tuple[int, int]:
        return self.values.shape


@dataclass(frozen=True)
class PatchSample:
    """One patch with its attention value and selection probability.

    probability is 0.0 until filled in by patch_probabilities.
    """

    row: int
    col: int
    value: float
    probability: float = 0.0


def average_heads(attn: MultiHeadClsAttention) -> AttentionGrid:
    """Arithmetic mean of all head maps."""
    return AttentionGrid(attn.values.mean(axis=0))


def select_top_k(grid: AttentionGrid, k: int) -> list[PatchSample]:
    """The k highest-attention patches, sorted descending by value.

    Ties are broken by row-major patch index ascending, so the output is
    deterministic for any input.
    """
    rows, cols = grid.grid
    total = rows * cols
    if not 1 <= k <= total:
        raise ValueError(f"k must be in [1, {total}], got {k}")
    flat = grid.values.reshape(-1)
    # lexsort: primary key descending value, secondary key ascending flat index
    order = np.lexsort((np.arange(total), -flat))[:k]
    return [
        PatchSample(row=int(i // cols), col=int(i % cols), value=float(flat[i]))
        for i in order
    ]


def patch_probabilities(
    topk: list[PatchSample], temperature: float = 1.0
) -> list[PatchSample]:
    """Fill selection probabilities: softmax of the raw attention values."""
    if not topk:
        raise ValueError("patch_probabilities requires a non-empty top-k list")
    probs = core.softmax([p.value for p in topk], temperature)
    return [replace(p, probability=float(q)) for p, q in zip(topk, probs)]


def sample_patches(
    topk_with_probs: list[PatchSample], n: int, rng: np.random.Generator
) -> list[PatchSample]:
    """Draw n anchor patches with replacement from the top-k distribution.

    Inverse-CDF over the descending-sorted patch list: each draw takes one
    uniform double from rng and selects the first patch whose cumulative
    probability exceeds it.  Fixed seed, fixed list => fixed sample sequence.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    probs = np.array([p.probability for p in topk_with_probs], dtype=np.float64)
    if probs.size == 0 or np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-6:
        raise ValueError("top-k list must carry a valid probability distribution")
    cdf = np.cumsum(probs)
    draws = rng.random(n)
    idx = np.minimum(np.searchsorted(cdf, draws, side="right"), probs.size - 1)
    return [topk_with_probs[int(i)] for i in idx]
