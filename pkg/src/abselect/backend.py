"""Split-encoder and attention-source backends.

An embedding backend is an encoder factored at a chosen layer into a
prefix (input -> pre-final-layer class token and patch-token grid) and a
suffix (token sequence -> final unit-norm embedding), so crops can be
taken mid-network.  An attention backend exposes per-head class-token
attention from its last transformer layer.  The two are independent and
may be different models.

Three implementations are provided: a deterministic numpy reference
transformer for tests and goldens, a TorchScript adapter, and an ONNX
Runtime adapter.  Graph backends follow a pinned IO-name contract so any
runtime can bind without model-specific code:

    prefix:    image [B,3,S,S] f32 -> cls [B,1,d_model], tokens [B,P,d_model]
    suffix:    sequence [B,1+P,d_model] f32 -> embedding [B,d]
    attention: image [B,3,Sa,Sa] f32 -> cls_attn [B,h,P]

Each backend directory carries a ``model_spec.json`` sidecar with the
keys input_size, patch_size, grid, d_model, embed_dim, split_layer,
layers, mean, std.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import core
from .attention import MultiHeadClsAttention
from .featcrop import TokenGrid, assemble_crop_sequence
from .rawcrop import CropBox, EncoderInputSpec
from .seeding import make_rng

SPEC_FILENAME = "model_spec.json"
PROBES_FILENAME = "probes.abst"
PROBE_EMBEDDINGS_FILENAME = "probe_embeddings.abst"


class BackendError(RuntimeError):
    """Raised when a backend session fails; names the model involved."""


@dataclass(frozen=True)
class SplitEncoderSpec:
    """Architecture and preprocessing constants of a split encoder."""

    input_size: int
    patch_size: int
    grid: tuple[int, int]
    d_model: int
    embed_dim: int
    split_layer: int
    layers: int
    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def __post_init__(self):
        rows, cols = self.grid
        if self.input_size != self.patch_size * rows or self.input_size != self.patch_size * cols:
            raise ValueError(f"input_size {self.input_size} != patch {self.patch_size} x grid {self.grid}")
        if not 1 <= self.split_layer <= self.layers - 1:
            raise ValueError(f"split_layer must be in [1, {self.layers - 1}], got {self.split_layer}")

    @property
    def patch_count(self) -> int:
        return self.grid[0] * self.grid[1]

    def input_spec(self) -> EncoderInputSpec:
        return EncoderInputSpec(
            input_size=self.input_size,
            patch_size=self.patch_size,
            grid=self.grid,
            mean=self.mean,
            std=self.std,
        )

    def to_dict(self) -> dict:
        return {
            "input_size": self.input_size,
            "patch_size": self.patch_size,
            "grid": list(self.grid),
            "d_model": self.d_model,
            "embed_dim": self.embed_dim,
            "split_layer": self.split_layer,
            "layers": self.layers,
            "mean": list(self.mean),
            "std": list(self.std),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitEncoderSpec":
        return cls(
            input_size=int(d["input_size"]),
            patch_size=int(d["patch_size"]),
            grid=(int(d["grid"][0]), int(d["grid"][1])),
            d_model=int(d["d_model"]),
            embed_dim=int(d["embed_dim"]),
            split_layer=int(d["split_layer"]),
            layers=int(d["layers"]),
            mean=tuple(float(v) for v in d["mean"]),
            std=tuple(float(v) for v in d["std"]),
        )


def load_model_spec(path: str | Path) -> SplitEncoderSpec:
    with open(path) as f:
        return SplitEncoderSpec.from_dict(json.load(f))


def save_model_spec(spec: SplitEncoderSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2) + "\n")


@dataclass
class Provenance:
    """Where one embedding row came from."""

    kind: str  # "raw" | "feature" | "full"
    anchor: tuple[int, int] = (-1, -1)
    box: CropBox | None = None


@dataclass
class EmbeddingSet:
    """Unit-norm embedding rows with per-row provenance tags."""

    rows: np.ndarray
    provenance: list[Provenance] = field(default_factory=list)

    def __post_init__(self):
        r = np.asarray(self.rows, dtype=np.float64)
        if r.ndim != 2:
            raise ValueError(f"expected (count, dim) rows, got {r.shape}")
        norms = np.linalg.norm(r, axis=1)
        if r.shape[0] and np.max(np.abs(norms - 1.0)) > 1e-5:
            raise ValueError("embedding rows must be unit-norm within 1e-5")
        if len(self.provenance) not in (0, r.shape[0]):
            raise ValueError("provenance count does not match row count")
        self.rows = r

    @property
    def count(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def _check_image_input(x: np.ndarray, spec: SplitEncoderSpec, who: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    s = spec.input_size
    if x.shape != (3, s, s):
        raise ValueError(f"{who}: expected input (3, {s}, {s}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{who}: input contains non-finite values")
    return x


class SplitEncoder:
    """Interface shared by all backends; concrete classes override the four ops.

    ``encode_image`` must equal ``encode_suffix(assemble(encode_prefix(x)))``
    within 1e-5; that composition identity is every backend's primary
    self-test.  Batch helpers default to loops and may be overridden.
    """

    spec: SplitEncoderSpec
    name: str = "backend"

    def encode_prefix(self, x: np.ndarray) -> tuple[np.ndarray, TokenGrid]:
        raise NotImplementedError

    def encode_suffix(self, seq: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cls_attention(self, x: np.ndarray) -> MultiHeadClsAttention:
        raise NotImplementedError

    def encode_image_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.encode_image(x) for x in xs])

    def encode_suffix_batch(self, seqs: np.ndarray) -> np.ndarray:
        return np.stack([self.encode_suffix(s) for s in seqs])


def _layer_norm(x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gamma + beta


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(np.sqrt(2.0 / np.pi) * (x + 0.044715 * x**3)))


def _row_softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


class ReferenceEncoder(SplitEncoder):
    """A genuine small pre-norm vision transformer with seeded random weights.

    patchify -> linear embed + cls token + positional embeddings ->
    ``layers`` blocks of (LN, multi-head attention, residual) and
    (LN, GELU MLP, residual) -> final LN -> linear projection -> L2 norm.
    Fully deterministic for a fixed seed; used as the test double and the
    golden-fixture stack.  Inputs and outputs are float64.
    """

    def __init__(self, seed: int, spec: SplitEncoderSpec, heads: int = 4):
        if spec.d_model % heads != 0:
            raise ValueError(f"d_model {spec.d_model} not divisible by heads {heads}")
        self.spec = spec
        self.seed = seed
        self.heads = heads
        self.name = f"reference-{seed}"
        rng = make_rng(seed)
        d = spec.d_model
        in_dim = 3 * spec.patch_size * spec.patch_size
        p = spec.patch_count

        def linear(fan_in, fan_out):
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out))
            b = rng.normal(0.0, 0.02, size=fan_out)
            return w, b

        self.w_embed, self.b_embed = linear(in_dim, d)
        self.cls_token = rng.normal(0.0, 0.5, size=d)
        self.pos_embed = rng.normal(0.0, 0.5, size=(1 + p, d))
        self.blocks = []
        for _ in range(spec.layers):
            blk = {
                "ln1_g": 1.0 + rng.normal(0.0, 0.05, size=d),
                "ln1_b": rng.normal(0.0, 0.05, size=d),
                "wq": linear(d, d),
                "wk": linear(d, d),
                "wv": linear(d, d),
                "wo": linear(d, d),
                "ln2_g": 1.0 + rng.normal(0.0, 0.05, size=d),
                "ln2_b": rng.normal(0.0, 0.05, size=d),
                "w1": linear(d, 4 * d),
                "w2": linear(4 * d, d),
            }
            self.blocks.append(blk)
        self.lnf_g = 1.0 + rng.normal(0.0, 0.05, size=d)
        self.lnf_b = rng.normal(0.0, 0.05, size=d)
        self.w_proj = rng.normal(0.0, 1.0 / np.sqrt(d), size=(d, spec.embed_dim))

    # internal forward pieces -------------------------------------------------

    def _patchify(self, x: np.ndarray) -> np.ndarray:
        p = self.spec.patch_size
        rows, cols = self.spec.grid
        # (..., 3, S, S) -> (..., rows*cols, 3*p*p), patches scanned row-major
        parts = x.reshape(*x.shape[:-3], 3, rows, p, cols, p)
        parts = np.moveaxis(parts, -4, -3)  # (..., 3, rows, cols, p, p)
        parts = np.moveaxis(parts, -5, -3)  # (..., rows, cols, 3, p, p)
        return parts.reshape(*x.shape[:-3], rows * cols, 3 * p * p)

    def _embed(self, x: np.ndarray) -> np.ndarray:
        tok = self._patchify(x) @ self.w_embed + self.b_embed
        cls = np.broadcast_to(self.cls_token, (*tok.shape[:-2], 1, tok.shape[-1]))
        return np.concatenate([cls, tok], axis=-2) + self.pos_embed

    def _attn(self, h: np.ndarray, blk: dict) -> tuple[np.ndarray, np.ndarray]:
        nh = self.heads
        t, d = h.shape[-2], h.shape[-1]
        hd = d // nh

        def split_heads(m):
            return np.moveaxis(m.reshape(*m.shape[:-1], nh, hd), -2, -3)

        q = split_heads(h @ blk["wq"][0] + blk["wq"][1])
        k = split_heads(h @ blk["wk"][0] + blk["wk"][1])
        v = split_heads(h @ blk["wv"][0] + blk["wv"][1])
        scores = q @ np.swapaxes(k, -1, -2) / np.sqrt(hd)
        probs = _row_softmax(scores)  # (..., nh, t, t)
        ctx = np.moveaxis(probs @ v, -3, -2).reshape(*h.shape[:-1], d)
        return ctx @ blk["wo"][0] + blk["wo"][1], probs

    def _block(self, h: np.ndarray, blk: dict) -> tuple[np.ndarray, np.ndarray]:
        attn_out, probs = self._attn(_layer_norm(h, blk["ln1_g"], blk["ln1_b"]), blk)
        h = h + attn_out
        m = _layer_norm(h, blk["ln2_g"], blk["ln2_b"])
        h = h + _gelu(m @ blk["w1"][0] + blk["w1"][1]) @ blk["w2"][0] + blk["w2"][1]
        return h, probs

    def _head(self, h: np.ndarray) -> np.ndarray:
        h = _layer_norm(h, self.lnf_g, self.lnf_b)
        emb = h[..., 0, :] @ self.w_proj
        return emb / np.linalg.norm(emb, axis=-1, keepdims=True)

    # public ops ---------------------------------------------------------------

    def encode_prefix(self, x: np.ndarray) -> tuple[np.ndarray, TokenGrid]:
        x = _check_image_input(x, self.spec, self.name)
        h = self._embed(x)
        for blk in self.blocks[: self.spec.split_layer]:
            h, _ = self._block(h, blk)
        rows, cols = self.spec.grid
        cls = h[0].copy()
        grid = TokenGrid(
            tokens=h[1:].reshape(rows, cols, self.spec.d_model),
            cls=cls,
            source_layer=self.spec.split_layer,
        )
        return cls, grid

    def encode_suffix(self, seq: np.ndarray) -> np.ndarray:
        seq = np.asarray(seq, dtype=np.float64)
        expected = (1 + self.spec.patch_count, self.spec.d_model)
        if seq.shape != expected:
            raise ValueError(f"{self.name}: expected sequence {expected}, got {seq.shape}")
        h = seq
        for blk in self.blocks[self.spec.split_layer :]:
            h, _ = self._block(h, blk)
        return self._head(h)

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        x = _check_image_input(x, self.spec, self.name)
        h = self._embed(x)
        for blk in self.blocks:
            h, _ = self._block(h, blk)
        return self._head(h)

    def cls_attention(self, x: np.ndarray) -> MultiHeadClsAttention:
        x = _check_image_input(x, self.spec, self.name)
        h = self._embed(x)
        probs = None
        for blk in self.blocks:
            h, probs = self._block(h, blk)
        rows, cols = self.spec.grid
        # class-token query row of the last layer, class column dropped,
        # raw values kept (no renormalization)
        cls_rows = probs[:, 0, 1:]
        return MultiHeadClsAttention(cls_rows.reshape(self.heads, rows, cols))

    def encode_image_batch(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 4:
            raise ValueError(f"{self.name}: expected (B, 3, S, S), got {xs.shape}")
        h = self._embed(xs)
        for blk in self.blocks:
            h, _ = self._block(h, blk)
        return self._head(h)

    def encode_suffix_batch(self, seqs: np.ndarray) -> np.ndarray:
        h = np.asarray(seqs, dtype=np.float64)
        if h.ndim != 3:
            raise ValueError(f"{self.name}: expected (B, 1+P, d_model), got {h.shape}")
        for blk in self.blocks[self.spec.split_layer :]:
            h, _ = self._block(h, blk)
        return self._head(h)


def make_reference_encoder(seed: int, spec: SplitEncoderSpec | None = None, heads: int = 4) -> ReferenceEncoder:
    """The standard small test spec unless one is given explicitly."""
    if spec is None:
        spec = SplitEncoderSpec(
            input_size=32,
            patch_size=8,
            grid=(4, 4),
            d_model=16,
            embed_dim=8,
            split_layer=1,
            layers=2,
            mean=(0.5, 0.5, 0.5),
            std=(0.25, 0.25, 0.25),
        )
    return ReferenceEncoder(seed=seed, spec=spec, heads=heads)


class TorchScriptBackend(SplitEncoder):
    """Adapter over TorchScript graph files.

    Each graph is a scripted module returning a dict with the pinned
    output names, so binding needs no model-specific code.  Files:
    prefix.pt, suffix.pt and/or attention.pt next to model_spec.json.
    """

    def __init__(self, directory: str | Path):
        try:
            import torch
        except ImportError as e:
            raise BackendError(f"torch is required for TorchScript backends: {e}") from e
        self._torch = torch
        d = Path(directory)
        self.name = str(d)
        self.spec = load_model_spec(d / SPEC_FILENAME)
        self._prefix = self._load(d / "prefix.pt")
        self._suffix = self._load(d / "suffix.pt")
        self._attention = self._load(d / "attention.pt")
        if self._prefix is None and self._attention is None:
            raise BackendError(f"{self.name}: no prefix.pt or attention.pt found")

    def _load(self, path: Path):
        if not path.exists():
            return None
        try:
            mod = self._torch.jit.load(str(path), map_location="cpu")
            mod.eval()
            return mod
        except Exception as e:
            raise BackendError(f"{path}: failed to load TorchScript graph: {e}") from e

    def _run(self, mod, name: str, arr: np.ndarray) -> dict:
        t = self._torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float32))
        try:
            with self._torch.no_grad():
                out = mod(t)
        except Exception as e:
            raise BackendError(f"{self.name}/{name}: session failure: {e}") from e
        return {k: v.detach().cpu().numpy().astype(np.float64) for k, v in out.items()}

    def encode_prefix(self, x: np.ndarray) -> tuple[np.ndarray, TokenGrid]:
        if self._prefix is None:
            raise BackendError(f"{self.name}: attention-only backend has no prefix graph")
        x = _check_image_input(x, self.spec, self.name)
        out = self._run(self._prefix, "prefix", x[None])
        cls = out["cls"][0, 0]
        rows, cols = self.spec.grid
        tokens = out["tokens"][0].reshape(rows, cols, self.spec.d_model)
        return cls, TokenGrid(tokens=tokens, cls=cls, source_layer=self.spec.split_layer)

    def encode_suffix(self, seq: np.ndarray) -> np.ndarray:
        return self.encode_suffix_batch(np.asarray(seq)[None])[0]

    def encode_suffix_batch(self, seqs: np.ndarray) -> np.ndarray:
        if self._suffix is None:
            raise BackendError(f"{self.name}: no suffix graph")
        out = self._run(self._suffix, "suffix", np.asarray(seqs, dtype=np.float64))
        emb = out["embedding"]
        return emb / np.linalg.norm(emb, axis=-1, keepdims=True)

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        cls, grid = self.encode_prefix(x)
        return self.encode_suffix(assemble_crop_sequence(grid.cls, grid.tokens))

    def encode_image_batch(self, xs: np.ndarray) -> np.ndarray:
        return np.stack([self.encode_image(x) for x in xs])

    def cls_attention(self, x: np.ndarray) -> MultiHeadClsAttention:
        if self._attention is None:
            raise BackendError(f"{self.name}: no attention graph")
        x = _check_image_input(x, self.spec, self.name)
        out = self._run(self._attention, "attention", x[None])
        rows, cols = self.spec.grid
        attn = out["cls_attn"][0]
        return MultiHeadClsAttention(attn.reshape(attn.shape[0], rows, cols))


class OnnxBackend(SplitEncoder):
    """Adapter over exported ONNX graphs with the pinned IO names.

    Files: prefix.onnx, suffix.onnx and/or attention.onnx next to
    model_spec.json.  Requires onnxruntime at load time.
    """

    def __init__(self, directory: str | Path):
        try:
            import onnxruntime as ort
        except ImportError as e:
            raise BackendError(f"onnxruntime is required for ONNX backends: {e}") from e
        self._ort = ort
        d = Path(directory)
        self.name = str(d)
        self.spec = load_model_spec(d / SPEC_FILENAME)
        self._prefix = self._session(d / "prefix.onnx")
        self._suffix = self._session(d / "suffix.onnx")
        self._attention = self._session(d / "attention.onnx")
        if self._prefix is None and self._attention is None:
            raise BackendError(f"{self.name}: no prefix.onnx or attention.onnx found")

    def _session(self, path: Path):
        if not path.exists():
            return None
        try:
            return self._ort.InferenceSession(str(path), providers=["CPUExecutionProvider"])
        except Exception as e:
            raise BackendError(f"{path}: failed to create session: {e}") from e

    def _run(self, sess, name: str, arr: np.ndarray, outputs: list[str]) -> list[np.ndarray]:
        feed = {"image" if name != "suffix" else "sequence": np.ascontiguousarray(arr, dtype=np.float32)}
        try:
            res = sess.run(outputs, feed)
        except Exception as e:
            raise BackendError(f"{self.name}/{name}: session failure: {e}") from e
        return [np.asarray(r, dtype=np.float64) for r in res]

    def encode_prefix(self, x: np.ndarray) -> tuple[np.ndarray, TokenGrid]:
        if self._prefix is None:
            raise BackendError(f"{self.name}: attention-only backend has no prefix graph")
        x = _check_image_input(x, self.spec, self.name)
        cls, tokens = self._run(self._prefix, "prefix", x[None], ["cls", "tokens"])
        rows, cols = self.spec.grid
        cls = cls[0, 0]
        return cls, TokenGrid(
            tokens=tokens[0].reshape(rows, cols, self.spec.d_model),
            cls=cls,
            source_layer=self.spec.split_layer,
        )

    def encode_suffix(self, seq: np.ndarray) -> np.ndarray:
        return self.encode_suffix_batch(np.asarray(seq)[None])[0]

    def encode_suffix_batch(self, seqs: np.ndarray) -> np.ndarray:
        if self._suffix is None:
            raise BackendError(f"{self.name}: no suffix graph")
        (emb,) = self._run(self._suffix, "suffix", np.asarray(seqs, dtype=np.float64), ["embedding"])
        return emb / np.linalg.norm(emb, axis=-1, keepdims=True)

    def encode_image(self, x: np.ndarray) -> np.ndarray:
        cls, grid = self.encode_prefix(x)
        return self.encode_suffix(assemble_crop_sequence(grid.cls, grid.tokens))

    def cls_attention(self, x: np.ndarray) -> MultiHeadClsAttention:
        if self._attention is None:
            raise BackendError(f"{self.name}: no attention graph")
        x = _check_image_input(x, self.spec, self.name)
        (attn,) = self._run(self._attention, "attention", x[None], ["cls_attn"])
        rows, cols = self.spec.grid
        attn = attn[0]
        return MultiHeadClsAttention(attn.reshape(attn.shape[0], rows, cols))


def load_backend(directory: str | Path) -> SplitEncoder:
    """Open a backend directory, picking the adapter from the files present."""
    d = Path(directory)
    if not d.is_dir():
        raise BackendError(f"backend directory not found: {d}")
    ref = d / "reference.json"
    if ref.exists():
        with open(ref) as f:
            cfg = json.load(f)
        spec = load_model_spec(d / SPEC_FILENAME)
        return ReferenceEncoder(seed=int(cfg["seed"]), spec=spec, heads=int(cfg.get("heads", 4)))
    if (d / "prefix.onnx").exists() or (d / "attention.onnx").exists():
        return OnnxBackend(d)
    if (d / "prefix.pt").exists() or (d / "attention.pt").exists():
        return TorchScriptBackend(d)
    raise BackendError(f"{d}: no recognizable backend files (reference.json, *.onnx, *.pt)")


def composition_check(
    backend: SplitEncoder, inputs: np.ndarray, tolerance: float = 1e-5
) -> float:
    """Max deviation of encode_image from suffix(assemble(prefix(x))).

    Raises BackendError when the identity fails; returns the worst
    observed deviation otherwise.
    """
    worst = 0.0
    for x in inputs:
        direct = backend.encode_image(x)
        cls, grid = backend.encode_prefix(x)
        composed = backend.encode_suffix(assemble_crop_sequence(grid.cls, grid.tokens))
        worst = max(worst, float(np.max(np.abs(direct - composed))))
    if worst > tolerance:
        raise BackendError(
            f"{backend.name}: composition identity violated: {worst:.3g} > {tolerance:.3g}"
        )
    return worst


def probe_check(backend: SplitEncoder, directory: str | Path, tolerance: float = 1e-4) -> float | None:
    """Compare split composition against exporter-recorded unsplit embeddings.

    Backends without probe fixtures return None.  Probe files live next
    to the graphs: probes.abst (n,3,S,S) and probe_embeddings.abst (n,d).
    """
    d = Path(directory)
    probes_path = d / PROBES_FILENAME
    expected_path = d / PROBE_EMBEDDINGS_FILENAME
    if not (probes_path.exists() and expected_path.exists()):
        return None
    probes = core.read_tensor(probes_path).astype(np.float64)
    expected = core.read_tensor(expected_path).astype(np.float64)
    worst = 0.0
    for x, ref in zip(probes, expected):
        cls, grid = backend.encode_prefix(x)
        emb = backend.encode_suffix(assemble_crop_sequence(grid.cls, grid.tokens))
        worst = max(worst, float(np.max(np.abs(emb - ref))))
    if worst > tolerance:
        raise BackendError(
            f"{backend.name}: probe embeddings deviate by {worst:.3g} > {tolerance:.3g}"
        )
    return worst
