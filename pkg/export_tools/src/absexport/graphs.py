"""Split-graph export and verification.

Wraps a SplitVit into three graphs honoring the engine's pinned IO-name
contract and writes them next to a model_spec.json sidecar:

    prefix.pt     image [B,3,S,S] -> {"cls": [B,1,d], "tokens": [B,P,d]}
    suffix.pt     sequence [B,1+P,d] -> {"embedding": [B,e]}
    attention.pt  image [B,3,S,S] -> {"cls_attn": [B,h,P]}

TorchScript is the default container; --format onnx emits the same
graphs with tuple outputs bound to the same names (requires the onnx
package).  Every encoder export is verified on the spot: the unsplit
forward of N probe images must match suffix(prefix(probe)) within 1e-4,
and both the probes and the unsplit embeddings are recorded as ABST
files for the engine's own selftest.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Dict

import numpy as np
import torch

from .abst import write_abst
from .vit import ExportError, SplitVit

PROBE_TOLERANCE = 1e-4


class PrefixGraph(torch.nn.Module):
    def __init__(self, model: SplitVit, split_layer: int):
        super().__init__()
        self.model = model
        self.split_layer = split_layer

    def forward(self, image: torch.Tensor) -> Dict[str, torch.Tensor]:
        x = self.model.tokenize(image)
        x, _ = self.model.run_blocks(x, 0, self.split_layer)
        return {"cls": x[:, :1, :], "tokens": x[:, 1:, :]}


class SuffixGraph(torch.nn.Module):
    def __init__(self, model: SplitVit, split_layer: int):
        super().__init__()
        self.model = model
        self.split_layer = split_layer

    def forward(self, sequence: torch.Tensor) -> Dict[str, torch.Tensor]:
        x, _ = self.model.run_blocks(sequence, self.split_layer, len(self.model.blocks))
        return {"embedding": self.model.head(x)}


class AttentionGraph(torch.nn.Module):
    def __init__(self, model: SplitVit):
        super().__init__()
        self.model = model

    def forward(self, image: torch.Tensor) -> Dict[str, torch.Tensor]:
        x = self.model.tokenize(image)
        x, probs = self.model.run_blocks(x, 0, len(self.model.blocks))
        # last layer's class-token query row, class column dropped, raw values
        return {"cls_attn": probs[:, :, 0, 1:]}


class _TupleWrap(torch.nn.Module):
    """ONNX export cannot bind dict outputs; same graphs, tuple outputs."""

    def __init__(self, inner: torch.nn.Module, keys: list[str]):
        super().__init__()
        self.inner = inner
        self.keys = keys

    def forward(self, x):
        out = self.inner(x)
        return tuple(out[k] for k in self.keys)


def model_spec_dict(model: SplitVit, split_layer: int) -> dict:
    c = model.config
    return {
        "input_size": c.image_size,
        "patch_size": c.patch_size,
        "grid": [c.grid, c.grid],
        "d_model": c.d_model,
        "embed_dim": c.embed_dim,
        "split_layer": split_layer,
        "layers": c.layers,
        "mean": list(c.mean),
        "std": list(c.std),
    }


def _save_graph(module: torch.nn.Module, path: Path, fmt: str, example: torch.Tensor,
                input_name: str, output_names: list[str]) -> Path:
    if fmt == "torchscript":
        scripted = torch.jit.script(module)
        torch.jit.save(scripted, str(path.with_suffix(".pt")))
        return path.with_suffix(".pt")
    if fmt == "onnx":
        try:
            import onnx  # noqa: F401
        except ImportError as e:
            raise ExportError(
                "onnx export requires the onnx package (pip install onnx); "
                "use --format torchscript otherwise"
            ) from e
        wrapped = _TupleWrap(module, output_names)
        torch.onnx.export(
            wrapped, (example,), str(path.with_suffix(".onnx")),
            input_names=[input_name], output_names=output_names,
            dynamic_axes={input_name: {0: "batch"},
                          **{name: {0: "batch"} for name in output_names}},
            dynamo=False,
        )
        return path.with_suffix(".onnx")
    raise ExportError(f"unknown graph format {fmt!r}")


def export_split_encoder(
    model: SplitVit,
    split_layer: int,
    out_dir: str | Path,
    fmt: str = "torchscript",
    probe_count: int = 5,
    probe_seed: int = 0,
) -> dict:
    """Emit prefix + suffix graphs, sidecar, probe fixtures; verify the split.

    Returns a manifest fragment with file names and the verification record.
    """
    c = model.config
    if not 1 <= split_layer <= c.layers - 1:
        raise ExportError(f"split layer must be in [1, {c.layers - 1}], got {split_layer}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()

    example = torch.zeros(1, 3, c.image_size, c.image_size)
    prefix_path = _save_graph(PrefixGraph(model, split_layer), out / "prefix", fmt,
                              example, "image", ["cls", "tokens"])
    seq_example = torch.zeros(1, 1 + c.patches, c.d_model)
    suffix_path = _save_graph(SuffixGraph(model, split_layer), out / "suffix", fmt,
                              seq_example, "sequence", ["embedding"])
    (out / "model_spec.json").write_text(
        json.dumps(model_spec_dict(model, split_layer), indent=2) + "\n"
    )

    torch.manual_seed(probe_seed)
    probes = torch.randn(probe_count, 3, c.image_size, c.image_size)
    with torch.no_grad():
        unsplit = model(probes)
        x = model.tokenize(probes)
        x, _ = model.run_blocks(x, 0, split_layer)
        resumed, _ = model.run_blocks(x, split_layer, len(model.blocks))
        recomposed = model.head(resumed)
    worst = float((unsplit - recomposed).abs().max())
    if worst > PROBE_TOLERANCE:
        raise ExportError(
            f"split verification failed: unsplit vs suffix(prefix()) deviates by {worst:.3g}"
        )
    write_abst(probes.numpy().astype(np.float32), out / "probes.abst")
    write_abst(unsplit.numpy().astype(np.float32), out / "probe_embeddings.abst")

    return {
        "files": [prefix_path.name, suffix_path.name, "model_spec.json",
                  "probes.abst", "probe_embeddings.abst"],
        "split_layer": split_layer,
        "format": fmt,
        "probe_count": probe_count,
        "probe_max_error": worst,
    }


def export_attention_model(model: SplitVit, out_dir: str | Path, fmt: str = "torchscript") -> dict:
    """Emit the attention graph + sidecar; checks the softmax-row contract."""
    c = model.config
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model.eval()
    example = torch.zeros(1, 3, c.image_size, c.image_size)
    path = _save_graph(AttentionGraph(model), out / "attention", fmt,
                       example, "image", ["cls_attn"])
    (out / "model_spec.json").write_text(
        json.dumps(model_spec_dict(model, max(1, c.layers - 1)), indent=2) + "\n"
    )
    with torch.no_grad():
        attn = AttentionGraph(model)(torch.randn(2, 3, c.image_size, c.image_size))["cls_attn"]
    if attn.shape[1:] != (c.heads, c.patches):
        raise ExportError(f"attention graph emitted shape {tuple(attn.shape)}")
    if float(attn.min()) < 0 or float(attn.sum(dim=-1).max()) > 1.0 + 1e-5:
        raise ExportError("attention rows must be non-negative with mass <= 1")
    return {"files": [path.name, "model_spec.json"], "heads": c.heads, "patches": c.patches,
            "format": fmt}
