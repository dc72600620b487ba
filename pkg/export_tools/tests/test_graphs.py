"""Graph export tests: IO-name contract, probe verification, formats."""

import importlib.util
import json

import numpy as np
import pytest
import torch

from absexport.abst import read_abst
from absexport.graphs import export_attention_model, export_split_encoder
from absexport.vit import ExportError, VitConfig, random_vit

HAS_ONNX = importlib.util.find_spec("onnx") is not None

CONFIG = VitConfig(image_size=32, patch_size=8, d_model=16, heads=4, layers=3, embed_dim=8)


@pytest.fixture(scope="module")
def model():
    return random_vit(CONFIG, seed=11)


def test_export_emits_contract_files(model, tmp_path):
    info = export_split_encoder(model, 2, tmp_path)
    assert set(info["files"]) == {"prefix.pt", "suffix.pt", "model_spec.json",
                                  "probes.abst", "probe_embeddings.abst"}
    spec = json.loads((tmp_path / "model_spec.json").read_text())
    assert spec["split_layer"] == 2 and spec["layers"] == 3
    assert spec["grid"] == [4, 4] and spec["d_model"] == 16
    assert set(spec) == {"input_size", "patch_size", "grid", "d_model", "embed_dim",
                         "split_layer", "layers", "mean", "std"}


def test_probe_record_within_tolerance(model, tmp_path):
    info = export_split_encoder(model, 1, tmp_path, probe_count=5)
    assert info["probe_max_error"] <= 1e-4
    probes = read_abst(tmp_path / "probes.abst")
    embs = read_abst(tmp_path / "probe_embeddings.abst")
    assert probes.shape == (5, 3, 32, 32)
    assert embs.shape == (5, 8)
    np.testing.assert_allclose(np.linalg.norm(embs, axis=1), 1.0, atol=1e-5)


def test_graph_io_names_and_shapes(model, tmp_path):
    export_split_encoder(model, 2, tmp_path)
    prefix = torch.jit.load(str(tmp_path / "prefix.pt"))
    suffix = torch.jit.load(str(tmp_path / "suffix.pt"))
    image = torch.randn(3, 3, 32, 32, generator=torch.Generator().manual_seed(4))
    with torch.no_grad():
        out = prefix(image)
        assert set(out) == {"cls", "tokens"}
        assert out["cls"].shape == (3, 1, 16) and out["tokens"].shape == (3, 16, 16)
        seq = torch.cat([out["cls"], out["tokens"]], dim=1)
        emb = suffix(seq)
        assert set(emb) == {"embedding"} and emb["embedding"].shape == (3, 8)
        # the split graphs must recompose the unsplit model exactly
        direct = model(image)
        np.testing.assert_allclose(emb["embedding"].numpy(), direct.numpy(), atol=1e-4)


def test_attention_graph_contract(tmp_path):
    model = random_vit(CONFIG, seed=12)
    info = export_attention_model(model, tmp_path)
    assert info["heads"] == 4 and info["patches"] == 16
    graph = torch.jit.load(str(tmp_path / "attention.pt"))
    with torch.no_grad():
        attn = graph(torch.randn(2, 3, 32, 32))["cls_attn"]
    assert attn.shape == (2, 4, 16)
    assert float(attn.min()) >= 0
    assert float(attn.sum(dim=-1).max()) <= 1.0 + 1e-5


def test_invalid_split_layer(model, tmp_path):
    for bad in (0, 3, 9):
        with pytest.raises(ExportError, match="split layer"):
            export_split_encoder(model, bad, tmp_path)


@pytest.mark.skipif(HAS_ONNX, reason="covered by live export when onnx exists")
def test_onnx_format_reports_missing_package(model, tmp_path):
    with pytest.raises(ExportError, match="onnx"):
        export_split_encoder(model, 1, tmp_path, fmt="onnx")
