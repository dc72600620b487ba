"""Model loading and checkpoint tests."""

import numpy as np
import pytest
import torch

from absexport.vit import (
    ExportError,
    SplitVit,
    VitConfig,
    load_checkpoint,
    load_model,
    random_vit,
    save_checkpoint,
)


def test_random_model_is_deterministic():
    a = load_model("random:layers=2,heads=2,d_model=8,patch=8,img=16,embed=4,seed=9")
    b = load_model("random:layers=2,heads=2,d_model=8,patch=8,img=16,embed=4,seed=9")
    x = torch.randn(2, 3, 16, 16, generator=torch.Generator().manual_seed(0))
    with torch.no_grad():
        assert torch.equal(a(x), b(x))


def test_embeddings_unit_norm():
    model = load_model("random:layers=3,heads=4,d_model=16,patch=8,img=32,embed=8,seed=2")
    x = torch.randn(4, 3, 32, 32, generator=torch.Generator().manual_seed(1))
    with torch.no_grad():
        emb = model(x)
    np.testing.assert_allclose(np.linalg.norm(emb.numpy(), axis=1), 1.0, atol=1e-5)


def test_checkpoint_round_trip(tmp_path):
    model = random_vit(VitConfig(image_size=16, patch_size=8, d_model=8, heads=2,
                                 layers=2, embed_dim=4), seed=3)
    save_checkpoint(model, tmp_path / "ckpt.pt")
    back = load_checkpoint(tmp_path / "ckpt.pt")
    assert back.config == model.config
    x = torch.randn(1, 3, 16, 16, generator=torch.Generator().manual_seed(2))
    with torch.no_grad():
        assert torch.equal(model(x), back(x))


def test_file_id_loads_checkpoint(tmp_path):
    model = random_vit(VitConfig(image_size=16, patch_size=8, d_model=8, heads=2,
                                 layers=2, embed_dim=4), seed=4)
    save_checkpoint(model, tmp_path / "m.pt")
    again = load_model(f"file:{tmp_path / 'm.pt'}")
    assert again.config == model.config


def test_bad_checkpoint_rejected(tmp_path):
    torch.save({"weights": 1}, str(tmp_path / "junk.pt"))
    with pytest.raises(ExportError, match="absexport-vit-v1"):
        load_checkpoint(tmp_path / "junk.pt")


def test_invalid_ids():
    with pytest.raises(ExportError, match="unknown model id"):
        load_model("magic:thing")
    with pytest.raises(ExportError, match="unknown random model fields"):
        load_model("random:bogus=3")


def test_invalid_geometry():
    with pytest.raises(ExportError, match="not divisible"):
        SplitVit(VitConfig(image_size=30, patch_size=8))
    with pytest.raises(ExportError, match="heads"):
        SplitVit(VitConfig(d_model=30, heads=4))


def test_clip_style_pre_layernorm_round_trips(tmp_path):
    config = VitConfig(image_size=16, patch_size=8, d_model=8, heads=2, layers=2,
                       embed_dim=4, pre_layernorm=True)
    model = random_vit(config, seed=5)
    assert not isinstance(model.ln_pre, torch.nn.Identity)
    save_checkpoint(model, tmp_path / "c.pt")
    back = load_checkpoint(tmp_path / "c.pt")
    x = torch.randn(1, 3, 16, 16, generator=torch.Generator().manual_seed(3))
    with torch.no_grad():
        assert torch.equal(model(x), back(x))
