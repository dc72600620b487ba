"""A splittable pre-norm vision transformer and checkpoint loading.

The export pipeline operates on this one canonical module family:
patch-conv embedding, class token, learned positions, pre-norm
attention+MLP blocks with extractable attention probabilities, final
layer norm, optional linear projection.  CLIP vision towers and
DINO-style ViTs both map onto it; synthetic randomly initialized
instances cover testing.

Model id forms understood by ``load_model``:

    random:layers=4,heads=4,d_model=32,patch=8,img=32,embed=16,seed=5
    file:/path/to/checkpoint.pt        (saved by save_checkpoint)
    hf-clip:openai/clip-vit-base-patch32
    hf-dino:facebook/dino-vitb16
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path

import torch
import torch.nn as nn


class ExportError(RuntimeError):
    pass


CLIP_MEAN = (0.48145466, 0.4578275, 0.40821073)
CLIP_STD = (0.26862954, 0.26130258, 0.27577711)
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


@dataclass
class VitConfig:
    image_size: int = 32
    patch_size: int = 8
    d_model: int = 32
    heads: int = 4
    layers: int = 4
    embed_dim: int = 16
    mean: tuple = (0.5, 0.5, 0.5)
    std: tuple = (0.25, 0.25, 0.25)
    pre_layernorm: bool = False

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def patches(self) -> int:
        return self.grid * self.grid


class Block(nn.Module):
    """Pre-norm attention + MLP with the attention softmax exposed."""

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(d_model)
        self.qkv = nn.Linear(d_model, 3 * d_model)
        self.out = nn.Linear(d_model, d_model)
        self.ln2 = nn.LayerNorm(d_model)
        self.fc1 = nn.Linear(d_model, 4 * d_model)
        self.fc2 = nn.Linear(4 * d_model, d_model)
        self.act = nn.GELU()

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        b, t, d = x.shape
        h = self.heads
        q, k, v = self.qkv(self.ln1(x)).chunk(3, dim=-1)
        q = q.view(b, t, h, d // h).transpose(1, 2)
        k = k.view(b, t, h, d // h).transpose(1, 2)
        v = v.view(b, t, h, d // h).transpose(1, 2)
        scores = q @ k.transpose(-1, -2) / (float(d // h) ** 0.5)
        probs = scores.softmax(dim=-1)
        ctx = (probs @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.out(ctx)
        x = x + self.fc2(self.act(self.fc1(self.ln2(x))))
        return x, probs


class SplitVit(nn.Module):
    """The canonical exportable encoder."""

    def __init__(self, config: VitConfig):
        super().__init__()
        if config.image_size % config.patch_size != 0:
            raise ExportError(
                f"image size {config.image_size} not divisible by patch {config.patch_size}"
            )
        if config.d_model % config.heads != 0:
            raise ExportError(f"d_model {config.d_model} not divisible by heads {config.heads}")
        self.config = config
        self.embed = nn.Conv2d(3, config.d_model, config.patch_size, stride=config.patch_size)
        self.cls_token = nn.Parameter(torch.zeros(1, 1, config.d_model))
        self.pos = nn.Parameter(torch.zeros(1, 1 + config.patches, config.d_model))
        # present only when the source checkpoint has one (CLIP does)
        self.ln_pre = nn.LayerNorm(config.d_model) if config.pre_layernorm else nn.Identity()
        self.blocks = nn.ModuleList(Block(config.d_model, config.heads) for _ in range(config.layers))
        self.ln_final = nn.LayerNorm(config.d_model)
        self.proj = nn.Linear(config.d_model, config.embed_dim, bias=False)

    def tokenize(self, image: torch.Tensor) -> torch.Tensor:
        tok = self.embed(image).flatten(2).transpose(1, 2)
        cls = self.cls_token.expand(tok.shape[0], -1, -1)
        return self.ln_pre(torch.cat([cls, tok], dim=1) + self.pos)

    def run_blocks(self, x: torch.Tensor, start: int, stop: int) -> tuple[torch.Tensor, torch.Tensor]:
        probs = torch.zeros(0)
        for i, blk in enumerate(self.blocks):
            if start <= i < stop:
                x, probs = blk(x)
        return x, probs

    def head(self, x: torch.Tensor) -> torch.Tensor:
        emb = self.proj(self.ln_final(x)[:, 0, :])
        return emb / torch.linalg.vector_norm(emb, dim=-1, keepdim=True)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        x = self.tokenize(image)
        x, _ = self.run_blocks(x, 0, len(self.blocks))
        return self.head(x)


def random_vit(config: VitConfig, seed: int) -> SplitVit:
    torch.manual_seed(seed)
    model = SplitVit(config)
    with torch.no_grad():
        for p in model.parameters():
            p.normal_(0.0, 0.5 / max(1.0, float(p.shape[-1]) ** 0.5))
    model.eval()
    return model


def save_checkpoint(model: SplitVit, path: str | Path) -> None:
    torch.save(
        {"format": "absexport-vit-v1", "config": asdict(model.config),
         "state_dict": model.state_dict()},
        str(path),
    )


def load_checkpoint(path: str | Path) -> SplitVit:
    blob = torch.load(str(path), map_location="cpu", weights_only=False)
    if not isinstance(blob, dict) or blob.get("format") != "absexport-vit-v1":
        raise ExportError(f"{path}: not an absexport-vit-v1 checkpoint")
    cfg = dict(blob["config"])
    cfg["mean"] = tuple(cfg["mean"])
    cfg["std"] = tuple(cfg["std"])
    model = SplitVit(VitConfig(**cfg))
    model.load_state_dict(blob["state_dict"])
    model.eval()
    return model


def _parse_random_id(spec: str) -> tuple[VitConfig, int]:
    fields = {}
    for part in spec.split(","):
        if part:
            key, _, value = part.partition("=")
            fields[key.strip()] = int(value)
    seed = fields.pop("seed", 0)
    config = VitConfig(
        image_size=fields.pop("img", 32),
        patch_size=fields.pop("patch", 8),
        d_model=fields.pop("d_model", 32),
        heads=fields.pop("heads", 4),
        layers=fields.pop("layers", 4),
        embed_dim=fields.pop("embed", 16),
    )
    if fields:
        raise ExportError(f"unknown random model fields: {sorted(fields)}")
    return config, seed


def _from_hf_clip(name: str) -> SplitVit:
    try:
        from transformers import CLIPVisionModelWithProjection
    except ImportError as e:
        raise ExportError(
            "hf-clip model ids require the transformers package (pip install transformers)"
        ) from e
    src = CLIPVisionModelWithProjection.from_pretrained(name).eval()
    vision = src.vision_model
    cfg_src = src.config
    config = VitConfig(
        image_size=cfg_src.image_size,
        patch_size=cfg_src.patch_size,
        d_model=cfg_src.hidden_size,
        heads=cfg_src.num_attention_heads,
        layers=cfg_src.num_hidden_layers,
        embed_dim=cfg_src.projection_dim,
        mean=CLIP_MEAN,
        std=CLIP_STD,
        pre_layernorm=True,
    )
    model = SplitVit(config)
    with torch.no_grad():
        try:
            model.embed.weight.copy_(vision.embeddings.patch_embedding.weight)
            model.embed.bias.zero_()
            model.cls_token.copy_(vision.embeddings.class_embedding.reshape(1, 1, -1))
            model.pos.copy_(vision.embeddings.position_embedding.weight.unsqueeze(0))
            model.ln_pre.weight.copy_(vision.pre_layrnorm.weight)
            model.ln_pre.bias.copy_(vision.pre_layrnorm.bias)
            for dst, layer in zip(model.blocks, vision.encoder.layers):
                dst.ln1.weight.copy_(layer.layer_norm1.weight)
                dst.ln1.bias.copy_(layer.layer_norm1.bias)
                dst.qkv.weight.copy_(torch.cat([
                    layer.self_attn.q_proj.weight,
                    layer.self_attn.k_proj.weight,
                    layer.self_attn.v_proj.weight,
                ]))
                dst.qkv.bias.copy_(torch.cat([
                    layer.self_attn.q_proj.bias,
                    layer.self_attn.k_proj.bias,
                    layer.self_attn.v_proj.bias,
                ]))
                dst.out.weight.copy_(layer.self_attn.out_proj.weight)
                dst.out.bias.copy_(layer.self_attn.out_proj.bias)
                dst.ln2.weight.copy_(layer.layer_norm2.weight)
                dst.ln2.bias.copy_(layer.layer_norm2.bias)
                dst.fc1.weight.copy_(layer.mlp.fc1.weight)
                dst.fc1.bias.copy_(layer.mlp.fc1.bias)
                dst.fc2.weight.copy_(layer.mlp.fc2.weight)
                dst.fc2.bias.copy_(layer.mlp.fc2.bias)
            model.ln_final.weight.copy_(vision.post_layernorm.weight)
            model.ln_final.bias.copy_(vision.post_layernorm.bias)
            model.proj.weight.copy_(src.visual_projection.weight)
        except AttributeError as e:
            raise ExportError(
                f"unexpected CLIP vision architecture ({e}); expected structure: "
                "embeddings(patch_embedding, class_embedding, position_embedding) -> "
                "encoder.layers[i](layer_norm1, self_attn.{q,k,v,out}_proj, layer_norm2, "
                "mlp.fc1, mlp.fc2) -> post_layernorm -> visual_projection"
            ) from e
    model.eval()
    return model


def _from_hf_dino(name: str) -> SplitVit:
    try:
        from transformers import ViTModel
    except ImportError as e:
        raise ExportError(
            "hf-dino model ids require the transformers package (pip install transformers)"
        ) from e
    src = ViTModel.from_pretrained(name, add_pooling_layer=False).eval()
    cfg_src = src.config
    config = VitConfig(
        image_size=cfg_src.image_size,
        patch_size=cfg_src.patch_size,
        d_model=cfg_src.hidden_size,
        heads=cfg_src.num_attention_heads,
        layers=cfg_src.num_hidden_layers,
        embed_dim=cfg_src.hidden_size,
        mean=IMAGENET_MEAN,
        std=IMAGENET_STD,
    )
    model = SplitVit(config)
    with torch.no_grad():
        try:
            emb = src.embeddings
            model.embed.weight.copy_(emb.patch_embeddings.projection.weight)
            model.embed.bias.copy_(emb.patch_embeddings.projection.bias)
            model.cls_token.copy_(emb.cls_token)
            model.pos.copy_(emb.position_embeddings)
            for dst, layer in zip(model.blocks, src.encoder.layer):
                att = layer.attention.attention
                dst.ln1.weight.copy_(layer.layernorm_before.weight)
                dst.ln1.bias.copy_(layer.layernorm_before.bias)
                dst.qkv.weight.copy_(torch.cat([
                    att.query.weight, att.key.weight, att.value.weight,
                ]))
                dst.qkv.bias.copy_(torch.cat([att.query.bias, att.key.bias, att.value.bias]))
                dst.out.weight.copy_(layer.attention.output.dense.weight)
                dst.out.bias.copy_(layer.attention.output.dense.bias)
                dst.ln2.weight.copy_(layer.layernorm_after.weight)
                dst.ln2.bias.copy_(layer.layernorm_after.bias)
                dst.fc1.weight.copy_(layer.intermediate.dense.weight)
                dst.fc1.bias.copy_(layer.intermediate.dense.bias)
                dst.fc2.weight.copy_(layer.output.dense.weight)
                dst.fc2.bias.copy_(layer.output.dense.bias)
            model.ln_final.weight.copy_(src.layernorm.weight)
            model.ln_final.bias.copy_(src.layernorm.bias)
            model.proj.weight.copy_(torch.eye(config.d_model))
        except AttributeError as e:
            raise ExportError(
                f"unexpected ViT architecture ({e}); expected structure: "
                "embeddings(cls_token, position_embeddings, patch_embeddings.projection) -> "
                "encoder.layer[i](layernorm_before, attention.attention.{query,key,value}, "
                "attention.output.dense, layernorm_after, intermediate.dense, output.dense) "
                "-> layernorm"
            ) from e
    model.eval()
    return model


def load_model(model_id: str) -> SplitVit:
    """Resolve a model id to a loaded SplitVit in eval mode."""
    kind, _, rest = model_id.partition(":")
    if kind == "random":
        config, seed = _parse_random_id(rest)
        return random_vit(config, seed)
    if kind == "file":
        return load_checkpoint(rest)
    if kind == "hf-clip":
        return _from_hf_clip(rest)
    if kind == "hf-dino":
        return _from_hf_dino(rest)
    raise ExportError(
        f"unknown model id {model_id!r}; expected random:..., file:..., hf-clip:... or hf-dino:..."
    )
