"""One-shot tooling that turns model checkpoints into abselect engine inputs."""

from .abst import read_abst, write_abst
from .catalog import HashTextEncoder, build_catalog, load_descriptions, make_text_encoder
from .fixtures import generate_fixtures, resample_bicubic, write_png
from .graphs import export_attention_model, export_split_encoder
from .manifest import file_sha256, verify_manifest, write_manifest
from .vit import ExportError, SplitVit, VitConfig, load_checkpoint, load_model, random_vit, save_checkpoint

__version__ = "0.1.0"
