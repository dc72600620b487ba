"""Training-free zero-shot image classification with attention-guided crops.

Crop anchors are sampled from the attention map of a vision transformer,
cropped both in pixel space and in the encoder's pre-final-layer token
grid, and the resulting embeddings are scored against per-class
description embeddings with soft matching.
"""

from .attention import (
    AttentionGrid,
    MultiHeadClsAttention,
    PatchSample,
    average_heads,
    patch_probabilities,
    sample_patches,
    select_top_k,
)
from .backend import (
    BackendError,
    EmbeddingSet,
    OnnxBackend,
    Provenance,
    ReferenceEncoder,
    SplitEncoder,
    SplitEncoderSpec,
    TorchScriptBackend,
    composition_check,
    load_backend,
    load_model_spec,
    make_reference_encoder,
    save_model_spec,
)
from .core import (
    DegenerateVectorError,
    TensorFormatError,
    bicubic_resample_2d,
    l2_normalize,
    read_tensor,
    softmax,
    write_tensor,
)
from .featcrop import (
    TokenBox,
    TokenGrid,
    assemble_crop_sequence,
    crop_token_grid,
    map_box_to_tokens,
    resize_token_grid,
)
from .images import encode_png, load_image, write_png
from .pipeline import (
    Backends,
    EvalReport,
    ImageResult,
    RunConfig,
    canonical_json,
    evaluate_dataset,
    load_backends,
    render_overlay,
    run_image,
)
from .rawcrop import (
    ConfigError,
    CropBox,
    EncoderInputSpec,
    ImageTensor,
    crop_and_preprocess,
    full_image_box,
    patch_center_pixels,
    propose_crop_box,
)
from .scoring import (
    DescriptionCatalog,
    ScoreTable,
    aggregate_scores,
    baseline_clip_score,
    description_weights,
    load_catalog,
    save_catalog,
    similarity_row,
)
from .seeding import RNG_ALGORITHM, make_rng, mix64, per_image_seed, stable_hash

__version__ = "0.1.0"
