"""Dual-encoder model: patch machinery, encoders, projection, MIM decoder."""

from .config import ModelConfig
from .network import (
    OBJECTIVES,
    batch_masks,
    embed_batch,
    encode_image,
    encode_text,
    eos_features,
    mim_decode,
    objective_forward_backward,
    pad_text_batch,
    project,
)
from .params import (
    all_finite,
    clone_params,
    init_params,
    load_checkpoint,
    save_checkpoint,
    zeros_like_params,
)
from .patches import (
    PatchCodebook,
    mask_count,
    mask_patches,
    patchify,
    tokenize_patches,
    unpatchify,
)
from .text import EOS_ID, PAD_ID, VOCAB, VOCAB_SIZE, encode, tokenize

__all__ = [
    "EOS_ID",
    "OBJECTIVES",
    "PAD_ID",
    "ModelConfig",
    "PatchCodebook",
    "VOCAB",
    "VOCAB_SIZE",
    "all_finite",
    "batch_masks",
    "clone_params",
    "embed_batch",
    "encode",
    "encode_image",
    "encode_text",
    "eos_features",
    "init_params",
    "load_checkpoint",
    "mask_count",
    "mask_patches",
    "mim_decode",
    "objective_forward_backward",
    "pad_text_batch",
    "patchify",
    "project",
    "save_checkpoint",
    "tokenize",
    "tokenize_patches",
    "unpatchify",
    "zeros_like_params",
]
