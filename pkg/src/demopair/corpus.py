"""Shared split loading: manifest records -> model-ready arrays."""

import numpy as np

from .errors import ConfigError, DataError
from .model import encode, patchify
from .model.patches import PatchCodebook
from .synthgen import load_image


def codebook_for(model_config):
    """The analytic color-grid codebook matching config.V (a perfect cube)."""
    levels = round(model_config.V ** (1.0 / 3.0))
    if levels ** 3 != model_config.V:
        raise ConfigError(
            f"V={model_config.V} is not a perfect cube; the color-grid "
            f"codebook needs levels**3 entries"
        )
    return PatchCodebook(model_config.patch_size, levels)


def load_split_arrays(manifest, model_config, split, with_visual_tokens=False):
    """Returns dict: ids, texts, profiles, patches (n, N, d_I), token_lists,
    and visual_tokens (n, N) when requested."""
    records = [r for r in manifest.records if r.split == split]
    if not records:
        raise DataError(f"split {split!r} is empty")
    if manifest.image_size != model_config.image_size:
        raise ConfigError(
            f"dataset images are {manifest.image_size}px but the model "
            f"expects {model_config.image_size}px"
        )
    patches = np.stack([
        patchify(load_image(manifest, r), model_config.patch_size)
        for r in records
    ])
    out = {
        "ids": [r.sample_id for r in records],
        "texts": [r.text for r in records],
        "profiles": [r.profile for r in records],
        "patches": patches,
        "token_lists": [encode(r.text, model_config.max_text_len)
                        for r in records],
    }
    if with_visual_tokens:
        codebook = codebook_for(model_config)
        out["visual_tokens"] = np.stack(
            [codebook.tokenize(p) for p in patches]
        )
    return out
