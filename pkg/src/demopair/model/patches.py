"""Patch flattening, the analytic visual-token codebook, and patch masking."""

import numpy as np

from .. import kernels
from ..errors import ConfigError, DataError


def patchify(image, patch_size):
    """(H, W, 3) image -> (N, patch_size*patch_size*3) rows, row-major grid.

    Exact inverse is unpatchify; no interpolation or padding.
    """
    h, w = image.shape[:2]
    if h % patch_size or w % patch_size:
        raise ConfigError(
            f"image dims {h}x{w} not divisible by patch size {patch_size}"
        )
    gh, gw = h // patch_size, w // patch_size
    x = image.reshape(gh, patch_size, gw, patch_size, 3)
    x = x.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(gh * gw, patch_size * patch_size * 3))


def unpatchify(patches, h, w, patch_size):
    gh, gw = h // patch_size, w // patch_size
    if patches.shape[0] != gh * gw:
        raise ConfigError(
            f"{patches.shape[0]} patches cannot tile a {h}x{w} image "
            f"with patch size {patch_size}"
        )
    x = patches.reshape(gh, gw, patch_size, patch_size, 3)
    x = x.transpose(0, 2, 1, 3, 4)
    return np.ascontiguousarray(x.reshape(h, w, 3))


class PatchCodebook:
    """Fixed analytic codebook: V constant-color patches on an RGB grid.

    levels_per_channel**3 entries; entry index r*L*L + g*L + b is the patch
    filled with the (r, g, b) grid color. Nearest-entry assignment therefore
    quantizes a patch's mean color, while ties resolve to the lowest index
    because distances are compared exactly.
    """

    def __init__(self, patch_size: int, levels_per_channel: int = 4):
        if levels_per_channel < 1:
            raise ConfigError("codebook needs at least one level per channel")
        self.patch_size = patch_size
        self.levels = levels_per_channel
        centers = (np.arange(levels_per_channel) + 0.5) / levels_per_channel
        colors = np.stack(np.meshgrid(centers, centers, centers,
                                      indexing="ij"), axis=-1).reshape(-1, 3)
        self.codebook = np.ascontiguousarray(
            np.repeat(colors, patch_size * patch_size, axis=0)
            .reshape(len(colors), -1, 3)
            .reshape(len(colors), -1)
        )

    @property
    def V(self):
        return self.codebook.shape[0]

    def tokenize(self, patches):
        """Nearest codebook entry per patch row; lowest index wins ties."""
        if self.codebook.size == 0:
            raise DataError("empty codebook")
        patches = np.ascontiguousarray(patches, dtype=np.float64)
        if patches.shape[1] != self.codebook.shape[1]:
            raise ConfigError(
                f"patch dim {patches.shape[1]} does not match codebook "
                f"dim {self.codebook.shape[1]}"
            )
        return kernels.codebook_assign(patches, self.codebook)


def tokenize_patches(tokenizer: PatchCodebook, image_or_patches):
    """Visual token indices for an image (or pre-flattened patch rows)."""
    x = np.asarray(image_or_patches, dtype=np.float64)
    if x.ndim == 3:
        x = patchify(x, tokenizer.patch_size)
    return tokenizer.tokenize(x)


def mask_count(n_patches: int, mask_ratio: float) -> int:
    """round(ratio*N) under Python rounding, floored at one position."""
    if not 0 < mask_ratio < 1:
        raise ConfigError(f"mask_ratio must lie in (0, 1), got {mask_ratio}")
    return max(1, int(round(mask_ratio * n_patches)))


def mask_patches(patches, mask_ratio, rng, mask_token):
    """Replace a uniform sample of patch rows with the learned mask token.

    Returns (masked copy, sorted masked index array). rng is any
    numpy Generator; identical state gives identical masks.
    """
    n = patches.shape[0]
    m = mask_count(n, mask_ratio)
    idx = np.sort(rng.choice(n, size=m, replace=False))
    out = patches.copy()
    out[idx] = mask_token
    return out, idx
