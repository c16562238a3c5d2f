"""Model hyperparameter container and validation."""

from dataclasses import dataclass, asdict

from ..errors import ConfigError
from .text import VOCAB_SIZE


@dataclass
class ModelConfig:
    image_size: int = 32
    patch_size: int = 16
    d_h: int = 64
    d_e: int = 32
    n_layers_img: int = 2
    n_layers_txt: int = 2
    n_layers_mim: int = 1
    n_heads: int = 4
    mlp_ratio: int = 4
    vocab_text: int = VOCAB_SIZE
    max_text_len: int = 40
    V: int = 64
    tau_init: float = 0.07
    tau_learnable: bool = False
    mask_ratio: float = 0.4
    # 0 keeps the projection a single bias-free linear map (scale-invariant
    # after normalization); > 0 inserts a hidden layer of that width.
    proj_hidden: int = 0

    @property
    def d_I(self):
        """Flattened patch pixel dimension (image-side input features)."""
        return 3 * self.patch_size * self.patch_size

    @property
    def d_T(self):
        """Text-side input feature dimension (token embedding width)."""
        return self.d_h

    @property
    def n_patches(self):
        side = self.image_size // self.patch_size
        return side * side

    def validate(self):
        positive = (
            ("image_size", self.image_size), ("patch_size", self.patch_size),
            ("d_h", self.d_h), ("d_e", self.d_e),
            ("n_layers_img", self.n_layers_img),
            ("n_layers_txt", self.n_layers_txt),
            ("n_layers_mim", self.n_layers_mim),
            ("n_heads", self.n_heads), ("mlp_ratio", self.mlp_ratio),
            ("vocab_text", self.vocab_text),
            ("max_text_len", self.max_text_len), ("V", self.V),
        )
        for name, value in positive:
            if int(value) != value or value <= 0:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image_size {self.image_size} not divisible by "
                f"patch_size {self.patch_size}"
            )
        if self.d_h % self.n_heads != 0:
            raise ConfigError(
                f"d_h {self.d_h} not divisible by n_heads {self.n_heads}"
            )
        if not self.tau_init > 0:
            raise ConfigError(f"tau_init must be > 0, got {self.tau_init}")
        if not 0 < self.mask_ratio < 1:
            raise ConfigError(
                f"mask_ratio must lie in (0, 1), got {self.mask_ratio}"
            )
        if self.proj_hidden < 0:
            raise ConfigError(f"proj_hidden must be >= 0, got {self.proj_hidden}")
        return self

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known).validate()
