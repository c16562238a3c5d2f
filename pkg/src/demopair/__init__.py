"""demopair: synthetic demographic image-text pairs, a tiny dual-encoder
trained with a joint contrastive + masked-image-modeling objective, and a
top-1 retrieval evaluation harness."""

__version__ = "0.1.0"
