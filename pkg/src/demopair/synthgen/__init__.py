"""Synthetic paired avatar/caption data generation."""

from .avatar import PALETTES, face_region_mask, render_avatar, to_uint8
from .dataset import (
    GenConfig,
    DatasetManifest,
    PairedSample,
    SampleRecord,
    build_dataset,
    generate_samples,
    load_image,
    load_manifest,
    split_sizes,
)
from .profiles import (
    ATTRIBUTE_DOMAINS,
    DemographicProfile,
    ProfileSampler,
    all_profiles,
    max_class_count,
    render_text,
)

__all__ = [
    "ATTRIBUTE_DOMAINS",
    "DatasetManifest",
    "DemographicProfile",
    "GenConfig",
    "PALETTES",
    "PairedSample",
    "ProfileSampler",
    "SampleRecord",
    "all_profiles",
    "build_dataset",
    "face_region_mask",
    "generate_samples",
    "load_image",
    "load_manifest",
    "max_class_count",
    "render_text",
    "split_sizes",
    "to_uint8",
]
