"""Dataset construction: balanced image-text pairs with an on-disk layout of
images/<id>.png + manifest.jsonl + meta.json.

Splits are 8:1:1 with the rounding remainder assigned to train. Each split
draws its profiles from its own stratified sampler, so per-attribute class
counts are within +-1 of uniform inside every split. All randomness derives
from (seed, split) and per-sample jitter from (seed, sample_id); two runs
with the same config produce byte-identical files.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ConfigError, DataError
from . import profiles as P
from .avatar import PALETTES, render_avatar, to_uint8

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
_JITTER_SALT = 29


@dataclass
class GenConfig:
    n: int
    seed: int
    out_dir: str
    image_size: int = 32
    patch_size: int = 16
    palette: str = "A"

    def validate(self):
        floor = 10 * P.max_class_count()
        if self.n < floor:
            raise ConfigError(
                f"dataset size {self.n} below stratification floor {floor} "
                f"(10 x largest attribute class count)"
            )
        if self.image_size % self.patch_size != 0:
            raise ConfigError(
                f"image size {self.image_size} not divisible by patch "
                f"size {self.patch_size}"
            )
        if self.palette not in PALETTES:
            raise ConfigError(f"unknown palette {self.palette!r}")
        return self

    def to_dict(self):
        # out_dir is deliberately absent: on-disk metadata must not depend
        # on where the dataset was written, or byte-identity across runs
        # into different directories breaks.
        return {
            "n": self.n, "seed": self.seed,
            "image_size": self.image_size, "patch_size": self.patch_size,
            "palette": self.palette,
        }


@dataclass
class PairedSample:
    sample_id: int
    image: np.ndarray
    text: str
    profile: P.DemographicProfile
    split: str


@dataclass
class SampleRecord:
    """One manifest row; the image lives on disk at image_path."""
    sample_id: int
    split: str
    text: str
    profile: P.DemographicProfile
    image_path: str


@dataclass
class DatasetManifest:
    records: list
    split_counts: dict
    seed: int
    attribute_histogram: dict
    image_size: int
    patch_size: int
    palette: str
    root: str = ""
    per_split_histogram: dict = field(default_factory=dict)

    def ids_by_split(self, split):
        return [r.sample_id for r in self.records if r.split == split]


def split_sizes(n):
    """8:1:1 with the remainder assigned to train."""
    n_val = n // 10
    n_test = n // 10
    return n - n_val - n_test, n_val, n_test


def jitter_seed_for(seed, sample_id):
    return np.random.SeedSequence([seed, sample_id, _JITTER_SALT])


def generate_samples(config):
    """Generate all PairedSamples in memory, ordered by sample_id."""
    config.validate()
    sizes = split_sizes(config.n)
    spec = (config.image_size, config.image_size, config.patch_size)
    per_split = P.stratified_profiles(sizes, config.seed)
    samples = []
    sid = 0
    for split, split_profiles in zip(SPLITS, per_split):
        for profile in split_profiles:
            image = render_avatar(
                profile, spec,
                jitter_seed=jitter_seed_for(config.seed, sid),
                palette=config.palette,
            )
            samples.append(PairedSample(
                sample_id=sid, image=image, text=P.render_text(profile),
                profile=profile, split=split,
            ))
            sid += 1
    return samples


def _histogram(samples_or_records):
    hist = {}
    for name, domain in P.ATTRIBUTE_DOMAINS.items():
        counts = [0] * len(domain)
        for s in samples_or_records:
            counts[domain.index(getattr(s.profile, name))] += 1
        hist[name] = counts
    return hist


def build_dataset(config):
    """Generate, write to disk, and return the manifest."""
    samples = generate_samples(config)
    out = Path(config.out_dir)
    img_dir = out / "images"
    img_dir.mkdir(parents=True, exist_ok=True)

    records = []
    lines = []
    for s in samples:
        rel = f"images/{s.sample_id:06d}.png"
        Image.fromarray(to_uint8(s.image), "RGB").save(out / rel, format="PNG")
        records.append(SampleRecord(
            sample_id=s.sample_id, split=s.split, text=s.text,
            profile=s.profile, image_path=rel,
        ))
        lines.append(json.dumps({
            "sample_id": s.sample_id,
            "split": s.split,
            "text": s.text,
            "profile": s.profile.to_dict(),
            "image_path": rel,
        }, sort_keys=True))
    (out / "manifest.jsonl").write_text("\n".join(lines) + "\n")

    split_counts = {sp: sum(1 for r in records if r.split == sp) for sp in SPLITS}
    hist = _histogram(records)
    per_split = {
        sp: _histogram([r for r in records if r.split == sp]) for sp in SPLITS
    }
    meta = {
        "config": config.to_dict(),
        "seed": config.seed,
        "split_counts": split_counts,
        "attribute_histogram": hist,
        "per_split_histogram": per_split,
        "attribute_domains": {k: list(v) for k, v in P.ATTRIBUTE_DOMAINS.items()},
        "format_version": 1,
    }
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    manifest = DatasetManifest(
        records=records, split_counts=split_counts, seed=config.seed,
        attribute_histogram=hist, image_size=config.image_size,
        patch_size=config.patch_size, palette=config.palette,
        root=str(out), per_split_histogram=per_split,
    )
    log.info("wrote %d samples to %s (splits %s)", len(records), out, split_counts)
    return manifest


def load_manifest(root):
    """Read manifest.jsonl + meta.json back into a DatasetManifest."""
    root = Path(root)
    meta_path = root / "meta.json"
    manifest_path = root / "manifest.jsonl"
    if not meta_path.exists() or not manifest_path.exists():
        raise DataError(f"no dataset at {root} (missing manifest.jsonl/meta.json)")
    meta = json.loads(meta_path.read_text())
    records = []
    for line in manifest_path.read_text().splitlines():
        if not line.strip():
            continue
        row = json.loads(line)
        records.append(SampleRecord(
            sample_id=row["sample_id"], split=row["split"], text=row["text"],
            profile=P.DemographicProfile.from_dict(row["profile"]),
            image_path=row["image_path"],
        ))
    cfg = meta["config"]
    return DatasetManifest(
        records=records, split_counts=meta["split_counts"], seed=meta["seed"],
        attribute_histogram=meta["attribute_histogram"],
        image_size=cfg["image_size"], patch_size=cfg["patch_size"],
        palette=cfg.get("palette", "A"), root=str(root),
        per_split_histogram=meta.get("per_split_histogram", {}),
    )


def load_image(manifest, record):
    """Load one sample's image as (H, W, 3) float64 in [0, 1]."""
    path = Path(manifest.root) / record.image_path
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0
