"""Text-to-image retrieval evaluation: embedding a split, top-1 lookup,
accuracy plus macro precision/recall/F1 over a demographic attribute, and
JSONL import/export so externally produced embeddings can be scored through
the same harness.
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field

import numpy as np

from .corpus import load_split_arrays
from .errors import ConfigError, DataError
from .model import embed_batch
from .synthgen.profiles import ATTRIBUTE_DOMAINS

log = logging.getLogger(__name__)

MODALITIES = ("image", "text")
DEFAULT_ATTRIBUTE = "ethnicity_class"
_NORM_TOL = 1e-4
_RENORM_WARN = 1e-3


@dataclass
class EmbeddingBatch:
    ids: list
    vectors: np.ndarray
    modality: str

    def validate(self):
        if self.modality not in MODALITIES:
            raise ConfigError(f"unknown modality {self.modality!r}")
        if len(self.ids) != self.vectors.shape[0]:
            raise ConfigError("id/vector count mismatch")
        if len(set(self.ids)) != len(self.ids):
            raise ConfigError("duplicate sample ids in embedding batch")
        norms = np.linalg.norm(self.vectors, axis=1)
        if norms.size and np.abs(norms - 1.0).max() > _NORM_TOL:
            raise ConfigError(
                f"embedding rows deviate from unit norm by "
                f"{np.abs(norms - 1.0).max():.2e}"
            )
        return self


@dataclass
class RetrievalReport:
    accuracy: float
    precision: float
    recall: float
    f1: float
    assignments: list
    n_queries: int
    attribute: str = DEFAULT_ATTRIBUTE
    per_class: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "accuracy": self.accuracy, "precision": self.precision,
            "recall": self.recall, "f1": self.f1,
            "n_queries": self.n_queries, "attribute": self.attribute,
            "per_class": self.per_class,
            "assignments": [[int(q), int(r)] for q, r in self.assignments],
        }


def embed_corpus(params, model_config, manifest, split, batch_size=256):
    """One unit-norm embedding per sample for each modality, id-aligned."""
    data = load_split_arrays(manifest, model_config, split)
    n = len(data["ids"])
    img_rows, txt_rows = [], []
    for s in range(0, n, batch_size):
        out = embed_batch(
            params, model_config,
            patches=data["patches"][s:s + batch_size],
            token_lists=data["token_lists"][s:s + batch_size],
        )
        img_rows.append(out["image"])
        txt_rows.append(out["text"])
    ids = list(data["ids"])
    img = EmbeddingBatch(ids, np.concatenate(img_rows), "image").validate()
    txt = EmbeddingBatch(list(ids), np.concatenate(txt_rows), "text").validate()
    return img, txt


def retrieve_top1(query_vec, image_batch: EmbeddingBatch):
    """sample_id of the highest-similarity row; exact ties -> lowest id."""
    if image_batch.vectors.shape[0] == 0:
        raise DataError("empty image batch")
    sims = image_batch.vectors @ np.asarray(query_vec, dtype=np.float64)
    best = sims.max()
    tied = np.flatnonzero(sims == best)
    return min(image_batch.ids[i] for i in tied)


def compute_metrics(assignments, ground_truth, class_of,
                    attribute=DEFAULT_ATTRIBUTE):
    """Exact-match accuracy plus macro precision/recall/F1 over the classes
    of the ground-truth pairing.

    assignments: iterable of (query_id, retrieved_id). ground_truth maps
    query_id -> paired image id. class_of maps sample_id -> class label;
    the retrieval's predicted class is the retrieved sample's class.
    Precision of a class with no predictions is 0 by convention.
    """
    assignments = list(assignments)
    if not assignments:
        raise DataError("no assignments to score")
    for q, _ in assignments:
        if q not in ground_truth:
            raise DataError(f"query {q} has no ground-truth pairing")

    exact = sum(1 for q, r in assignments if ground_truth[q] == r)
    labels = [class_of[ground_truth[q]] for q, _ in assignments]
    preds = [class_of[r] for _, r in assignments]
    classes = sorted(set(labels))
    per_class = {}
    precisions, recalls = [], []
    for c in classes:
        tp = sum(1 for y, p in zip(labels, preds) if y == c and p == c)
        n_label = sum(1 for y in labels if y == c)
        n_pred = sum(1 for p in preds if p == c)
        prec = tp / n_pred if n_pred else 0.0
        rec = tp / n_label
        per_class[str(c)] = {
            "precision": prec, "recall": rec,
            "support": n_label, "predicted": n_pred,
        }
        precisions.append(prec)
        recalls.append(rec)
    macro_p = float(np.mean(precisions))
    macro_r = float(np.mean(recalls))
    f1 = (2 * macro_p * macro_r / (macro_p + macro_r)
          if macro_p > 0 and macro_r > 0 else 0.0)
    return RetrievalReport(
        accuracy=exact / len(assignments), precision=macro_p,
        recall=macro_r, f1=f1, assignments=assignments,
        n_queries=len(assignments), attribute=attribute,
        per_class=per_class,
    )


def evaluate_split(params, model_config, manifest, split,
                   attribute=DEFAULT_ATTRIBUTE):
    """End-to-end: embed a split, retrieve top-1 per text, score."""
    img, txt = embed_corpus(params, model_config, manifest, split)
    return score_embeddings(img, txt, manifest, attribute)


def score_embeddings(img: EmbeddingBatch, txt: EmbeddingBatch, manifest,
                     attribute=DEFAULT_ATTRIBUTE):
    if attribute not in ATTRIBUTE_DOMAINS:
        raise ConfigError(f"unknown attribute {attribute!r}")
    img.validate()
    txt.validate()
    class_of = {
        r.sample_id: getattr(r.profile, attribute) for r in manifest.records
    }
    missing = [i for i in set(img.ids) | set(txt.ids) if i not in class_of]
    if missing:
        raise DataError(f"embedding ids not in manifest: {sorted(missing)[:5]}")
    assignments = [
        (qid, retrieve_top1(txt.vectors[k], img))
        for k, qid in enumerate(txt.ids)
    ]
    ground_truth = {qid: qid for qid in txt.ids}
    return compute_metrics(assignments, ground_truth, class_of, attribute)


def report_fingerprint(report: RetrievalReport, d_e=None):
    """Stable hash of the evaluation setup (never of file locations), so
    checkpoint-path and embedding-path evaluations of the same model agree."""
    basis = {
        "attribute": report.attribute,
        "n_queries": report.n_queries,
        "d_e": None if d_e is None else int(d_e),
    }
    return hashlib.sha256(
        json.dumps(basis, sort_keys=True).encode()
    ).hexdigest()[:16]


def export_embeddings(path, *batches):
    """Write batches as JSONL rows {"id", "modality", "vec"}, ids sorted
    within each batch, full float precision."""
    with open(path, "w") as fh:
        for batch in batches:
            batch.validate()
            order = np.argsort(np.asarray(batch.ids, dtype=np.int64))
            for i in order:
                row = {
                    "id": int(batch.ids[i]),
                    "modality": batch.modality,
                    "vec": [float(v) for v in batch.vectors[i]],
                }
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def import_embeddings(path, modality=None):
    """Parse one modality from an embedding JSONL file.

    With modality=None the file must contain exactly one modality. Rows are
    re-normalized; deviations beyond 1e-3 log a warning naming the row.
    """
    rows = {m: {} for m in MODALITIES}
    dim = None
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rid = int(obj["id"])
                mod = obj["modality"]
                vec = np.asarray(obj["vec"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed row ({e})") from e
            if mod not in MODALITIES:
                raise DataError(f"{path}:{lineno}: unknown modality {mod!r}")
            if vec.ndim != 1 or vec.size == 0:
                raise DataError(f"{path}:{lineno}: vec must be a flat list")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise DataError(
                    f"{path}:{lineno}: dimension {vec.size} != {dim}"
                )
            if rid in rows[mod]:
                raise DataError(f"{path}:{lineno}: duplicate id {rid}")
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise DataError(f"{path}:{lineno}: zero vector for id {rid}")
            if abs(norm - 1.0) > _RENORM_WARN:
                log.warning(
                    "%s:%d: renormalizing id %d (norm %.6f)",
                    path, lineno, rid, norm,
                )
            rows[mod][rid] = vec / norm
    present = [m for m in MODALITIES if rows[m]]
    if modality is None:
        if len(present) != 1:
            raise DataError(
                f"{path} holds modalities {present}; pass modality= to pick one"
            )
        modality = present[0]
    if not rows[modality]:
        raise DataError(f"{path} has no {modality!r} rows")
    ids = sorted(rows[modality])
    vectors = np.stack([rows[modality][i] for i in ids])
    return EmbeddingBatch(ids, vectors, modality).validate()


def import_embedding_pair(path):
    """Both modalities from one file: (image batch, text batch)."""
    return (import_embeddings(path, "image"), import_embeddings(path, "text"))
