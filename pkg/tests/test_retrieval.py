import logging

import numpy as np
import pytest

from demopair.errors import ConfigError, DataError
from demopair.model import ModelConfig, init_params
from demopair.retrieval import (
    EmbeddingBatch,
    compute_metrics,
    embed_corpus,
    evaluate_split,
    export_embeddings,
    import_embedding_pair,
    import_embeddings,
    report_fingerprint,
    retrieve_top1,
    score_embeddings,
)


def unit_rows(n, d, rng):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def batch(n, d, rng, modality="image", ids=None):
    return EmbeddingBatch(list(range(n)) if ids is None else ids,
                          unit_rows(n, d, rng), modality)


class TestEmbeddingBatch:
    def test_valid_batch_passes(self):
        batch(4, 8, np.random.default_rng(0)).validate()

    def test_duplicate_ids_rejected(self):
        b = batch(3, 8, np.random.default_rng(1), ids=[0, 1, 1])
        with pytest.raises(ConfigError):
            b.validate()

    def test_off_norm_rejected(self):
        b = batch(3, 8, np.random.default_rng(2))
        b.vectors[1] *= 1.5
        with pytest.raises(ConfigError):
            b.validate()

    def test_unknown_modality_rejected(self):
        b = batch(2, 8, np.random.default_rng(3), modality="audio")
        with pytest.raises(ConfigError):
            b.validate()


class TestRetrieveTop1:
    def test_exact_match_wins(self):
        vecs = np.eye(4)
        b = EmbeddingBatch([10, 11, 12, 13], vecs, "image")
        assert retrieve_top1(vecs[2], b) == 12

    def test_tie_takes_lowest_id(self):
        v = unit_rows(1, 8, np.random.default_rng(4))[0]
        vecs = np.stack([v, v, -v])
        b = EmbeddingBatch([7, 3, 9], vecs, "image")
        assert retrieve_top1(v, b) == 3

    def test_matches_brute_force_scan(self):
        rng = np.random.default_rng(5)
        for _ in range(25):
            n = int(rng.integers(1, 64))
            b = batch(n, 16, rng)
            q = unit_rows(1, 16, rng)[0]
            sims = [float(q @ v) for v in b.vectors]
            assert retrieve_top1(q, b) == int(np.argmax(sims))

    def test_empty_batch_rejected(self):
        b = EmbeddingBatch([], np.zeros((0, 8)), "image")
        with pytest.raises(DataError):
            retrieve_top1(np.ones(8), b)


class TestComputeMetrics:
    def test_perfect_assignment(self):
        gt = {i: i for i in range(4)}
        classes = {0: "a", 1: "a", 2: "b", 3: "b"}
        r = compute_metrics([(i, i) for i in range(4)], gt, classes)
        assert (r.accuracy, r.precision, r.recall, r.f1) == (1, 1, 1, 1)

    def test_total_miss(self):
        gt = {0: 0, 1: 1}
        classes = {0: "a", 1: "b"}
        r = compute_metrics([(0, 1), (1, 0)], gt, classes)
        assert r.accuracy == 0.0
        assert r.precision == 0.0
        assert r.f1 == 0.0

    def test_wrong_image_same_class(self):
        # 3 exact hits, one query answered with the other same-class image
        gt = {i: i for i in range(4)}
        classes = {0: "a", 1: "a", 2: "b", 3: "b"}
        r = compute_metrics([(0, 0), (1, 1), (2, 2), (3, 2)], gt, classes)
        assert r.accuracy == 0.75
        assert r.per_class["b"]["recall"] == 1.0
        assert r.precision == 1.0 and r.recall == 1.0

    def test_query_order_invariance(self):
        rng = np.random.default_rng(6)
        gt = {i: i for i in range(8)}
        classes = {i: "xyz"[i % 3] for i in range(8)}
        pairs = [(i, int(rng.integers(0, 8))) for i in range(8)]
        a = compute_metrics(pairs, gt, classes)
        b = compute_metrics(list(reversed(pairs)), gt, classes)
        assert (a.accuracy, a.precision, a.recall, a.f1) == \
            (b.accuracy, b.precision, b.recall, b.f1)

    def test_metrics_stay_in_unit_interval(self):
        rng = np.random.default_rng(7)
        gt = {i: i for i in range(10)}
        classes = {i: "pq"[i % 2] for i in range(10)}
        for _ in range(20):
            pairs = [(i, int(rng.integers(0, 10))) for i in range(10)]
            r = compute_metrics(pairs, gt, classes)
            for val in (r.accuracy, r.precision, r.recall, r.f1):
                assert 0.0 <= val <= 1.0

    def test_missing_ground_truth_rejected(self):
        with pytest.raises(DataError):
            compute_metrics([(5, 0)], {0: 0}, {0: "a", 5: "a"})

    def test_no_assignments_rejected(self):
        with pytest.raises(DataError):
            compute_metrics([], {}, {})


class TestExportImport:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        img = batch(5, 16, rng, "image", ids=[3, 1, 4, 0, 2])
        txt = batch(5, 16, rng, "text", ids=[0, 1, 2, 3, 4])
        path = tmp_path / "emb.jsonl"
        export_embeddings(path, img, txt)
        img2, txt2 = import_embedding_pair(path)
        assert img2.ids == sorted(img.ids)
        order = np.argsort(img.ids)
        assert np.allclose(img2.vectors, img.vectors[order], atol=1e-15)
        assert np.allclose(txt2.vectors, txt.vectors, atol=1e-15)

    def test_renormalizes_with_warning(self, tmp_path, caplog):
        path = tmp_path / "emb.jsonl"
        vec = [2.0] + [0.0] * 7
        path.write_text(
            '{"id": 0, "modality": "image", "vec": %s}\n' % vec
        )
        with caplog.at_level(logging.WARNING):
            b = import_embeddings(path)
        assert "renormalizing" in caplog.text
        assert np.allclose(np.linalg.norm(b.vectors, axis=1), 1.0)

    def test_duplicate_id_names_the_id(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        row = '{"id": 9, "modality": "image", "vec": [1.0, 0.0]}\n'
        path.write_text(row + row)
        with pytest.raises(DataError, match="9"):
            import_embeddings(path)

    def test_dimension_mismatch_rejected(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text(
            '{"id": 0, "modality": "image", "vec": [1.0, 0.0]}\n'
            '{"id": 1, "modality": "image", "vec": [1.0, 0.0, 0.0]}\n'
        )
        with pytest.raises(DataError):
            import_embeddings(path)

    def test_malformed_line_reports_position(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text('{"id": 0, "modality": "image", "vec": [1.0]}\n{oops\n')
        with pytest.raises(DataError, match=":2"):
            import_embeddings(path)

    def test_zero_vector_rejected(self, tmp_path):
        path = tmp_path / "emb.jsonl"
        path.write_text('{"id": 0, "modality": "image", "vec": [0.0, 0.0]}\n')
        with pytest.raises(DataError):
            import_embeddings(path)

    def test_two_modalities_need_explicit_pick(self, tmp_path):
        rng = np.random.default_rng(9)
        path = tmp_path / "emb.jsonl"
        export_embeddings(path, batch(2, 4, rng, "image"),
                          batch(2, 4, rng, "text"))
        with pytest.raises(DataError):
            import_embeddings(path)
        assert import_embeddings(path, "text").modality == "text"


class TestScoring:
    def test_random_baseline_near_chance(self):
        # near-orthogonal random embeddings should sit around 1/n accuracy
        rng = np.random.default_rng(10)
        accs = []
        for _ in range(20):
            img = batch(64, 32, rng, "image")
            txt = batch(64, 32, rng, "text")
            hits = sum(
                retrieve_top1(txt.vectors[k], img) == txt.ids[k]
                for k in range(64)
            )
            accs.append(hits / 64)
        assert float(np.mean(accs)) < 3 / 64

    def test_evaluate_split_runs_end_to_end(self, tiny_manifest):
        mc = ModelConfig()
        r = evaluate_split(init_params(mc, 0), mc, tiny_manifest, "val")
        assert r.n_queries == 6
        assert 0.0 <= r.accuracy <= 1.0
        assert set(r.per_class)

    def test_embed_corpus_returns_unit_rows(self, tiny_manifest):
        mc = ModelConfig()
        img, txt = embed_corpus(init_params(mc, 0), mc, tiny_manifest, "test")
        for b in (img, txt):
            assert np.allclose(np.linalg.norm(b.vectors, axis=1), 1.0,
                               atol=1e-9)
        assert img.ids == txt.ids

    def test_unknown_attribute_rejected(self, tiny_manifest):
        mc = ModelConfig()
        img, txt = embed_corpus(init_params(mc, 0), mc, tiny_manifest, "val")
        with pytest.raises(ConfigError):
            score_embeddings(img, txt, tiny_manifest, attribute="shoe_size")

    def test_ids_must_exist_in_manifest(self, tiny_manifest):
        rng = np.random.default_rng(11)
        img = batch(3, 32, rng, "image", ids=[900, 901, 902])
        txt = batch(3, 32, rng, "text", ids=[900, 901, 902])
        with pytest.raises(DataError):
            score_embeddings(img, txt, tiny_manifest)

    def test_fingerprint_tracks_setup_not_location(self, tiny_manifest):
        mc = ModelConfig()
        a = evaluate_split(init_params(mc, 0), mc, tiny_manifest, "val")
        b = evaluate_split(init_params(mc, 1), mc, tiny_manifest, "val")
        assert report_fingerprint(a, mc.d_e) == report_fingerprint(b, mc.d_e)
        assert report_fingerprint(a, mc.d_e) != report_fingerprint(a, 16)
