import math

import numpy as np
import pytest

from demopair.errors import ConfigError
from demopair.model import EOS_ID, ModelConfig, clone_params, init_params
from demopair.model.params import load_checkpoint
from demopair.trainer import (
    BEST_CHECKPOINT,
    HISTORY_CSV,
    LAST_CHECKPOINT,
    TrainConfig,
    adamw_step,
    early_stop_check,
    finetune,
    read_history_csv,
    run_seeds,
    top1_accuracy,
    validation_loss,
    write_history_csv,
)

TINY = ModelConfig(image_size=8, patch_size=4)
TINY_TAU = ModelConfig(image_size=8, patch_size=4, tau_learnable=True)


def fake_split(config, n, seed):
    """In-memory split arrays, no dataset on disk."""
    rng = np.random.default_rng(seed)
    return {
        "ids": list(range(n)),
        "patches": rng.uniform(0, 1, (n, config.n_patches, config.d_I)),
        "token_lists": [
            list(rng.integers(2, config.vocab_text, size=rng.integers(4, 10)))
            + [EOS_ID]
            for _ in range(n)
        ],
        "visual_tokens": rng.integers(0, config.V, (n, config.n_patches)),
    }


TRAIN = fake_split(TINY, 12, 0)
VAL = fake_split(TINY, 6, 1)


def quick_config(**kw):
    base = dict(epochs=3, batch_size=4, learning_rate=1e-3, weight_decay=0.0,
                patience=None, seeds=(0,))
    base.update(kw)
    return TrainConfig(**base)


def params_equal(a, b):
    return sorted(a) == sorted(b) and all(np.array_equal(a[k], b[k])
                                          for k in a)


class TestTrainConfig:
    def test_dict_round_trip(self):
        c = TrainConfig(epochs=7, seeds=(3, 4), patience=None,
                        lr_scale_tau=2.0)
        d = c.to_dict()
        assert d["seeds"] == [3, 4]
        assert TrainConfig.from_dict(d) == c

    def test_rejects_bad_values(self):
        for kw in ({"epochs": 0}, {"batch_size": 0}, {"learning_rate": -1.0},
                   {"patience": 0}, {"objective": "triplet"}, {"seeds": ()},
                   {"eval_every": -1}, {"lr_scale_tau": -0.1}):
            with pytest.raises(ConfigError):
                TrainConfig(**kw).validate()

    def test_zero_lr_allowed(self):
        TrainConfig(learning_rate=0.0).validate()


class TestEarlyStopCheck:
    def test_still_improving(self):
        assert early_stop_check([3, 2, 1], 3) is False

    def test_three_flat_evaluations_halt(self):
        assert early_stop_check([3, 2, 2.5, 2.6, 2.7], 3) is True

    def test_late_improvement_resets(self):
        assert early_stop_check([3, 2, 2.5, 1.9], 3) is False

    def test_short_history_never_halts(self):
        assert early_stop_check([5.0], 3) is False
        assert early_stop_check([], 3) is False

    def test_none_patience_never_halts(self):
        assert early_stop_check([3, 3, 3, 3, 3, 3], None) is False

    def test_equal_value_counts_as_no_improvement(self):
        assert early_stop_check([2, 2, 2], 2) is True

    def test_bad_patience_rejected(self):
        with pytest.raises(ConfigError):
            early_stop_check([1, 2], 0)


class TestAdamwStep:
    def test_updates_only_named_params(self):
        p = init_params(TINY, 0)
        before = clone_params(p)
        grads = {"img.cls": np.ones_like(p["img.cls"])}
        adamw_step(p, grads, {}, {}, 1, quick_config())
        assert not np.array_equal(p["img.cls"], before["img.cls"])
        assert np.array_equal(p["txt.tok"], before["txt.tok"])

    def test_moments_created_lazily(self):
        p = init_params(TINY, 0)
        m, v = {}, {}
        adamw_step(p, {"img.cls": np.ones_like(p["img.cls"])}, m, v, 1,
                   quick_config())
        assert set(m) == {"img.cls"} and set(v) == {"img.cls"}

    def test_zero_scale_freezes_temperature(self):
        # decay must not touch the temperature either
        p = init_params(TINY_TAU, 0)
        lt_before = p["log_tau"].copy()
        grads = {"log_tau": np.array(2.0),
                 "img.cls": np.ones_like(p["img.cls"])}
        cfg = quick_config(weight_decay=0.1, lr_scale_tau=0.0)
        adamw_step(p, grads, {}, {}, 1, cfg)
        assert np.array_equal(p["log_tau"], lt_before)
        assert not np.array_equal(p["img.cls"],
                                  init_params(TINY_TAU, 0)["img.cls"])

    def test_scale_multiplies_temperature_step(self):
        moved = []
        for scale in (1.0, 25.0):
            p = init_params(TINY_TAU, 0)
            lt0 = float(p["log_tau"])
            grads = {"log_tau": np.array(0.5)}
            adamw_step(p, grads, {}, {}, 1,
                       quick_config(lr_scale_tau=scale))
            moved.append(abs(float(p["log_tau"]) - lt0))
        assert moved[1] == pytest.approx(25.0 * moved[0])


class TestFinetune:
    def test_zero_lr_is_identity(self):
        # full batch and no mask sampling make the epoch loss order-free
        p = init_params(TINY, 0)
        cfg = quick_config(learning_rate=0.0, batch_size=12,
                           objective="contrastive_only")
        r = finetune(p, None, cfg, TINY, train_data=TRAIN, val_data=VAL)
        assert params_equal(r.final_params, p)
        losses = [h["train_loss"] for h in r.history]
        assert max(losses) - min(losses) < 1e-12

    def test_zero_lr_masked_objective_flat_validation(self):
        # validation masks are fixed per batch, so val loss is flat even
        # though train masks are redrawn each epoch
        p = init_params(TINY, 0)
        r = finetune(p, None, quick_config(learning_rate=0.0), TINY,
                     train_data=TRAIN, val_data=VAL)
        assert params_equal(r.final_params, p)
        vals = [h["val_loss"] for h in r.history]
        assert max(vals) - min(vals) < 1e-12

    def test_loss_descends(self):
        r = finetune(init_params(TINY, 0), None, quick_config(epochs=4),
                     TINY, train_data=TRAIN, val_data=VAL)
        assert r.history[-1]["train_loss"] < r.history[0]["train_loss"]
        assert not r.aborted and not r.stopped_early
        assert r.stop_epoch == 4

    def test_bit_identical_reruns(self):
        runs = [
            finetune(init_params(TINY, 0), None, quick_config(), TINY,
                     train_data=TRAIN, val_data=VAL)
            for _ in range(2)
        ]
        assert runs[0].history == runs[1].history
        assert params_equal(runs[0].final_params, runs[1].final_params)
        assert params_equal(runs[0].best_params, runs[1].best_params)

    def test_seed_changes_course(self):
        a = finetune(init_params(TINY, 0), None, quick_config(), TINY,
                     seed=0, train_data=TRAIN, val_data=VAL)
        b = finetune(init_params(TINY, 0), None, quick_config(), TINY,
                     seed=1, train_data=TRAIN, val_data=VAL)
        assert a.history != b.history

    def test_resume_matches_uninterrupted(self, tmp_path):
        p = init_params(TINY, 3)
        straight = finetune(p, None, quick_config(epochs=4), TINY,
                            train_data=TRAIN, val_data=VAL)
        half_dir = tmp_path / "half"
        finetune(p, None, quick_config(epochs=2), TINY, out_dir=half_dir,
                 train_data=TRAIN, val_data=VAL)
        resumed = finetune(None, None, quick_config(epochs=4), TINY,
                           resume_from=half_dir / LAST_CHECKPOINT,
                           train_data=TRAIN, val_data=VAL)
        assert params_equal(resumed.final_params, straight.final_params)
        assert resumed.history == straight.history
        assert resumed.best_val_loss == straight.best_val_loss

    def test_best_checkpoint_reproduces_recorded_loss(self, tmp_path):
        cfg = quick_config(epochs=4)
        r = finetune(init_params(TINY, 0), None, cfg, TINY,
                     out_dir=tmp_path, train_data=TRAIN, val_data=VAL)
        loaded, _, state, _ = load_checkpoint(tmp_path / BEST_CHECKPOINT)
        recomputed = validation_loss(loaded, TINY, cfg, VAL, seed=0)
        assert recomputed == pytest.approx(r.best_val_loss, abs=1e-9)
        assert state["epoch"] == r.best_epoch

    def test_history_csv_written(self, tmp_path):
        r = finetune(init_params(TINY, 0), None, quick_config(), TINY,
                     out_dir=tmp_path, train_data=TRAIN, val_data=VAL)
        rows = read_history_csv(tmp_path / HISTORY_CSV)
        assert len(rows) == len(r.history)
        assert rows[0]["train_loss"] == pytest.approx(
            r.history[0]["train_loss"])

    def test_early_stop_on_plateau(self):
        # zero lr never improves after the first eval, so patience bites
        cfg = quick_config(epochs=10, learning_rate=0.0, patience=2)
        r = finetune(init_params(TINY, 0), None, cfg, TINY,
                     train_data=TRAIN, val_data=VAL)
        assert r.stopped_early
        assert r.stop_epoch == 3  # best at 1, then two flat evaluations
        assert r.best_epoch == 1

    def test_contrastive_only_leaves_masked_branch_alone(self):
        p = init_params(TINY, 0)
        r = finetune(p, None, quick_config(objective="contrastive_only"),
                     TINY, train_data=TRAIN, val_data=VAL)
        untouched = [k for k in p
                     if k.startswith("mim.") or k == "img.mask_patch"]
        assert untouched
        for k in untouched:
            assert np.array_equal(r.final_params[k], p[k]), k
        assert "train_mim" not in r.history[0]

    def test_mid_epoch_evaluations(self):
        cfg = quick_config(epochs=2, eval_every=1)
        r = finetune(init_params(TINY, 0), None, cfg, TINY,
                     train_data=TRAIN, val_data=VAL)
        # 3 steps per epoch at batch 4 over 12 samples
        assert len(r.history) > 2
        assert any(h["epoch"] != int(h["epoch"]) for h in r.history)

    def test_nan_loss_aborts_with_last_state(self, tmp_path):
        cfg = quick_config(weight_mim=float("nan"))
        r = finetune(init_params(TINY, 0), None, cfg, TINY,
                     out_dir=tmp_path, train_data=TRAIN, val_data=VAL)
        assert r.aborted
        assert "non-finite" in r.abort_reason
        assert (tmp_path / LAST_CHECKPOINT).exists()


class TestValidationLoss:
    def test_deterministic(self):
        p = init_params(TINY, 0)
        cfg = quick_config()
        a = validation_loss(p, TINY, cfg, VAL, seed=0)
        b = validation_loss(p, TINY, cfg, VAL, seed=0)
        assert a == b

    def test_batch_size_invariant(self):
        # sample-weighted mean over fixed masks depends on the data only
        p = init_params(TINY, 0)
        a = validation_loss(p, TINY, quick_config(batch_size=6,
                                                  objective="contrastive_only"),
                            VAL, seed=0)
        b = validation_loss(p, TINY, quick_config(batch_size=6,
                                                  objective="contrastive_only"),
                            VAL, seed=5)
        assert a == b  # contrastive path draws nothing from the rng


class TestTop1Accuracy:
    def test_range_and_determinism(self):
        p = init_params(TINY, 0)
        acc = top1_accuracy(p, TINY, VAL)
        assert 0.0 <= acc <= 1.0
        assert acc == top1_accuracy(p, TINY, VAL)

    def test_chunking_does_not_change_result(self):
        p = init_params(TINY, 0)
        assert top1_accuracy(p, TINY, VAL, batch_size=2) == \
            top1_accuracy(p, TINY, VAL)


class TestHistoryCsv:
    def test_round_trip(self, tmp_path):
        history = [
            {"epoch": 1, "train_loss": 3.5, "val_loss": 3.25,
             "val_accuracy": 0.125},
            {"epoch": 2, "train_loss": 3.0009765625, "val_loss": 2.875,
             "val_accuracy": 0.25},
        ]
        path = tmp_path / "h.csv"
        write_history_csv(path, history)
        back = read_history_csv(path)
        assert back == [{k: float(v) for k, v in row.items()}
                        for row in history]

    def test_empty_file_rejected(self, tmp_path):
        path = tmp_path / "h.csv"
        path.write_text("epoch,train_loss,val_loss,val_accuracy\n")
        with pytest.raises(Exception):
            read_history_csv(path)


class TestRunSeeds:
    def test_artifacts_and_aggregate(self, tmp_path, tiny_manifest):
        cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-4,
                          patience=None, seeds=(0, 1))
        report = run_seeds(tiny_manifest, cfg, ModelConfig(),
                           out_dir=tmp_path)
        assert (tmp_path / "report.json").exists()
        for s in (0, 1):
            seed_dir = tmp_path / f"seed_{s}"
            assert (seed_dir / "report.json").exists()
            assert (seed_dir / HISTORY_CSV).exists()
            assert (seed_dir / BEST_CHECKPOINT).exists()
        agg = report["aggregate"]
        assert agg["n_runs"] == 2 and agg["n_failed"] == 0
        for metric in ("accuracy", "precision", "recall", "f1"):
            assert 0.0 <= agg[metric]["mean"] <= 1.0
            assert agg[metric]["std"] >= 0.0

    def test_failed_seed_is_marked(self, tmp_path, tiny_manifest):
        cfg = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-4,
                          patience=None, seeds=(0, 1),
                          weight_mim=float("nan"))
        report = run_seeds(tiny_manifest, cfg, ModelConfig(),
                           out_dir=tmp_path)
        assert report["aggregate"]["n_failed"] == 2
        assert all(r.get("failed") for r in report["runs"])
