"""Contrastive fine-tuning loop: decoupled-weight-decay adaptive updates,
per-epoch validation with early stopping, best/last checkpointing, resume,
and multi-seed orchestration with mean/std aggregation.

Determinism: every stochastic choice (batch order, patch masks) is derived
functionally from (seed, epoch, step) seed sequences, never from a mutable
RNG carried across epochs, so a resumed run replays the exact stream the
uninterrupted run would have seen. Validation masks depend only on
(seed, batch index), keeping val losses comparable across epochs.
"""

import json
import logging
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import kernels, retrieval
from .corpus import load_split_arrays
from .errors import ConfigError, DataError
from .model import (
    ModelConfig,
    all_finite,
    clone_params,
    embed_batch,
    init_params,
    load_checkpoint,
    objective_forward_backward,
    save_checkpoint,
)
from .model.network import OBJECTIVES

log = logging.getLogger(__name__)

_ORDER_SALT = 211
_MASK_SALT = 223
_VAL_MASK_SALT = 227

BEST_CHECKPOINT = "checkpoint_best.npz"
LAST_CHECKPOINT = "checkpoint_last.npz"
HISTORY_CSV = "history.csv"
HISTORY_COLUMNS = ("epoch", "train_loss", "val_loss", "val_accuracy")


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    # Default sized for minutes-long runs; large jobs want 1e-5-ish.
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    # None disables early stopping entirely (the "infinite patience" case).
    patience: int = 3
    seeds: tuple = (0, 1, 2, 3, 4)
    objective: str = "contrastive_plus_mim"
    weight_mim: float = 1.0
    normalize_mim: bool = False
    # Validation cadence in optimizer steps; 0 means once per epoch.
    eval_every: int = 0
    attribute: str = retrieval.DEFAULT_ATTRIBUTE
    # Step-size multiplier for the temperature scalar. Adam caps per-step
    # movement near lr regardless of gradient size, so a lone scalar that
    # has to travel a few units needs a larger multiplier to get anywhere
    # within a short run.
    lr_scale_tau: float = 1.0

    def validate(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        # lr = 0 is the degenerate zero-step case used by determinism tests
        if self.learning_rate < 0:
            raise ConfigError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.patience is not None and self.patience < 1:
            raise ConfigError(f"patience must be >= 1 (or None), got {self.patience}")
        if self.objective not in OBJECTIVES:
            raise ConfigError(
                f"objective must be one of {OBJECTIVES}, got {self.objective!r}"
            )
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")
        if self.lr_scale_tau < 0:
            raise ConfigError(
                f"lr_scale_tau must be >= 0, got {self.lr_scale_tau}"
            )
        return self

    def to_dict(self):
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "seeds" in known:
            known["seeds"] = tuple(known["seeds"])
        return cls(**known).validate()


@dataclass
class TrainResult:
    seed: int
    history: list
    stopped_early: bool
    stop_epoch: int
    best_epoch: int
    best_val_loss: float
    best_params: dict
    final_params: dict
    aborted: bool = False
    abort_reason: str = ""
    checkpoint_best: str = ""
    checkpoint_last: str = ""


def early_stop_check(val_history, patience):
    """Halt iff the last `patience` values all fail to beat the best value
    seen before them. patience=None never halts."""
    if patience is None:
        return False
    if patience < 1:
        raise ConfigError(f"patience must be >= 1, got {patience}")
    if len(val_history) <= patience:
        return False
    best_before = min(val_history[:-patience])
    return min(val_history[-patience:]) >= best_before


def adamw_step(params, grads, m, v, t, config: TrainConfig):
    """In-place update of exactly the parameters that received gradients."""
    for name in sorted(grads):
        p = params[name]
        if name not in m:
            m[name] = np.zeros_like(p)
            v[name] = np.zeros_like(p)
        g = np.ascontiguousarray(np.asarray(grads[name], dtype=np.float64))
        lr = config.learning_rate
        wd = config.weight_decay
        if name == "log_tau":
            # The temperature is a calibration scalar, not a weight: give it
            # its own step size and keep decay away from it.
            lr *= config.lr_scale_tau
            wd = 0.0
        kernels.adamw_update(
            p.reshape(-1), g.reshape(-1), m[name].reshape(-1),
            v[name].reshape(-1), lr, config.beta1,
            config.beta2, config.eps, wd, t,
        )


def _mask_rng(seed, *path):
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


def _batch_kwargs(data, idx, config: TrainConfig):
    kwargs = {
        "patches": data["patches"][idx],
        "token_lists": [data["token_lists"][i] for i in idx],
        "objective": config.objective,
        "weight_mim": config.weight_mim,
        "normalize_mim": config.normalize_mim,
    }
    if config.objective == "contrastive_plus_mim":
        kwargs["visual_tokens"] = data["visual_tokens"][idx]
    return kwargs


def validation_loss(params, model_config, config, data, seed):
    """Mean objective over the split, fixed batch order and fixed masks."""
    n = len(data["ids"])
    total, seen = 0.0, 0
    for bi, s in enumerate(range(0, n, config.batch_size)):
        idx = np.arange(s, min(s + config.batch_size, n))
        kwargs = _batch_kwargs(data, idx, config)
        metrics, _ = objective_forward_backward(
            params, model_config, rng=_mask_rng(seed, _VAL_MASK_SALT, bi),
            want_grads=False, **kwargs,
        )
        total += metrics["loss"] * len(idx)
        seen += len(idx)
    return total / seen


def top1_accuracy(params, model_config, data, batch_size=256):
    """Within-split text-to-image top-1 accuracy; ties go to the lowest id,
    which is the first index because split ids are ascending."""
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
    img = np.concatenate(img_rows)
    txt = np.concatenate(txt_rows)
    sims = txt @ img.T
    pred = sims.argmax(axis=1)
    return float((pred == np.arange(n)).mean())


def _history_row(epoch, train_metrics, val_loss, val_acc, config):
    row = {
        "epoch": epoch,
        "train_loss": train_metrics["loss"],
        "val_loss": val_loss,
        "val_accuracy": val_acc,
    }
    if config.objective == "contrastive_plus_mim":
        row["train_contrastive"] = train_metrics["contrastive"]
        row["train_mim"] = train_metrics["mim"]
    return row


def write_history_csv(path, history):
    lines = [",".join(HISTORY_COLUMNS)]
    for row in history:
        lines.append(",".join(repr(float(row[c])) for c in HISTORY_COLUMNS))
    Path(path).write_text("\n".join(lines) + "\n")


def read_history_csv(path):
    lines = Path(path).read_text().strip().splitlines()
    if len(lines) < 2:
        raise DataError(f"history file {path} has no rows")
    header = lines[0].split(",")
    return [dict(zip(header, map(float, ln.split(",")))) for ln in lines[1:]]


def finetune(params, manifest, config: TrainConfig, model_config: ModelConfig,
             seed=None, out_dir=None, resume_from=None,
             train_data=None, val_data=None):
    """Train params on the manifest's train split, validating per epoch.

    Checkpoints (when out_dir is given): best-so-far params on every val
    improvement, and a resumable last-state file each evaluation. Aborts
    (rather than raises) on non-finite loss, returning the last good state
    with aborted=True. train_data/val_data accept preloaded split arrays to
    skip disk reads.
    """
    config.validate()
    model_config.validate()
    seed = config.seeds[0] if seed is None else int(seed)
    with_mim = config.objective == "contrastive_plus_mim"
    if train_data is None:
        train_data = load_split_arrays(manifest, model_config, "train", with_mim)
    if val_data is None:
        val_data = load_split_arrays(manifest, model_config, "val", with_mim)
    n_train = len(train_data["ids"])
    steps_per_epoch = math.ceil(n_train / config.batch_size)

    out = None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)

    m, v = {}, {}
    t = 0
    start_epoch = 1
    history = []
    val_losses = []
    best_epoch = 0
    best_val_loss = math.inf

    if resume_from is not None:
        params, ck_config, state, arrays = load_checkpoint(resume_from)
        if ck_config.to_dict() != model_config.to_dict():
            raise ConfigError("checkpoint model config does not match")
        seed = state["seed"]
        t = state["t"]
        start_epoch = state["epoch"] + 1
        history = state["history"]
        val_losses = state["val_losses"]
        best_epoch = state["best_epoch"]
        best_val_loss = state["best_val_loss"]
        m = {k[len("m."):]: a for k, a in arrays.items() if k.startswith("m.")}
        v = {k[len("v."):]: a for k, a in arrays.items() if k.startswith("v.")}
        best_params = {
            k[len("best."):]: a for k, a in arrays.items()
            if k.startswith("best.")
        } or clone_params(params)
    else:
        params = clone_params(params)
        best_params = clone_params(params)

    result = TrainResult(
        seed=seed, history=history, stopped_early=False,
        stop_epoch=start_epoch - 1, best_epoch=best_epoch,
        best_val_loss=best_val_loss, best_params=best_params,
        final_params=params,
    )

    def checkpoint_state(epoch):
        return {
            "seed": seed, "t": t, "epoch": epoch, "history": history,
            "val_losses": val_losses, "best_epoch": result.best_epoch,
            "best_val_loss": result.best_val_loss,
            "train_config": config.to_dict(),
        }

    def save_last(epoch):
        if out is None:
            return
        arrays = {}
        arrays.update({f"m.{k}": a for k, a in m.items()})
        arrays.update({f"v.{k}": a for k, a in v.items()})
        arrays.update({f"best.{k}": a for k, a in result.best_params.items()})
        path = out / LAST_CHECKPOINT
        save_checkpoint(path, params, model_config,
                        state=checkpoint_state(epoch), arrays=arrays)
        result.checkpoint_last = str(path)

    def evaluate(epoch_float, epoch_int, train_metrics):
        val_loss = validation_loss(params, model_config, config, val_data, seed)
        val_acc = top1_accuracy(params, model_config, val_data)
        history.append(_history_row(
            epoch_float, train_metrics, val_loss, val_acc, config
        ))
        val_losses.append(val_loss)
        if val_loss < result.best_val_loss:
            result.best_val_loss = val_loss
            result.best_epoch = epoch_int
            result.best_params = clone_params(params)
            if out is not None:
                path = out / BEST_CHECKPOINT
                save_checkpoint(
                    path, result.best_params, model_config,
                    state={"seed": seed, "epoch": epoch_int,
                           "val_loss": val_loss,
                           "train_config": config.to_dict()},
                )
                result.checkpoint_best = str(path)
        return early_stop_check(val_losses, config.patience)

    halted = False
    for epoch in range(start_epoch, config.epochs + 1):
        order = _mask_rng(seed, epoch, _ORDER_SALT).permutation(n_train)
        sums = {}
        seen = 0

        def running_means():
            return {k: s / seen for k, s in sums.items()}

        for bi, s in enumerate(range(0, n_train, config.batch_size)):
            idx = order[s:s + config.batch_size]
            kwargs = _batch_kwargs(train_data, idx, config)
            metrics, grads = objective_forward_backward(
                params, model_config,
                rng=_mask_rng(seed, epoch, bi, _MASK_SALT), **kwargs,
            )
            if not np.isfinite(metrics["loss"]):
                result.aborted = True
                result.abort_reason = (
                    f"non-finite loss at epoch {epoch} step {bi}"
                )
                result.stop_epoch = epoch
                log.error("%s; stopping with last good checkpoint",
                          result.abort_reason)
                result.final_params = params
                if out is not None:
                    save_last(epoch - 1)
                    write_history_csv(out / HISTORY_CSV, history)
                return result
            t += 1
            adamw_step(params, grads, m, v, t, config)
            for k, value in metrics.items():
                sums[k] = sums.get(k, 0.0) + value * len(idx)
            seen += len(idx)
            if config.eval_every and t % config.eval_every == 0:
                frac = round(epoch - 1 + (bi + 1) / steps_per_epoch, 4)
                if evaluate(frac, epoch, running_means()):
                    halted = True
                    break
        result.stop_epoch = epoch
        if not halted and not config.eval_every:
            halted = evaluate(float(epoch), epoch, running_means())
        save_last(epoch)
        if halted:
            result.stopped_early = True
            break

    result.final_params = params
    if not all_finite(params):
        result.aborted = True
        result.abort_reason = "non-finite parameters after training"
    if out is not None:
        write_history_csv(out / HISTORY_CSV, history)
    return result


def run_seeds(manifest, config: TrainConfig, model_config: ModelConfig,
              out_dir=None):
    """One finetune per seed (independent init and data order), test-split
    retrieval metrics per run, and mean/std aggregation over successes."""
    config.validate()
    model_config.validate()
    with_mim = config.objective == "contrastive_plus_mim"
    train_data = load_split_arrays(manifest, model_config, "train", with_mim)
    val_data = load_split_arrays(manifest, model_config, "val", with_mim)

    runs = []
    metric_names = ("accuracy", "precision", "recall", "f1")
    for seed in config.seeds:
        seed_dir = None if out_dir is None else Path(out_dir) / f"seed_{seed}"
        try:
            params0 = init_params(model_config, seed)
            res = finetune(
                params0, manifest, config, model_config, seed=seed,
                out_dir=seed_dir, train_data=train_data, val_data=val_data,
            )
            if res.aborted:
                raise DataError(res.abort_reason or "training aborted")
            report = retrieval.evaluate_split(
                res.best_params, model_config, manifest, "test",
                config.attribute,
            )
            entry = {
                "seed": seed, "failed": False,
                "stopped_early": res.stopped_early,
                "stop_epoch": res.stop_epoch,
                "best_epoch": res.best_epoch,
                "best_val_loss": res.best_val_loss,
                "history": res.history,
                "metrics": {k: getattr(report, k) for k in metric_names},
            }
            if seed_dir is not None:
                (seed_dir / "report.json").write_text(
                    json.dumps(entry, sort_keys=True, indent=1) + "\n"
                )
        except Exception as e:  # per-seed isolation: mark failed, continue
            log.exception("seed %s failed", seed)
            entry = {"seed": seed, "failed": True, "error": str(e)}
        runs.append(entry)

    ok = [r for r in runs if not r["failed"]]
    aggregate = {"n_runs": len(runs), "n_failed": len(runs) - len(ok)}
    for name in metric_names:
        values = [r["metrics"][name] for r in ok]
        aggregate[name] = {
            "mean": float(np.mean(values)) if values else None,
            "std": float(np.std(values)) if values else None,
        }
    report = {
        "train_config": config.to_dict(),
        "model_config": model_config.to_dict(),
        "runs": runs,
        "aggregate": aggregate,
    }
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "report.json").write_text(
            json.dumps(report, sort_keys=True, indent=1) + "\n"
        )
    return report
