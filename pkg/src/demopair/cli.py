"""Command-line surface: dataset generation, training, retrieval evaluation,
loss plotting, and the palette-shift experiment.

Every command writes the fully resolved configuration it ran with to
config.lock.json in its output directory, and every command accepts
--config pointing at such a file (or any JSON with the same keys); explicit
flags win over file values. Exit codes: 0 success, 2 usage or configuration
error, 1 runtime failure.
"""

import argparse
import json
import logging
import sys
from pathlib import Path

from . import retrieval
from .errors import ConfigError, DataError
from .experiments import palette_shift_comparison
from .model import ModelConfig, load_checkpoint
from .model.network import OBJECTIVES
from .synthgen import GenConfig, build_dataset, load_manifest
from .trainer import (
    HISTORY_CSV,
    TrainConfig,
    read_history_csv,
    run_seeds,
)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")
LOCK_NAME = "config.lock.json"


def write_lock(out_dir, lock):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / LOCK_NAME).write_text(json.dumps(lock, sort_keys=True, indent=1) + "\n")


def _load_config_file(path):
    if path is None:
        return {}
    try:
        cfg = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return cfg


def _merge(file_cfg, args, names):
    """File values under their flag names, overridden by flags actually given."""
    merged = {k: file_cfg[k] for k in names if k in file_cfg}
    for k in names:
        v = getattr(args, k, None)
        if v is not None:
            merged[k] = v
    return merged


def _parse_seeds(text):
    try:
        return tuple(int(s) for s in str(text).split(",") if s.strip() != "")
    except ValueError:
        raise ConfigError(f"--seeds expects comma-separated integers, got {text!r}")


def cmd_gen_data(args):
    file_cfg = _load_config_file(args.config)
    merged = _merge(file_cfg, args,
                    ("n", "seed", "out", "image_size", "patch_size", "palette"))
    merged.setdefault("seed", 7)
    merged.setdefault("image_size", 32)
    merged.setdefault("patch_size", 16)
    merged.setdefault("palette", "A")
    if "n" not in merged:
        raise ConfigError("--n is required")
    if "out" not in merged:
        raise ConfigError("--out is required")
    gen = GenConfig(n=int(merged["n"]), seed=int(merged["seed"]),
                    out_dir=str(merged["out"]),
                    image_size=int(merged["image_size"]),
                    patch_size=int(merged["patch_size"]),
                    palette=str(merged["palette"]))
    gen.validate()
    write_lock(merged["out"], {"command": "gen-data", **merged})
    manifest = build_dataset(gen)
    print(f"dataset written to {merged['out']}")
    print(f"samples {len(manifest.records)}  splits "
          + " ".join(f"{s}:{c}" for s, c in sorted(manifest.split_counts.items())))
    print(f"image_size {manifest.image_size}  patch_size {manifest.patch_size}"
          f"  palette {manifest.palette}")
    return 0


def cmd_train(args):
    file_cfg = _load_config_file(args.config)
    top = _merge(file_cfg, args, ("data", "out"))
    if "data" not in top:
        raise ConfigError("--data is required")
    if "out" not in top:
        raise ConfigError("--out is required")

    train_dict = dict(file_cfg.get("train", {}))
    for flag, key in (("objective", "objective"), ("epochs", "epochs"),
                      ("batch_size", "batch_size"), ("lr", "learning_rate"),
                      ("eval_every", "eval_every"), ("attribute", "attribute")):
        v = getattr(args, flag, None)
        if v is not None:
            train_dict[key] = v
    if args.seeds is not None:
        train_dict["seeds"] = _parse_seeds(args.seeds)
    if args.patience is not None:
        train_dict["patience"] = (
            None if args.patience.lower() == "none" else int(args.patience)
        )
    if train_dict.get("objective") not in (None, *OBJECTIVES):
        raise ConfigError(
            f"objective must be one of {OBJECTIVES}, got {train_dict['objective']!r}"
        )
    tc = TrainConfig.from_dict(train_dict)

    manifest = load_manifest(top["data"])
    model_dict = {"image_size": manifest.image_size,
                  "patch_size": manifest.patch_size}
    model_dict.update(file_cfg.get("model", {}))
    mc = ModelConfig.from_dict(model_dict)

    write_lock(top["out"], {"command": "train", "data": str(top["data"]),
                            "out": str(top["out"]), "train": tc.to_dict(),
                            "model": mc.to_dict()})
    report = run_seeds(manifest, tc, mc, out_dir=top["out"])
    agg = report["aggregate"]
    for run in report["runs"]:
        if run["failed"]:
            print(f"seed {run['seed']}: FAILED ({run['error']})")
        else:
            metrics = run["metrics"]
            print(f"seed {run['seed']}: accuracy {metrics['accuracy']:.4f}"
                  f"  best_epoch {run['best_epoch']}"
                  f"  stopped_early {run['stopped_early']}")
    if agg["n_failed"] == agg["n_runs"]:
        print("all seeds failed", file=sys.stderr)
        return 1
    for name in ("accuracy", "precision", "recall", "f1"):
        stats = agg[name]
        print(f"test {name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    print(f"report written to {Path(top['out']) / 'report.json'}")
    return 0


def cmd_eval(args):
    file_cfg = _load_config_file(args.config)
    merged = _merge(file_cfg, args,
                    ("data", "split", "checkpoint", "embeddings", "report",
                     "attribute", "dump_embeddings"))
    merged.setdefault("split", "test")
    merged.setdefault("attribute", retrieval.DEFAULT_ATTRIBUTE)
    if "data" not in merged:
        raise ConfigError("--data is required")
    if merged["split"] not in SPLITS:
        raise ConfigError(f"--split must be one of {SPLITS}, got {merged['split']!r}")
    have_ck = bool(merged.get("checkpoint"))
    have_emb = bool(merged.get("embeddings"))
    if have_ck == have_emb:
        raise ConfigError("exactly one of --checkpoint or --embeddings is required")

    manifest = load_manifest(merged["data"])
    if have_ck:
        params, mc, _, _ = load_checkpoint(merged["checkpoint"])
        img, txt = retrieval.embed_corpus(params, mc, manifest, merged["split"])
        d_e = mc.d_e
        if merged.get("dump_embeddings"):
            dump = Path(merged["dump_embeddings"])
            dump.parent.mkdir(parents=True, exist_ok=True)
            retrieval.export_embeddings(dump, img, txt)
            print(f"embeddings written to {dump}")
    else:
        img, txt = retrieval.import_embedding_pair(merged["embeddings"])
        d_e = int(img.vectors.shape[1])
    report = retrieval.score_embeddings(img, txt, manifest, merged["attribute"])

    source = merged["checkpoint"] if have_ck else merged["embeddings"]
    report_path = merged.get("report") or str(
        Path(source).parent / f"report_{merged['split']}.json"
    )
    payload = dict(report.to_dict(),
                   fingerprint=retrieval.report_fingerprint(report, d_e))
    Path(report_path).parent.mkdir(parents=True, exist_ok=True)
    Path(report_path).write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    write_lock(Path(report_path).parent, {"command": "eval", **merged,
                                          "report": str(report_path)})
    for name in ("accuracy", "precision", "recall", "f1"):
        print(f"{name}: {getattr(report, name):.4f}")
    return 0


def _history_files(run_dir):
    run = Path(run_dir)
    if (run / HISTORY_CSV).exists():
        return [("loss", run / HISTORY_CSV)]
    found = sorted(run.glob(f"seed_*/{HISTORY_CSV}"))
    return [(p.parent.name, p) for p in found]


def cmd_plot_loss(args):
    file_cfg = _load_config_file(args.config)
    merged = _merge(file_cfg, args, ("run_dir", "out"))
    if "run_dir" not in merged:
        raise ConfigError("--run-dir is required")
    runs = _history_files(merged["run_dir"])
    if not runs:
        raise ConfigError(f"no {HISTORY_CSV} under {merged['run_dir']}")
    out = Path(merged.get("out") or merged["run_dir"])
    out.mkdir(parents=True, exist_ok=True)

    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    written = []
    for name, csv_path in runs:
        history = read_history_csv(csv_path)
        if not history:
            raise ConfigError(f"{csv_path} holds no epochs")
        epochs = [row["epoch"] for row in history]
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(epochs, [row["train_loss"] for row in history],
                marker="o", label="train loss")
        ax.plot(epochs, [row["val_loss"] for row in history],
                marker="s", label="val loss")
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_title(name)
        ax.legend()
        fig.tight_layout()
        path = out / f"{name}.png"
        fig.savefig(path)
        plt.close(fig)
        written.append(str(path))
        print(f"plot written to {path}")
    write_lock(out, {"command": "plot-loss",
                     "run_dir": str(merged["run_dir"]), "out": str(out)})
    return 0


def cmd_palette_shift(args):
    file_cfg = _load_config_file(args.config)
    merged = _merge(file_cfg, args, ("n", "seed", "seeds", "epochs", "out"))
    merged.setdefault("n", 240)
    merged.setdefault("seed", 7)
    merged.setdefault("seeds", "0,1,2,3,4")
    merged.setdefault("epochs", 8)
    if "out" not in merged:
        raise ConfigError("--out is required")
    seeds = _parse_seeds(merged["seeds"])
    write_lock(merged["out"], {"command": "palette-shift", **merged,
                               "seeds": ",".join(map(str, seeds))})
    report = palette_shift_comparison(
        merged["out"], n=int(merged["n"]), gen_seed=int(merged["seed"]),
        seeds=seeds, epochs=int(merged["epochs"]),
    )
    for objective, stats in report["objectives"].items():
        print(f"{objective}: shifted test accuracy "
              f"{stats['mean']:.4f} +/- {stats['std']:.4f}")
    print(f"gap (mim - contrastive): {report['gap_mim_minus_contrastive']:+.4f}"
          f"  higher: {report['higher_shifted_accuracy']}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="demopair",
        description="Synthetic paired-avatar retrieval: data, training, eval.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a paired image-text dataset")
    p.add_argument("--config", help="JSON config or a prior config.lock.json")
    p.add_argument("--n", type=int, help="total number of samples")
    p.add_argument("--seed", type=int, help="generation seed")
    p.add_argument("--out", help="output dataset directory")
    p.add_argument("--image-size", dest="image_size", type=int)
    p.add_argument("--patch", dest="patch_size", type=int,
                   help="patch edge length in pixels")
    p.add_argument("--palette", choices=("A", "B"))
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="fine-tune over one or more seeds")
    p.add_argument("--config", help="JSON config or a prior config.lock.json")
    p.add_argument("--data", help="dataset directory from gen-data")
    p.add_argument("--out", help="run output directory")
    p.add_argument("--objective", choices=OBJECTIVES)
    p.add_argument("--seeds", help="comma-separated seeds, e.g. 0,1,2")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--patience", help="integer or 'none' to disable")
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--attribute", help="profile attribute for macro metrics")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="retrieval metrics from a checkpoint or "
                                    "an embeddings file")
    p.add_argument("--config", help="JSON config or a prior config.lock.json")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--split", choices=SPLITS)
    p.add_argument("--checkpoint", help="model checkpoint path")
    p.add_argument("--embeddings", help="embeddings JSONL path")
    p.add_argument("--report", help="output report JSON path")
    p.add_argument("--attribute", help="profile attribute for macro metrics")
    p.add_argument("--dump-embeddings", dest="dump_embeddings",
                   help="also export the computed embeddings to this JSONL")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot-loss", help="plot train/val loss curves")
    p.add_argument("--config", help="JSON config or a prior config.lock.json")
    p.add_argument("--run-dir", dest="run_dir",
                   help="run directory holding history CSVs")
    p.add_argument("--out", help="output directory for PNGs")
    p.set_defaults(func=cmd_plot_loss)

    p = sub.add_parser("palette-shift",
                       help="cross-palette objective comparison experiment")
    p.add_argument("--config", help="JSON config or a prior config.lock.json")
    p.add_argument("--n", type=int, help="samples per dataset")
    p.add_argument("--seed", type=int, help="dataset generation seed")
    p.add_argument("--seeds", help="comma-separated training seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="experiment output directory")
    p.set_defaults(func=cmd_palette_shift)

    return parser


def main(argv=None):
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failures map to exit 1, per contract
        log.debug("unhandled failure", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
