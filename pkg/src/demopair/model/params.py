"""Parameter initialization and checkpoint serialization.

Parameters live in a flat dict keyed by dotted names (e.g.
"img.blk0.attn.wq"), all float64. Checkpoints are zip archives holding one
.npy entry per tensor plus config/state JSON; entries are stored
uncompressed with a fixed timestamp and sorted names so identical contents
produce identical bytes.
"""

import io
import json
import zipfile

import numpy as np

from ..errors import DataError
from .config import ModelConfig

INIT_STD = 0.02
# Value/output projections start wider than query/key. At a uniform 0.02 the
# attention branch contributes almost nothing to the pooled summary token,
# so image embeddings begin nearly identical and the contrastive loss sits
# next to its uniform-similarity fixed point; 2.5x is enough for patch
# content to register at init.
VALUE_OUT_INIT_SCALE = 2.5
# Typical background pixel of the rendered inputs. Raw patches share one
# dominant flat-background component; subtracting it at init keeps starting
# patch features spread instead of bunched.
INPUT_MEAN_RGB = (0.82, 0.84, 0.86)
_INIT_SALT = 101


def _block_params(params, pfx, d, mlp_ratio, rng):
    params[f"{pfx}.ln1.g"] = np.ones(d)
    params[f"{pfx}.ln1.b"] = np.zeros(d)
    for name in ("wq", "wk", "wv", "wo"):
        w = rng.normal(0.0, INIT_STD, (d, d))
        if name in ("wv", "wo"):
            w *= VALUE_OUT_INIT_SCALE
        params[f"{pfx}.attn.{name}"] = w
    for name in ("bq", "bk", "bv", "bo"):
        params[f"{pfx}.attn.{name}"] = np.zeros(d)
    params[f"{pfx}.ln2.g"] = np.ones(d)
    params[f"{pfx}.ln2.b"] = np.zeros(d)
    params[f"{pfx}.mlp.w1"] = rng.normal(0.0, INIT_STD, (d, mlp_ratio * d))
    params[f"{pfx}.mlp.b1"] = np.zeros(mlp_ratio * d)
    params[f"{pfx}.mlp.w2"] = rng.normal(0.0, INIT_STD, (mlp_ratio * d, d))
    params[f"{pfx}.mlp.b2"] = np.zeros(d)


def _stack_params(params, pfx, n_layers, d, mlp_ratio, rng):
    for i in range(n_layers):
        _block_params(params, f"{pfx}.blk{i}", d, mlp_ratio, rng)
    params[f"{pfx}.lnf.g"] = np.ones(d)
    params[f"{pfx}.lnf.b"] = np.zeros(d)


def init_params(config: ModelConfig, seed: int):
    """Fresh parameters; fully determined by (config, seed)."""
    config.validate()
    rng = np.random.default_rng(np.random.SeedSequence([seed, _INIT_SALT]))
    d, n = config.d_h, config.n_patches
    params = {}

    params["img.patch_w"] = rng.normal(0.0, INIT_STD, (config.d_I, d))
    # start patch features as W @ (pixels - mean) rather than W @ pixels
    mean_px = np.tile(np.array(INPUT_MEAN_RGB), config.d_I // 3)
    params["img.patch_b"] = -(mean_px @ params["img.patch_w"])
    params["img.cls"] = rng.normal(0.0, INIT_STD, d)
    params["img.pos"] = rng.normal(0.0, INIT_STD, (n + 1, d))
    # learned mask token lives in patch-pixel space, near mid-gray
    params["img.mask_patch"] = 0.5 + rng.normal(0.0, INIT_STD, config.d_I)
    _stack_params(params, "img", config.n_layers_img, d, config.mlp_ratio, rng)

    params["txt.tok"] = rng.normal(0.0, INIT_STD, (config.vocab_text, d))
    params["txt.pos"] = rng.normal(0.0, INIT_STD, (config.max_text_len, d))
    _stack_params(params, "txt", config.n_layers_txt, d, config.mlp_ratio, rng)

    if config.proj_hidden > 0:
        params["proj.w1"] = rng.normal(0.0, INIT_STD, (d, config.proj_hidden))
        params["proj.b1"] = np.zeros(config.proj_hidden)
        params["proj.w2"] = rng.normal(
            0.0, INIT_STD, (config.proj_hidden, config.d_e)
        )
    else:
        params["proj.w"] = rng.normal(0.0, INIT_STD, (d, config.d_e))

    _stack_params(params, "mim", config.n_layers_mim, d, config.mlp_ratio, rng)
    params["mim.cls_w"] = rng.normal(0.0, INIT_STD, (d, config.V))
    params["mim.cls_b"] = np.zeros(config.V)

    params["log_tau"] = np.array(np.log(config.tau_init))
    return params


def zeros_like_params(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def clone_params(params):
    return {k: v.copy() for k, v in params.items()}


def all_finite(params):
    return all(np.isfinite(v).all() for v in params.values())


def _write_entry(zf, name, payload: bytes):
    info = zipfile.ZipInfo(name, date_time=(1980, 1, 1, 0, 0, 0))
    info.compress_type = zipfile.ZIP_STORED
    info.external_attr = 0o600 << 16
    zf.writestr(info, payload)


def _array_bytes(arr):
    buf = io.BytesIO()
    # asarray(order="C"), not ascontiguousarray: the latter promotes 0-d to 1-d
    np.lib.format.write_array(buf, np.asarray(arr, order="C"), version=(1, 0))
    return buf.getvalue()


def save_checkpoint(path, params, config: ModelConfig, state=None,
                    arrays=None):
    """Write params + config (+ JSON-able state, + extra arrays) to path.

    Byte-deterministic: sorted entries, fixed timestamps, no compression.
    """
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "config.json",
                     json.dumps(config.to_dict(), sort_keys=True).encode())
        _write_entry(zf, "state.json",
                     json.dumps(state or {}, sort_keys=True).encode())
        for name in sorted(params):
            _write_entry(zf, f"params/{name}.npy", _array_bytes(params[name]))
        for name in sorted(arrays or {}):
            _write_entry(zf, f"arrays/{name}.npy", _array_bytes(arrays[name]))


def load_checkpoint(path):
    """Inverse of save_checkpoint: (params, config, state, arrays)."""
    params, arrays = {}, {}
    try:
        with zipfile.ZipFile(path) as zf:
            names = set(zf.namelist())
            if "config.json" not in names:
                raise DataError(f"{path} is not a model checkpoint")
            config = ModelConfig.from_dict(
                json.loads(zf.read("config.json").decode())
            )
            state = json.loads(zf.read("state.json").decode())
            for name in names:
                if not name.endswith(".npy"):
                    continue
                arr = np.lib.format.read_array(
                    io.BytesIO(zf.read(name)), allow_pickle=False
                )
                if name.startswith("params/"):
                    params[name[len("params/"):-len(".npy")]] = arr
                elif name.startswith("arrays/"):
                    arrays[name[len("arrays/"):-len(".npy")]] = arr
    except zipfile.BadZipFile as e:
        raise DataError(f"unreadable checkpoint {path}: {e}") from e
    return params, config, state, arrays
