"""Dual-encoder network: image/text encoding, shared projection to the
embedding space, the masked-patch decoder, and the joint objective's full
forward/backward pass.

Everything operates on the flat parameter dict from params.init_params.
Forward functions return caches; *_bwd functions accumulate parameter
gradients into a dict and return input gradients. The image encoder is
shared between the contrastive branch (clean patches) and the masked
branch, so its gradients sum across the two passes.
"""

import logging

import numpy as np

from .. import kernels, losses
from ..errors import ConfigError, DataError
from . import layers, text
from .config import ModelConfig
from .patches import mask_count

log = logging.getLogger(__name__)

OBJECTIVES = ("contrastive_only", "contrastive_plus_mim")


# ---------------------------------------------------------------- encoders

def encode_image(params, config: ModelConfig, patches):
    """(B, N, d_I) patch rows -> (B, N+1, d_h) features, cls prepended."""
    patches = np.asarray(patches, dtype=np.float64)
    if patches.ndim == 2:
        patches = patches[None]
    B, n, d = patches.shape
    if n != config.n_patches or d != config.d_I:
        raise ConfigError(
            f"patch sequence {patches.shape[1:]} does not match the "
            f"configured grid ({config.n_patches}, {config.d_I})"
        )
    x = layers.linear_fwd(patches, params["img.patch_w"], params["img.patch_b"])
    cls = np.broadcast_to(params["img.cls"], (B, 1, config.d_h))
    x = np.concatenate([cls, x], axis=1) + params["img.pos"]
    feats, c_stack = layers.stack_fwd(
        x, params, "img", config.n_layers_img, config.n_heads
    )
    return feats, (patches, c_stack)


def encode_image_bwd(dfeats, params, config, cache, grads):
    """Returns gradient wrt the input patch rows."""
    patches, c_stack = cache
    dx = layers.stack_bwd(
        dfeats, params, "img", config.n_layers_img, config.n_heads,
        c_stack, grads,
    )
    layers.accum(grads, "img.pos", dx.sum(axis=0))
    layers.accum(grads, "img.cls", dx[:, 0, :].sum(axis=0))
    dpatch_x = dx[:, 1:, :]
    dpatches, dw, db = layers.linear_bwd(
        dpatch_x, patches, params["img.patch_w"]
    )
    layers.accum(grads, "img.patch_w", dw)
    layers.accum(grads, "img.patch_b", db)
    return dpatches


def pad_text_batch(token_lists, max_text_len):
    """Right-pad id lists to the batch max; returns (ids (B,S), lengths)."""
    lengths = np.array([len(t) for t in token_lists], dtype=np.int64)
    if lengths.min() < 1:
        raise DataError("empty token sequence")
    s = int(lengths.max())
    if s > max_text_len:
        raise DataError(
            f"sequence of {s} tokens exceeds max length {max_text_len}"
        )
    ids = np.full((len(token_lists), s), text.PAD_ID, dtype=np.int64)
    for b, toks in enumerate(token_lists):
        ids[b, : len(toks)] = toks
    return ids, lengths


def encode_text(params, config: ModelConfig, ids, lengths=None):
    """(B, S) padded id matrix -> (B, S, d_h) features.

    The feature at each sequence's final (eos) position is the global text
    representation; use eos_features to gather it.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim == 1:
        ids = ids[None]
    if lengths is None:
        lengths = np.full(ids.shape[0], ids.shape[1], dtype=np.int64)
    if ids.min() < 0 or ids.max() >= config.vocab_text:
        raise DataError(
            f"token id out of range for vocabulary of {config.vocab_text}"
        )
    if ids.shape[1] > config.max_text_len:
        raise DataError(
            f"sequence length {ids.shape[1]} exceeds max {config.max_text_len}"
        )
    x = params["txt.tok"][ids] + params["txt.pos"][: ids.shape[1]]
    mask = layers.key_padding_mask(lengths, ids.shape[1])
    feats, c_stack = layers.stack_fwd(
        x, params, "txt", config.n_layers_txt, config.n_heads, mask
    )
    return feats, (ids, lengths, c_stack)


def encode_text_bwd(dfeats, params, config, cache, grads):
    ids, lengths, c_stack = cache
    dx = layers.stack_bwd(
        dfeats, params, "txt", config.n_layers_txt, config.n_heads,
        c_stack, grads,
    )
    dpos = np.zeros_like(params["txt.pos"])
    dpos[: ids.shape[1]] = dx.sum(axis=0)
    layers.accum(grads, "txt.pos", dpos)
    dtok = np.zeros_like(params["txt.tok"])
    np.add.at(dtok, ids, dx)
    layers.accum(grads, "txt.tok", dtok)


def eos_features(feats, lengths):
    return feats[np.arange(feats.shape[0]), np.asarray(lengths) - 1]


# -------------------------------------------------------------- projection

_NORM_FLOOR = 1e-12


def project(params, features):
    """d_h feature rows -> unit-norm d_e embeddings."""
    emb, _ = project_fwd(params, np.asarray(features, dtype=np.float64))
    return emb


def project_fwd(params, features):
    single = features.ndim == 1
    f = features[None] if single else features
    if "proj.w1" in params:
        h = layers.linear_fwd(f, params["proj.w1"], params["proj.b1"])
        a, _ = _gelu2d(h)
        z = layers.linear_fwd(a, params["proj.w2"])
        pre = (f, h, a)
    else:
        z = layers.linear_fwd(f, params["proj.w"])
        pre = (f,)
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    degenerate = norms[:, 0] < _NORM_FLOOR
    if degenerate.any():
        log.warning(
            "projection produced %d zero vector(s); substituting the first "
            "basis vector", int(degenerate.sum()),
        )
        z = z.copy()
        z[degenerate] = 0.0
        z[degenerate, 0] = 1.0
        norms = np.where(degenerate[:, None], 1.0, norms)
    e = z / norms
    cache = (pre, z, norms, degenerate, single)
    return (e[0] if single else e), cache


def _gelu2d(h):
    flat = np.ascontiguousarray(h.reshape(-1))
    a = np.asarray(kernels.gelu_fwd(flat)).reshape(h.shape)
    return a, flat


def project_bwd(de, params, cache, grads):
    """Returns gradient wrt the d_h input features."""
    pre, z, norms, degenerate, single = cache
    de = np.asarray(de, dtype=np.float64)
    if single:
        de = de[None]
    e = z / norms
    dz = (de - e * (de * e).sum(axis=1, keepdims=True)) / norms
    # substituted rows are locally constant -> no gradient
    dz[degenerate] = 0.0
    if "proj.w1" in params:
        f, h, a = pre
        da, dw2, _ = layers.linear_bwd(dz, a, params["proj.w2"], with_bias=False)
        layers.accum(grads, "proj.w2", dw2)
        dh = np.asarray(kernels.gelu_bwd(
            np.ascontiguousarray(h.reshape(-1)),
            np.ascontiguousarray(da.reshape(-1)),
        )).reshape(h.shape)
        df, dw1, db1 = layers.linear_bwd(dh, f, params["proj.w1"])
        layers.accum(grads, "proj.w1", dw1)
        layers.accum(grads, "proj.b1", db1)
    else:
        (f,) = pre
        df, dw, _ = layers.linear_bwd(dz, f, params["proj.w"], with_bias=False)
        layers.accum(grads, "proj.w", dw)
    return df[0] if single else df


# ------------------------------------------------------------- MIM decoder

def mim_decode(params, config: ModelConfig, feats):
    """(B, N+1, d_h) masked-pass features -> (B, N, V) patch-token logits."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim == 2:
        feats = feats[None]
    if feats.shape[1] != config.n_patches + 1 or feats.shape[2] != config.d_h:
        raise ConfigError(
            f"feature sequence {feats.shape[1:]} does not match "
            f"({config.n_patches + 1}, {config.d_h})"
        )
    h, c_stack = layers.stack_fwd(
        feats, params, "mim", config.n_layers_mim, config.n_heads
    )
    logits = layers.linear_fwd(
        h[:, 1:, :], params["mim.cls_w"], params["mim.cls_b"]
    )
    return logits, (h, c_stack)


def mim_decode_bwd(dlogits, params, config, cache, grads):
    h, c_stack = cache
    dh_patch, dw, db = layers.linear_bwd(
        dlogits, h[:, 1:, :], params["mim.cls_w"]
    )
    layers.accum(grads, "mim.cls_w", dw)
    layers.accum(grads, "mim.cls_b", db)
    dh = np.zeros_like(h)
    dh[:, 1:, :] = dh_patch
    return layers.stack_bwd(
        dh, params, "mim", config.n_layers_mim, config.n_heads, c_stack, grads
    )


# ---------------------------------------------------------- joint objective

def batch_masks(config: ModelConfig, batch_size, rng):
    """Per-sample masked index sets, (B, m) with m = round(ratio*N) >= 1."""
    n = config.n_patches
    m = mask_count(n, config.mask_ratio)
    return np.stack([
        np.sort(rng.choice(n, size=m, replace=False)) for _ in range(batch_size)
    ])


def objective_forward_backward(params, config: ModelConfig, patches,
                               token_lists, objective, rng=None,
                               visual_tokens=None, weight_mim: float = 1.0,
                               normalize_mim: bool = False,
                               want_grads: bool = True):
    """One batch of the training objective.

    Returns (metrics dict, grads dict or None). metrics always carries
    "loss" and "contrastive"; "mim" appears only when the objective
    includes the masked branch. The MIM term is averaged over the batch of
    per-image sums (each image's loss is the SUM over its masked
    positions, divided by |M| only when normalize_mim is set).
    """
    if objective not in OBJECTIVES:
        raise ConfigError(f"unknown objective {objective!r}")
    patches = np.asarray(patches, dtype=np.float64)
    B = patches.shape[0]
    tau = float(np.exp(params["log_tau"]))

    feats_img, c_img = encode_image(params, config, patches)
    f_cls = feats_img[:, 0, :]
    ids, lengths = pad_text_batch(token_lists, config.max_text_len)
    feats_txt, c_txt = encode_text(params, config, ids, lengths)
    f_eos = eos_features(feats_txt, lengths)

    e_img, c_pi = project_fwd(params, f_cls)
    e_txt, c_pt = project_fwd(params, f_eos)
    S = losses.similarity_matrix(e_img, e_txt)
    l_c, dS, dlog_tau = losses.contrastive_loss_grad(S, tau)
    metrics = {"contrastive": l_c, "loss": l_c}

    use_mim = objective == "contrastive_plus_mim"
    if use_mim:
        if visual_tokens is None:
            raise ConfigError("masked objective requires visual tokens")
        if rng is None:
            raise ConfigError("masked objective requires an rng for masks")
        masks = batch_masks(config, B, rng)
        masked = patches.copy()
        for b in range(B):
            masked[b, masks[b]] = params["img.mask_patch"]
        feats_mim, c_img_m = encode_image(params, config, masked)
        logits, c_dec = mim_decode(params, config, feats_mim)
        l_mim = 0.0
        dlogits = np.zeros_like(logits) if want_grads else None
        for b in range(B):
            lb, db = losses.mim_loss_grad(logits[b], visual_tokens[b], masks[b])
            scale = 1.0 / masks.shape[1] if normalize_mim else 1.0
            l_mim += lb * scale
            if want_grads:
                dlogits[b] = db * (scale * weight_mim / B)
        l_mim /= B
        metrics["mim"] = l_mim
        metrics["loss"] = losses.total_loss(l_c, weight_mim * l_mim)

    if not want_grads:
        return metrics, None

    grads = {}
    de_img = dS @ e_txt
    de_txt = dS.T @ e_img
    df_cls = project_bwd(de_img, params, c_pi, grads)
    df_eos = project_bwd(de_txt, params, c_pt, grads)

    dfeats_img = np.zeros_like(feats_img)
    dfeats_img[:, 0, :] = df_cls
    encode_image_bwd(dfeats_img, params, config, c_img, grads)

    dfeats_txt = np.zeros_like(feats_txt)
    dfeats_txt[np.arange(B), lengths - 1] = df_eos
    encode_text_bwd(dfeats_txt, params, config, c_txt, grads)

    if config.tau_learnable:
        grads["log_tau"] = np.array(dlog_tau)

    if use_mim:
        dfeats_mim = mim_decode_bwd(dlogits, params, config, c_dec, grads)
        dmasked = encode_image_bwd(dfeats_mim, params, config, c_img_m, grads)
        dmask_tok = np.zeros_like(params["img.mask_patch"])
        for b in range(B):
            dmask_tok += dmasked[b, masks[b]].sum(axis=0)
        layers.accum(grads, "img.mask_patch", dmask_tok)

    return metrics, grads


def embed_batch(params, config: ModelConfig, patches=None, token_lists=None):
    """Forward-only embeddings; returns dict with any of "image"/"text"."""
    out = {}
    if patches is not None:
        feats, _ = encode_image(params, config, np.asarray(patches, float))
        out["image"] = project(params, feats[:, 0, :])
    if token_lists is not None:
        ids, lengths = pad_text_batch(token_lists, config.max_text_len)
        feats, _ = encode_text(params, config, ids, lengths)
        out["text"] = project(params, eos_features(feats, lengths))
    return out
