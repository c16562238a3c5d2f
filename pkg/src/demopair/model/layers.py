"""Batched transformer building blocks with hand-written backward passes.

All activations are float64 arrays shaped (B, S, D). Forward functions
return (output, cache); backward functions consume the cache, accumulate
parameter gradients into a flat dict keyed by parameter name, and return
the gradient with respect to their input. Elementwise and row-reduction
inner loops route through the swappable kernels backend.
"""

import math

import numpy as np

from .. import kernels

LN_EPS = 1e-5
# Additive key mask value; far enough below any score that exp underflows
# to exactly zero, without producing inf - inf in the max-subtraction.
NEG_MASK = -1e30


def _rows(x):
    return np.ascontiguousarray(x.reshape(-1, x.shape[-1]))


def _flat(x):
    return np.ascontiguousarray(x.reshape(-1))


def accum(grads, name, value):
    if name in grads:
        grads[name] += value
    else:
        grads[name] = value


def linear_fwd(x, w, b=None):
    y = x @ w
    if b is not None:
        y = y + b
    return y


def linear_bwd(dy, x, w, with_bias=True):
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    dw = x2.T @ dy2
    db = dy2.sum(axis=0) if with_bias else None
    dx = (dy2 @ w.T).reshape(x.shape)
    return dx, dw, db


def layernorm_fwd(x, gamma, beta):
    r = _rows(x)
    y, mean, rstd = kernels.layernorm_fwd(r, gamma, beta, LN_EPS)
    return np.asarray(y).reshape(x.shape), (r, np.asarray(mean), np.asarray(rstd))


def layernorm_bwd(dy, gamma, cache):
    r, mean, rstd = cache
    dx, dgamma, dbeta = kernels.layernorm_bwd(_rows(dy), r, mean, rstd, gamma)
    return (np.asarray(dx).reshape(dy.shape), np.asarray(dgamma),
            np.asarray(dbeta))


def attention_fwd(x, params, pfx, n_heads, attn_mask=None):
    """Multi-head self-attention. attn_mask: additive (B, 1, 1, S) or None."""
    B, S, D = x.shape
    hd = D // n_heads
    q = linear_fwd(x, params[pfx + ".wq"], params[pfx + ".bq"])
    k = linear_fwd(x, params[pfx + ".wk"], params[pfx + ".bk"])
    v = linear_fwd(x, params[pfx + ".wv"], params[pfx + ".bv"])

    def split(t):
        return np.ascontiguousarray(
            t.reshape(B, S, n_heads, hd).transpose(0, 2, 1, 3)
        )

    qh, kh, vh = split(q), split(k), split(v)
    scores = qh @ kh.transpose(0, 1, 3, 2) / math.sqrt(hd)
    if attn_mask is not None:
        scores = scores + attn_mask
    p = np.asarray(kernels.softmax_rows(_rows(scores))).reshape(scores.shape)
    ctx = p @ vh
    merged = np.ascontiguousarray(ctx.transpose(0, 2, 1, 3)).reshape(B, S, D)
    out = linear_fwd(merged, params[pfx + ".wo"], params[pfx + ".bo"])
    return out, (x, qh, kh, vh, p, merged)


def attention_bwd(dout, params, pfx, n_heads, cache, grads):
    x, qh, kh, vh, p, merged = cache
    B, S, D = x.shape
    hd = D // n_heads

    dmerged, dwo, dbo = linear_bwd(dout, merged, params[pfx + ".wo"])
    accum(grads, pfx + ".wo", dwo)
    accum(grads, pfx + ".bo", dbo)

    dctx = np.ascontiguousarray(
        dmerged.reshape(B, S, n_heads, hd).transpose(0, 2, 1, 3)
    )
    dp = dctx @ vh.transpose(0, 1, 3, 2)
    dvh = p.transpose(0, 1, 3, 2) @ dctx
    dscores = np.asarray(
        kernels.softmax_rows_bwd(_rows(dp), _rows(p))
    ).reshape(dp.shape) / math.sqrt(hd)
    dqh = dscores @ kh
    dkh = dscores.transpose(0, 1, 3, 2) @ qh

    def merge(t):
        return np.ascontiguousarray(t.transpose(0, 2, 1, 3)).reshape(B, S, D)

    dx = np.zeros_like(x)
    for dproj, wname, bname in (
        (merge(dqh), ".wq", ".bq"),
        (merge(dkh), ".wk", ".bk"),
        (merge(dvh), ".wv", ".bv"),
    ):
        dxi, dw, db = linear_bwd(dproj, x, params[pfx + wname])
        accum(grads, pfx + wname, dw)
        accum(grads, pfx + bname, db)
        dx += dxi
    return dx


def mlp_fwd(x, params, pfx):
    h = linear_fwd(x, params[pfx + ".w1"], params[pfx + ".b1"])
    a = np.asarray(kernels.gelu_fwd(_flat(h))).reshape(h.shape)
    y = linear_fwd(a, params[pfx + ".w2"], params[pfx + ".b2"])
    return y, (x, h, a)


def mlp_bwd(dy, params, pfx, cache, grads):
    x, h, a = cache
    da, dw2, db2 = linear_bwd(dy, a, params[pfx + ".w2"])
    accum(grads, pfx + ".w2", dw2)
    accum(grads, pfx + ".b2", db2)
    dh = np.asarray(kernels.gelu_bwd(_flat(h), _flat(da))).reshape(h.shape)
    dx, dw1, db1 = linear_bwd(dh, x, params[pfx + ".w1"])
    accum(grads, pfx + ".w1", dw1)
    accum(grads, pfx + ".b1", db1)
    return dx


def block_fwd(x, params, pfx, n_heads, attn_mask=None):
    """Pre-LN residual block: x + attn(ln1(x)), then x + mlp(ln2(x))."""
    n1, c_ln1 = layernorm_fwd(x, params[pfx + ".ln1.g"], params[pfx + ".ln1.b"])
    a, c_attn = attention_fwd(n1, params, pfx + ".attn", n_heads, attn_mask)
    x1 = x + a
    n2, c_ln2 = layernorm_fwd(x1, params[pfx + ".ln2.g"], params[pfx + ".ln2.b"])
    m, c_mlp = mlp_fwd(n2, params, pfx + ".mlp")
    return x1 + m, (c_ln1, c_attn, c_ln2, c_mlp)


def block_bwd(dout, params, pfx, n_heads, cache, grads):
    c_ln1, c_attn, c_ln2, c_mlp = cache
    dn2 = mlp_bwd(dout, params, pfx + ".mlp", c_mlp, grads)
    dx1, dg2, db2 = layernorm_bwd(dn2, params[pfx + ".ln2.g"], c_ln2)
    accum(grads, pfx + ".ln2.g", dg2)
    accum(grads, pfx + ".ln2.b", db2)
    dx1 = dx1 + dout
    dn1 = attention_bwd(dx1, params, pfx + ".attn", n_heads, c_attn, grads)
    dx, dg1, db1 = layernorm_bwd(dn1, params[pfx + ".ln1.g"], c_ln1)
    accum(grads, pfx + ".ln1.g", dg1)
    accum(grads, pfx + ".ln1.b", db1)
    return dx + dx1


def stack_fwd(x, params, pfx, n_layers, n_heads, attn_mask=None):
    """n_layers blocks then a final layernorm, params under f"{pfx}.blk{i}"."""
    caches = []
    for i in range(n_layers):
        x, c = block_fwd(x, params, f"{pfx}.blk{i}", n_heads, attn_mask)
        caches.append(c)
    out, c_f = layernorm_fwd(x, params[pfx + ".lnf.g"], params[pfx + ".lnf.b"])
    return out, (caches, c_f)


def stack_bwd(dout, params, pfx, n_layers, n_heads, cache, grads):
    caches, c_f = cache
    dx, dg, db = layernorm_bwd(dout, params[pfx + ".lnf.g"], c_f)
    accum(grads, pfx + ".lnf.g", dg)
    accum(grads, pfx + ".lnf.b", db)
    for i in reversed(range(n_layers)):
        dx = block_bwd(dx, params, f"{pfx}.blk{i}", n_heads, caches[i], grads)
    return dx


def key_padding_mask(lengths, max_len):
    """Additive (B, 1, 1, S) mask: 0 where s < length, NEG_MASK at padding."""
    B = len(lengths)
    mask = np.zeros((B, 1, 1, max_len))
    for b, n in enumerate(lengths):
        mask[b, 0, 0, n:] = NEG_MASK
    return mask
