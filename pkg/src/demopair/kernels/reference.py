"""Numpy implementations of the numerical kernels.

This is the pure-Python fallback backend; `demopair.kernels._core` holds the
compiled twin. Both expose identical signatures and must agree numerically
(the parity tests in tests/test_kernels.py pin this down). All arrays are
C-contiguous float64 unless stated otherwise.
"""

import numpy as np

GELU_C = 0.7978845608028654  # sqrt(2/pi)
GELU_A = 0.044715


def layernorm_fwd(x, gamma, beta, eps):
    """Row-wise layer norm. x: (R, D). Returns (y, mean, rstd)."""
    mean = x.mean(axis=1)
    var = x.var(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gamma + beta
    return y, mean, rstd


def layernorm_bwd(dy, x, mean, rstd, gamma):
    """Backward of layernorm_fwd. Returns (dx, dgamma, dbeta)."""
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gamma
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    m1 = dxhat.mean(axis=1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * rstd[:, None]
    return dx, dgamma, dbeta


def softmax_rows(x):
    """Row-wise softmax with max subtraction. x: (R, D)."""
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(dp, p):
    """Backward of softmax_rows given output p: dx = p * (dp - sum(dp*p))."""
    dot = (dp * p).sum(axis=1, keepdims=True)
    return p * (dp - dot)


def log_softmax_rows(x):
    """Row-wise log softmax, computed in log space."""
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def gelu_fwd(x):
    """tanh-approximation GELU on a 1-D array."""
    u = GELU_C * (x + GELU_A * x * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t)


def gelu_bwd(x, dy):
    """Gradient of gelu_fwd at x, applied to upstream dy (both 1-D)."""
    u = GELU_C * (x + GELU_A * x * x * x)
    t = np.tanh(u)
    du = GELU_C * (1.0 + 3.0 * GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def codebook_assign(patches, codebook):
    """Nearest codebook row per patch, squared L2, lowest index on ties.

    patches: (n, D), codebook: (V, D). Returns int64 (n,). Distances are
    computed as explicit differences (not the |a|^2 - 2ab + |b|^2 expansion)
    so equidistant cases tie exactly.
    """
    n = patches.shape[0]
    out = np.empty(n, dtype=np.int64)
    # chunk to bound the (chunk, V, D) temporary at ~32 MB
    step = max(1, (1 << 22) // max(1, codebook.size))
    for s in range(0, n, step):
        d = patches[s : s + step, None, :] - codebook[None, :, :]
        d2 = np.einsum("nvd,nvd->nv", d, d)
        out[s : s + step] = np.argmin(d2, axis=1)
    return out


def adamw_update(p, g, m, v, lr, beta1, beta2, eps, wd, t):
    """One decoupled-weight-decay adaptive update, in place on 1-D views.

    t is the 1-based step count; bias correction uses beta**t.
    """
    m[:] = beta1 * m + (1.0 - beta1) * g
    v[:] = beta2 * v + (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p[:] = p - lr * (mhat / (np.sqrt(vhat) + eps) + wd * p)
