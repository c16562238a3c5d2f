"""Bidirectional contrastive loss, masked-patch cross-entropy, and the joint
objective, together with their closed-form gradients.

Conventions: S is the N x N cosine similarity matrix between matched
image/text batches (row i = image i against every text). The contrastive
loss averages the row-wise and column-wise softmax cross-entropies of S
over temperature tau; the masked-image loss is a SUM over masked positions
(per image), not a mean, with an optional normalization flag applied by the
caller. All softmaxes are max-subtracted; log-probabilities stay in
log-space.
"""

import numpy as np

from . import kernels
from .errors import ConfigError


def similarity_matrix(img_emb, txt_emb):
    """S[i, j] = dot(img_emb[i], txt_emb[j]); rows must be unit-norm."""
    img_emb = np.asarray(img_emb, dtype=np.float64)
    txt_emb = np.asarray(txt_emb, dtype=np.float64)
    if img_emb.shape[0] != txt_emb.shape[0]:
        raise ConfigError(
            f"row-count mismatch: {img_emb.shape[0]} image vs "
            f"{txt_emb.shape[0]} text embeddings"
        )
    return img_emb @ txt_emb.T


def contrastive_loss(S, tau):
    """Mean of image-to-text and text-to-image InfoNCE at temperature tau."""
    loss, _, _ = contrastive_loss_grad(S, tau)
    return loss


def contrastive_loss_grad(S, tau):
    """Returns (loss, dloss/dS, dloss/dlog_tau)."""
    if not tau > 0:
        raise ConfigError(f"temperature must be positive, got {tau}")
    S = np.asarray(S, dtype=np.float64)
    n = S.shape[0]
    if S.shape != (n, n):
        raise ConfigError(f"similarity matrix must be square, got {S.shape}")
    A = np.ascontiguousarray(S / tau)
    lr = np.asarray(kernels.log_softmax_rows(A))
    lc = np.asarray(kernels.log_softmax_rows(np.ascontiguousarray(A.T)))
    diag = np.arange(n)
    loss = -0.5 / n * (lr[diag, diag].sum() + lc[diag, diag].sum()) + 0.0

    pr = np.exp(lr)
    pc = np.exp(lc).T
    eye = np.eye(n)
    # dL/dA for the averaged bidirectional cross-entropy
    dA = ((pr - eye) + (pc - eye)) / (2.0 * n)
    dS = dA / tau
    dlog_tau = -float((dA * A).sum())
    return float(loss), dS, dlog_tau


def mim_loss(logits, targets, mask_set):
    """Sum of -log softmax(logits[k])[targets[k]] over masked positions k."""
    loss, _ = mim_loss_grad(logits, targets, mask_set)
    return loss


def mim_loss_grad(logits, targets, mask_set):
    """Returns (loss, dloss/dlogits); unmasked rows get zero gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets)
    mask = np.asarray(mask_set, dtype=np.int64).reshape(-1)
    if mask.size == 0:
        raise ConfigError("mask set is empty")
    n, v = logits.shape
    if mask.min() < 0 or mask.max() >= n:
        raise ConfigError("mask index out of range")
    picked = targets[mask]
    if picked.min() < 0 or picked.max() >= v:
        raise ConfigError("target token out of range")
    lp = np.asarray(
        kernels.log_softmax_rows(np.ascontiguousarray(logits[mask]))
    )
    rows = np.arange(mask.size)
    loss = -float(lp[rows, picked].sum())
    dmasked = np.exp(lp)
    dmasked[rows, picked] -= 1.0
    dlogits = np.zeros_like(logits)
    dlogits[mask] = dmasked
    return loss, dlogits


def total_loss(l_c, l_mim):
    """Unweighted sum of the two objectives."""
    return l_c + l_mim
