"""Pure-numpy implementations of the hot per-token-pair kernels.

The compiled extension in ``_speed.pyx`` mirrors these signatures exactly;
both backends compute in float64 so results agree to rounding order.
"""

from __future__ import annotations

import numpy as np

# Variant codes shared with the compiled kernel.
HYBRID = 0
TYPE_ONLY = 1
DIST_ONLY = 2
HYBRID_STAR = 3
MASK = 4

# Token-role code for form-title tokens (distance 0 to everything) and for
# form-description tokens (always visible under the mask variant).
_ROLE_FORM_TITLE = 0
_ROLE_FORM_DESC = 1


def _distances(q_roles, q_blocks, k_roles, k_blocks):
    d = np.abs(q_blocks[:, None].astype(np.float64) - k_blocks[None, :].astype(np.float64))
    title = (q_roles[:, None] == _ROLE_FORM_TITLE) | (k_roles[None, :] == _ROLE_FORM_TITLE)
    d[title] = 0.0
    return d


def bias_matrix(q_roles, q_blocks, k_roles, k_blocks, L, mu, lam, variant, same_block_bias):
    """Structural bias for every (query, key) pair; (n, m) float64.

    ``mu``/``lam`` are the effective (already positive) decay parameters.
    Mask variant: 0 where attention is allowed, -inf otherwise (allowed when
    the tokens share a block or either is form title/description).
    """
    q_roles = np.asarray(q_roles, dtype=np.int64)
    k_roles = np.asarray(k_roles, dtype=np.int64)
    q_blocks = np.asarray(q_blocks, dtype=np.int64)
    k_blocks = np.asarray(k_blocks, dtype=np.int64)
    if variant == MASK:
        allowed = q_blocks[:, None] == k_blocks[None, :]
        for roles, axis in ((q_roles, 0), (k_roles, 1)):
            root = (roles == _ROLE_FORM_TITLE) | (roles == _ROLE_FORM_DESC)
            allowed |= np.expand_dims(root, 1 - axis)
        out = np.where(allowed, 0.0, -np.inf)
        return out.astype(np.float64)
    out = np.zeros((len(q_roles), len(k_roles)), dtype=np.float64)
    if variant in (HYBRID, TYPE_ONLY, HYBRID_STAR):
        out += np.asarray(L, dtype=np.float64)[q_roles[:, None], k_roles[None, :]]
    if variant in (HYBRID, DIST_ONLY):
        out += mu * np.exp(-lam * _distances(q_roles, q_blocks, k_roles, k_blocks))
    if variant == HYBRID_STAR:
        out += same_block_bias * (q_blocks[:, None] == k_blocks[None, :])
    return out


def bias_matrix_grads(upstream, q_roles, q_blocks, k_roles, k_blocks, mu, lam, variant):
    """Gradients of a bias matrix w.r.t. L, effective mu/lam, same-block bias.

    ``upstream`` is dLoss/dBias, shape (n, m). Returns (dL (9,9), dmu, dlam,
    dsame_block_bias); entries not used by the variant are zero.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    q_roles = np.asarray(q_roles, dtype=np.int64)
    k_roles = np.asarray(k_roles, dtype=np.int64)
    q_blocks = np.asarray(q_blocks, dtype=np.int64)
    k_blocks = np.asarray(k_blocks, dtype=np.int64)
    dL = np.zeros((9, 9), dtype=np.float64)
    dmu = 0.0
    dlam = 0.0
    dsbb = 0.0
    if variant in (HYBRID, TYPE_ONLY, HYBRID_STAR):
        pair = (q_roles[:, None] * 9 + k_roles[None, :]).ravel()
        dL = np.bincount(pair, weights=upstream.ravel(), minlength=81).reshape(9, 9)
    if variant in (HYBRID, DIST_ONLY):
        d = _distances(q_roles, q_blocks, k_roles, k_blocks)
        decay = np.exp(-lam * d)
        dmu = float(np.sum(upstream * decay))
        dlam = float(np.sum(upstream * (-mu) * d * decay))
    if variant == HYBRID_STAR:
        dsbb = float(np.sum(upstream[q_blocks[:, None] == k_blocks[None, :]]))
    return dL, dmu, dlam, dsbb


def lcs_length(a, b) -> int:
    """Length of the longest common subsequence of two id sequences."""
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if len(a) == 0 or len(b) == 0:
        return 0
    prev = np.zeros(len(b) + 1, dtype=np.int64)
    for i in range(len(a)):
        cur = np.zeros(len(b) + 1, dtype=np.int64)
        match = prev[:-1] + (b == a[i])
        for j in range(len(b)):
            cur[j + 1] = max(match[j], cur[j], prev[j + 1])
        prev = cur
    return int(prev[-1])
