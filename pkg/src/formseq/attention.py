"""Structural attention: role-pair lookup bias plus block-distance decay.

The attention scores QK^T/sqrt(d_k) receive two additive structural terms:
a learnable 9x9 role-pair table and mu * exp(-lambda * d) where d is the
block-level distance. Four alternative designs are supported: table only,
decay only, table + learnable same-block scalar, and a hard visibility mask.
lambda and mu are stored as raw reals and mapped through softplus so their
effective values stay positive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import _kernels
from .errors import DegenerateRow
from .serializer import NUM_ROLES


class AttnVariant(Enum):
    HYBRID = "hybrid"
    TYPE_ONLY = "type"
    DIST_ONLY = "dist"
    HYBRID_STAR = "hybridstar"
    MASK = "mask"


_VARIANT_CODES = {
    AttnVariant.HYBRID: _kernels.HYBRID,
    AttnVariant.TYPE_ONLY: _kernels.TYPE_ONLY,
    AttnVariant.DIST_ONLY: _kernels.DIST_ONLY,
    AttnVariant.HYBRID_STAR: _kernels.HYBRID_STAR,
    AttnVariant.MASK: _kernels.MASK,
}

# Effective values at initialization: structure starts as a small
# perturbation of vanilla attention.
MU_INIT = 0.1
LAMBDA_INIT = 1.0


def positive_reparam(raw: float) -> float:
    """softplus(raw) = ln(1 + e^raw); strictly positive and differentiable."""
    return float(np.logaddexp(0.0, raw))


def positive_reparam_deriv(raw: float) -> float:
    """d softplus / d raw = sigmoid(raw)."""
    if raw >= 0:
        return 1.0 / (1.0 + math.exp(-raw))
    e = math.exp(raw)
    return e / (1.0 + e)


def softplus_inverse(value: float) -> float:
    """Raw parameter whose softplus equals ``value`` (> 0)."""
    if value <= 0:
        raise ValueError("softplus inverse requires a positive value")
    return float(value + np.log(-np.expm1(-value)))


@dataclass
class StructBiasParams:
    """Per-layer structural parameters (shared across heads by default)."""

    L: np.ndarray = field(default_factory=lambda: np.zeros((NUM_ROLES, NUM_ROLES)))
    lambda_raw: float = softplus_inverse(LAMBDA_INIT)
    mu_raw: float = softplus_inverse(MU_INIT)
    variant: AttnVariant = AttnVariant.HYBRID
    same_block_bias: float = 0.0

    @property
    def lambda_eff(self) -> float:
        return positive_reparam(self.lambda_raw)

    @property
    def mu_eff(self) -> float:
        return positive_reparam(self.mu_raw)


@dataclass(frozen=True)
class BiasGrads:
    dL: np.ndarray
    dlambda_raw: float
    dmu_raw: float
    dsame_block_bias: float


def _annot_arrays(annots):
    """Accept AnnotatedToken lists or (roles, blocks) array pairs."""
    if isinstance(annots, tuple) and len(annots) == 2:
        roles, blocks = annots
        return np.asarray(roles, dtype=np.int64), np.asarray(blocks, dtype=np.int64)
    roles = np.array([int(t.role) for t in annots], dtype=np.int64)
    blocks = np.array([t.block_index for t in annots], dtype=np.int64)
    return roles, blocks


def compute_bias(q_annots, k_annots, params: StructBiasParams) -> np.ndarray:
    """Bias matrix aligned with (query position, key position)."""
    q_roles, q_blocks = _annot_arrays(q_annots)
    k_roles, k_blocks = _annot_arrays(k_annots)
    return _kernels.bias_matrix(
        q_roles,
        q_blocks,
        k_roles,
        k_blocks,
        params.L,
        params.mu_eff,
        params.lambda_eff,
        _VARIANT_CODES[params.variant],
        params.same_block_bias,
    )


def bias_gradients(upstream: np.ndarray, q_annots, k_annots, params: StructBiasParams) -> BiasGrads:
    """Analytic gradients of the structural parameters.

    ``upstream`` is dLoss/dBias (n x m). The decay-parameter gradients are
    chained through softplus back to the raw parameters.
    """
    q_roles, q_blocks = _annot_arrays(q_annots)
    k_roles, k_blocks = _annot_arrays(k_annots)
    dL, dmu_eff, dlam_eff, dsbb = _kernels.bias_matrix_grads(
        upstream,
        q_roles,
        q_blocks,
        k_roles,
        k_blocks,
        params.mu_eff,
        params.lambda_eff,
        _VARIANT_CODES[params.variant],
    )
    return BiasGrads(
        dL=dL,
        dlambda_raw=dlam_eff * positive_reparam_deriv(params.lambda_raw),
        dmu_raw=dmu_eff * positive_reparam_deriv(params.mu_raw),
        dsame_block_bias=dsbb,
    )


def masked_softmax(scores: np.ndarray) -> np.ndarray:
    """Row softmax tolerating -inf entries; raises DegenerateRow when a row
    has no finite entry."""
    scores = np.asarray(scores, dtype=np.float64)
    row_max = np.max(scores, axis=-1, keepdims=True)
    if np.any(np.isneginf(row_max)):
        raise DegenerateRow("attention row with no allowed key")
    shifted = scores - row_max
    expd = np.where(np.isneginf(shifted), 0.0, np.exp(shifted))
    return expd / np.sum(expd, axis=-1, keepdims=True)


def structural_attention(Q: np.ndarray, K: np.ndarray, V: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Single-head attention with an additive structural bias.

    A = QK^T/sqrt(d_k) + bias; rows with -inf entries renormalize over the
    remaining keys.
    """
    Q = np.asarray(Q, dtype=np.float64)
    K = np.asarray(K, dtype=np.float64)
    V = np.asarray(V, dtype=np.float64)
    if Q.shape[-1] != K.shape[-1]:
        raise ValueError("query/key width mismatch")
    if K.shape[0] != V.shape[0]:
        raise ValueError("key/value length mismatch")
    scores = (Q @ K.T) / math.sqrt(Q.shape[-1]) + np.asarray(bias, dtype=np.float64)
    return masked_softmax(scores) @ V
