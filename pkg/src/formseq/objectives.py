"""Denoising pre-training objectives: span masking and block-title permutation.

Corruption order: the title permutation acts on the form tree, the permuted
form is serialized, and span masking then corrupts whole leaf fields of the
serialized sequence. The reconstruction target is always the serialization
of the original, intact form.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor, cross_entropy
from .forms import Form
from .serializer import AnnotatedSequence, AnnotatedToken, TokenRole, serialize_form
from .tokenizer import FIRST_CORPUS_ID, MASK_ID, Vocab

MASK_ACTION = "mask"
RANDOM_ACTION = "random"
KEEP_ACTION = "keep"

# Replacement mix for tokens inside selected nodes.
P_MASK = 0.8
P_RANDOM = 0.1

_CONTENT_ROLES = frozenset(
    {
        TokenRole.FORM_TITLE,
        TokenRole.FORM_DESC,
        TokenRole.BLOCK_TITLE,
        TokenRole.BLOCK_DESC,
        TokenRole.OPTION,
        TokenRole.LIKERT_ROW,
        TokenRole.LIKERT_COLUMN,
    }
)


@dataclass(frozen=True)
class MaskedSpan:
    start: int
    end: int  # exclusive
    original_ids: tuple[int, ...]
    actions: tuple[str, ...]  # one action per token in the span


@dataclass(frozen=True)
class CorruptionRecord:
    spans: tuple[MaskedSpan, ...]
    permutation: tuple[int, ...]  # new title at position j came from block permutation[j]


def apply_btp(form: Form, rng: np.random.Generator) -> tuple[Form, tuple[int, ...]]:
    """Shuffle all block titles; every other field stays with its block.

    Returns the permuted form and the permutation: position j (0-based)
    receives the title of block permutation[j]. Single-block forms are fixed
    points with the identity permutation. The uniform shuffle may be the
    identity.
    """
    n = len(form.blocks)
    if n <= 1:
        return form, tuple(range(n))
    perm = tuple(int(i) for i in rng.permutation(n))
    blocks = tuple(
        replace(block, title=form.blocks[src].title) for block, src in zip(form.blocks, perm)
    )
    return replace(form, blocks=blocks), perm


def maskable_nodes(seq: AnnotatedSequence) -> list[tuple[int, int]]:
    """Whole leaf fields as (start, end) spans; never TYPE/SEP/BAR tokens.

    A leaf field is a maximal run of content tokens sharing one role and
    block index; the separators between options/rows/columns split runs, so
    each list item is its own node.
    """
    spans = []
    start = None
    prev = None
    for pos, tok in enumerate(seq.tokens):
        content = tok.role in _CONTENT_ROLES
        key = (tok.role, tok.block_index) if content else None
        if key != prev:
            if start is not None:
                spans.append((start, pos))
            start = pos if content else None
            prev = key
    if start is not None:
        spans.append((start, len(seq.tokens)))
    return spans


def apply_span_mlm(
    seq: AnnotatedSequence,
    vocab: Vocab,
    rng: np.random.Generator,
    budget: float = 0.15,
) -> tuple[list[int], tuple[MaskedSpan, ...]]:
    """Corrupt whole leaf fields until >= budget of all tokens are covered.

    Nodes are drawn uniformly without replacement; the final node may
    overshoot the budget by at most its own length. Within selected nodes
    each token independently becomes <mask> (p=0.8), a uniformly random
    non-special vocabulary token (p=0.1), or stays unchanged (p=0.1).
    """
    ids = seq.ids()
    target = budget * len(ids)
    if target <= 0:
        return ids, ()
    nodes = maskable_nodes(seq)
    order = rng.permutation(len(nodes))
    covered = 0
    spans: list[MaskedSpan] = []
    corrupted = list(ids)
    for node_idx in order:
        if covered >= target:
            break
        start, end = nodes[node_idx]
        actions = []
        for pos in range(start, end):
            u = rng.random()
            if u < P_MASK:
                actions.append(MASK_ACTION)
                corrupted[pos] = MASK_ID
            elif u < P_MASK + P_RANDOM:
                actions.append(RANDOM_ACTION)
                corrupted[pos] = int(rng.integers(FIRST_CORPUS_ID, vocab.size))
            else:
                actions.append(KEEP_ACTION)
        spans.append(MaskedSpan(start, end, tuple(ids[start:end]), tuple(actions)))
        covered += end - start
    spans.sort(key=lambda s: s.start)
    return corrupted, tuple(spans)


def restore_ids(corrupted_ids: list[int], spans: tuple[MaskedSpan, ...]) -> list[int]:
    """Undo a corruption using its record."""
    restored = list(corrupted_ids)
    for span in spans:
        restored[span.start : span.end] = span.original_ids
    return restored


def build_denoising_example(
    form: Form, vocab: Vocab, rng: np.random.Generator, budget: float = 0.15
) -> tuple[AnnotatedSequence, list[int], CorruptionRecord]:
    """(corrupted source, intact target ids, record) for one form.

    The corrupted sequence carries correct annotations for its own layout;
    the target is the serialization of the original form.
    """
    permuted, perm = apply_btp(form, rng)
    permuted_seq = serialize_form(permuted, vocab)
    corrupted_ids, spans = apply_span_mlm(permuted_seq, vocab, rng, budget=budget)
    corrupted = AnnotatedSequence(
        tuple(
            AnnotatedToken(cid, tok.role, tok.block_index)
            for cid, tok in zip(corrupted_ids, permuted_seq.tokens)
        )
    )
    target_ids = serialize_form(form, vocab).ids()
    return corrupted, target_ids, CorruptionRecord(spans, perm)


def reconstruction_loss(logits: Tensor, target_ids: np.ndarray, pad_id: int) -> Tensor:
    """Mean token-level cross-entropy over non-pad positions."""
    flat_logits = logits if logits.data.ndim == 2 else _flatten_logits(logits)
    targets = np.asarray(target_ids).reshape(-1)
    return cross_entropy(flat_logits, targets, ignore_id=pad_id)


def _flatten_logits(logits: Tensor) -> Tensor:
    from . import autodiff as ad

    b, t, v = logits.data.shape
    return ad.reshape(logits, (b * t, v))
