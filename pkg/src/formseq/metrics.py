"""Evaluation metrics: ROUGE-1/2/L and Macro-F1 / accuracy.

ROUGE uses F-measure over lowercased whitespace/punctuation tokens with no
stemming; scores are percentages. Option lists are compared as the
bar-joined strings produced by the tasks, so the bar counts as a token on
both sides.
"""

from __future__ import annotations

from collections import Counter

from . import _kernels
from .errors import EmptyInput
from .forms import BlockType
from .tokenizer import word_tokens


def _ngram_f1(cand: list[str], ref: list[str], n: int) -> float:
    cand_ngrams = Counter(tuple(cand[i : i + n]) for i in range(len(cand) - n + 1))
    ref_ngrams = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
    total_cand = sum(cand_ngrams.values())
    total_ref = sum(ref_ngrams.values())
    if total_cand == 0 or total_ref == 0:
        return 0.0
    overlap = sum(min(count, ref_ngrams[g]) for g, count in cand_ngrams.items())
    if overlap == 0:
        return 0.0
    precision = overlap / total_cand
    recall = overlap / total_ref
    return 2 * precision * recall / (precision + recall)


def _lcs_f1(cand: list[str], ref: list[str]) -> float:
    if not cand or not ref:
        return 0.0
    ids = {}
    for tok in cand + ref:
        ids.setdefault(tok, len(ids))
    lcs = _kernels.lcs_length([ids[t] for t in cand], [ids[t] for t in ref])
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


def rouge_scores(candidate: str, reference: str) -> tuple[float, float, float]:
    """(ROUGE-1, ROUGE-2, ROUGE-L) F-measures as percentages."""
    cand = word_tokens(candidate)
    ref = word_tokens(reference)
    return (
        100.0 * _ngram_f1(cand, ref, 1),
        100.0 * _ngram_f1(cand, ref, 2),
        100.0 * _lcs_f1(cand, ref),
    )


def classification_metrics(preds, golds) -> tuple[float, float]:
    """(Macro-F1, accuracy) over the eight block-type classes.

    Classes absent from both the gold labels and the predictions are
    excluded from the macro average; a class present on only one side
    contributes an F1 of 0.
    """
    preds = [BlockType(p) for p in preds]
    golds = [BlockType(g) for g in golds]
    if not preds or not golds:
        raise EmptyInput("no predictions to score")
    if len(preds) != len(golds):
        raise ValueError("preds and golds must have equal length")
    f1s = []
    for cls in BlockType:
        tp = sum(1 for p, g in zip(preds, golds) if p is cls and g is cls)
        fp = sum(1 for p, g in zip(preds, golds) if p is cls and g is not cls)
        fn = sum(1 for p, g in zip(preds, golds) if p is not cls and g is cls)
        if tp == fp == fn == 0:
            continue  # absent from both sides
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    accuracy = sum(1 for p, g in zip(preds, golds) if p is g) / len(golds)
    return (sum(f1s) / len(f1s) if f1s else 0.0, accuracy)
