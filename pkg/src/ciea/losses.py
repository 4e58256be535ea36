"""Masked image queries and the two temperature-scaled contrastive losses."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import MASK
from .errors import ContractError


@dataclass(frozen=True)
class MaskedQuery:
    tokens: tuple
    masked_spans: tuple  # ((start, length), ...)


@dataclass(frozen=True)
class LossConfig:
    temperature: float = 0.01
    lam: float = 0.0011
    negatives: int = 1
    min_len: int = 2

    def __post_init__(self):
        if self.temperature <= 0:
            raise ContractError("temperature must be positive")
        if self.lam < 0:
            raise ContractError("lambda must be non-negative")
        if self.negatives < 1 or self.min_len < 1:
            raise ContractError("negatives and min_len must be at least 1")


def find_overlap_segments(query, doc_text, min_len=2):
    """Greedy left-to-right, longest-first spans of the query occurring verbatim in the document."""
    if min_len < 1:
        raise ContractError("min_len must be at least 1")
    q, doc = tuple(query), tuple(doc_text)
    if not q or not doc:
        return []
    grams = {doc[i:j] for i in range(len(doc)) for j in range(i + min_len, min(len(doc), i + len(q)) + 1)}
    spans, i = [], 0
    while i < len(q):
        best = 0
        for length in range(min(len(q) - i, len(doc)), min_len - 1, -1):
            if q[i:i + length] in grams:
                best = length
                break
        if best:
            spans.append((i, best))
            i += best
        else:
            i += 1
    return spans


def mask_query(query, spans):
    out = list(query)
    taken = np.zeros(len(out), dtype=bool)
    for start, length in spans:
        if length < 1 or start < 0 or start + length > len(out):
            raise ContractError(f"span ({start}, {length}) is outside a query of length {len(out)}")
        if taken[start:start + length].any():
            raise ContractError(f"span ({start}, {length}) overlaps an earlier span")
        taken[start:start + length] = True
        out[start:start + length] = [MASK] * length
    return MaskedQuery(tuple(out), tuple(tuple(s) for s in spans))


def image_query(query, doc_text, min_len=2):
    return mask_query(query, find_overlap_segments(query, doc_text, min_len))


def info_nce(scores, positive, valid=None, temperature=0.01):
    """Per-row ``-log softmax(scores / t)[positive]`` over admissible columns.

    ``scores`` is (B, M) cosine similarities, ``positive`` (B,) column indices and
    ``valid`` a (B, M) boolean mask of columns that may enter the denominator.
    The log-sum-exp is max-shifted, so no overflow occurs for any cosine at small t.
    """
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    positive = np.asarray(positive, dtype=np.int64)
    rows = np.arange(scores.shape[0])
    if valid is not None:
        valid = np.array(valid, dtype=bool)
        valid[rows, positive] = True
    logits = scores * (1.0 / temperature)
    return T.logsumexp(logits, axis=-1, mask=valid) - logits[rows, positive]


def _pair_scores(q_rep, pos_rep, neg_reps):
    if isinstance(neg_reps, (list, tuple)):
        if not neg_reps:
            raise ContractError("at least one negative representation is required")
        neg_reps = T.stack(list(neg_reps))
    negs = neg_reps
    if negs.shape[0] == 0:
        raise ContractError("at least one negative representation is required")
    docs = T.concat([T.reshape(pos_rep, (1, -1)), negs], axis=0)
    return T.reshape(T.cosine(T.reshape(q_rep, (1, -1)), docs), (1, -1))


def loss_contrastive(q_rep, pos_rep, neg_reps, temperature=0.01):
    """Contrastive loss of one query against its positive and negative documents."""
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    return info_nce(_pair_scores(q_rep, pos_rep, neg_reps), [0], None, temperature)[0]


def loss_comp(masked_q_rep, pos_img_rep, neg_img_reps, temperature=0.01):
    """Image-query loss: same kernel, masked query against image-only representations."""
    return loss_contrastive(masked_q_rep, pos_img_rep, neg_img_reps, temperature)


def loss_total(l_c, l_comp, lam):
    return T.as_tensor(l_c) + lam * T.as_tensor(l_comp)
