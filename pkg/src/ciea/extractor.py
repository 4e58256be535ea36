"""Complementary-information extractor.

Each projected patch is compared with every caption token; a patch that
closely matches some token is redundant with the text. The resulting weight
rescales that patch's column of the self-attention logits:

    r_j = -max_c cos(patch_j, token_c)          (dissimilarity, in [-1, 1])
    w_j = (1 + r_j) / 2                         ("dissimilar" mode)
    w_j = (1 - r_j) / 2                         ("similar" mode, for comparison)
    out = softmax((Q K^T) * w[None, :] / sqrt(d)) V

A key with w_j = 0 contributes a zero logit, so it is neutral rather than
suppressed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError
from .tensor import Tensor

WEIGHT_MODES = ("dissimilar", "similar")


@dataclass
class DifferenceWeights:
    r: Tensor  # (..., l_i)
    w: Tensor  # (..., l_i)


class ExtractorParams:
    def __init__(self, dim, rng):
        def p(name):
            return Tensor(rng.standard_normal((dim, dim)) / np.sqrt(dim), requires_grad=True, name=name)

        self.wq, self.wk, self.wv = p("extractor.wq"), p("extractor.wk"), p("extractor.wv")

    def named(self):
        return {t.name: t for t in (self.wq, self.wk, self.wv)}


def patch_differences(img_emb, text_emb, text_mask=None, mode="dissimilar"):
    """Difference weights for (..., l_i, d) patches against (..., l_t, d) caption tokens.

    ``text_mask`` (..., l_t) marks real tokens. Patches of a document without any
    text get w = 1. At ties the lowest token index carries the gradient.
    """
    if mode not in WEIGHT_MODES:
        raise ContractError(f"weights_mode must be one of {WEIGHT_MODES}, got {mode!r}")
    if img_emb.shape[-1] != text_emb.shape[-1]:
        raise DimensionError(f"patch width {img_emb.shape[-1]} != token width {text_emb.shape[-1]}")
    lead, n_patches = img_emb.shape[:-2], img_emb.shape[-2]
    if text_mask is None:
        text_mask = np.ones(text_emb.shape[:-1], dtype=bool)
    text_mask = np.asarray(text_mask, dtype=bool)
    has_text = text_mask.any(axis=-1)
    if text_emb.shape[-2] == 0:
        r = Tensor(np.ones(lead + (n_patches,)))
        return DifferenceWeights(r, Tensor(np.ones(lead + (n_patches,))))

    cos = T.clip(T.cosine_matrix(img_emb, text_emb), -1.0, 1.0)
    cos = T.where(text_mask[..., None, :], cos, -2.0)
    best = T.max_(cos, axis=-1)
    best = T.where(np.broadcast_to(has_text[..., None], best.shape), best, -1.0)
    r = -best
    w = (1.0 + r) * 0.5 if mode == "dissimilar" else (1.0 - r) * 0.5
    if not has_text.all():
        w = T.where(np.broadcast_to(has_text[..., None], w.shape), w, 1.0)
    return DifferenceWeights(r, w)


def reweighted_attention(img_emb, weights, params):
    """Single-head self-attention over patches with per-key logit weights."""
    w = weights.w if isinstance(weights, DifferenceWeights) else T.as_tensor(weights)
    if w.shape != img_emb.shape[:-1]:
        raise ContractError(f"weights of shape {w.shape} do not match {img_emb.shape[-2]} patches")
    d = img_emb.shape[-1]
    q = img_emb @ params.wq
    k = img_emb @ params.wk
    v = img_emb @ params.wv
    logits = (q @ T.swap_last(k)) * T.reshape(w, w.shape[:-1] + (1, w.shape[-1])) * (1.0 / np.sqrt(d))
    return T.softmax_rows(logits) @ v


def neutral_weights(img_emb):
    return Tensor(np.ones(img_emb.shape[:-1]))
