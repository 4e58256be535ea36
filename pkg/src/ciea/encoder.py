"""Token embedding table, pre-norm transformer blocks and first-position pooling."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import tensor as T
from .data import PAD
from .errors import ContractError, DimensionError
from .tensor import Tensor

EXTRA_POSITIONS = 64  # room for <start>, <end> and image patches beyond the text limit


@dataclass(frozen=True)
class EncoderConfig:
    vocab_size: int
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 64
    max_len: int = 128
    emb_scale: float = 0.1  # std of the token table; small so attention output can outweigh it early

    def __post_init__(self):
        for name in ("vocab_size", "dim", "heads", "ffn_dim", "max_len", "emb_scale"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.layers < 0:
            raise ContractError("layers must be non-negative")
        if self.dim % self.heads:
            raise ContractError(f"dim={self.dim} is not divisible by heads={self.heads}")

    @property
    def max_positions(self):
        return self.max_len + EXTRA_POSITIONS

    def to_dict(self):
        return asdict(self)


class EncoderParams:
    """All trainable tensors of Emb(.) and Trans(.), addressable by name."""

    def __init__(self, config, rng):
        d, f = config.dim, config.ffn_dim
        self.config = config

        def p(name, arr):
            return Tensor(arr, requires_grad=True, name=name)

        self.tok_emb = p("tok_emb", config.emb_scale * rng.standard_normal((config.vocab_size, d)))
        self.pos_emb = p("pos_emb", 0.1 * rng.standard_normal((config.max_positions, d)))
        out_scale = 1.0 / np.sqrt(2.0 * max(config.layers, 1))
        self.blocks = []
        for i in range(config.layers):
            blk = {
                "ln1_g": np.ones(d), "ln1_b": np.zeros(d),
                "wq": rng.standard_normal((d, d)) / np.sqrt(d),
                "wk": rng.standard_normal((d, d)) / np.sqrt(d),
                "wv": rng.standard_normal((d, d)) / np.sqrt(d),
                "wo": out_scale * rng.standard_normal((d, d)) / np.sqrt(d),
                "ln2_g": np.ones(d), "ln2_b": np.zeros(d),
                "w1": rng.standard_normal((d, f)) / np.sqrt(d), "b1": np.zeros(f),
                "w2": out_scale * rng.standard_normal((f, d)) / np.sqrt(f), "b2": np.zeros(d),
            }
            self.blocks.append({k: p(f"block{i}.{k}", v) for k, v in blk.items()})

    def named(self):
        out = {"tok_emb": self.tok_emb, "pos_emb": self.pos_emb}
        for blk in self.blocks:
            for t in blk.values():
                out[t.name] = t
        return out


def embed(tokens, params, offset=0):
    """Token plus positional embedding for one sequence or a padded (B, l) batch."""
    ids = np.asarray(tokens, dtype=np.int64)
    cfg = params.config
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise ContractError(f"token id out of range for vocabulary of size {cfg.vocab_size}")
    length = ids.shape[-1]
    if offset + length > cfg.max_positions:
        raise ContractError(f"sequence of length {length} exceeds {cfg.max_positions} positions")
    if length == 0:
        return Tensor(np.zeros(ids.shape + (cfg.dim,)))
    return T.take_rows(params.tok_emb, ids) + params.pos_emb[offset:offset + length]


def _attention(h, blk, mask, heads):
    b, l, d = h.shape
    dh = d // heads

    def split(x):
        return T.permute(T.reshape(x, (b, l, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(h @ blk["wq"]), split(h @ blk["wk"]), split(h @ blk["wv"])
    logits = (q @ T.swap_last(k)) * (1.0 / np.sqrt(dh))
    att = T.softmax_rows(logits, mask[:, None, None, :])
    o = T.reshape(T.permute(att @ v, (0, 2, 1, 3)), (b, l, d))
    return o @ blk["wo"]


def trans(x, pad_mask, params):
    """Pre-norm multi-head self-attention blocks; padded positions are masked keys and zero outputs."""
    squeeze = x.ndim == 2
    mask = np.asarray(pad_mask, dtype=bool)
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
        mask = mask[None]
    if mask.shape != x.shape[:2]:
        raise DimensionError(f"pad mask of shape {mask.shape} does not match input {x.shape}")
    for blk in params.blocks:
        h = T.layer_norm(x, blk["ln1_g"], blk["ln1_b"])
        x = x + _attention(h, blk, mask, params.config.heads)
        h = T.layer_norm(x, blk["ln2_g"], blk["ln2_b"])
        x = x + (T.gelu(h @ blk["w1"] + blk["b1"]) @ blk["w2"] + blk["b2"])
    if not mask.all():
        x = x * mask[..., None].astype(np.float64)
    if squeeze:
        x = T.reshape(x, x.shape[1:])
    return x


def pool(hidden):
    """First-position pooling followed by L2 normalisation."""
    first = hidden[:, 0, :] if hidden.ndim == 3 else hidden[0]
    return T.l2_normalize(first)


def pad_batch(sequences):
    """Right-pad integer sequences with <pad>; returns (ids, mask)."""
    n = max((len(s) for s in sequences), default=0)
    ids = np.full((len(sequences), n), PAD, dtype=np.int64)
    mask = np.zeros((len(sequences), n), dtype=bool)
    for i, s in enumerate(sequences):
        ids[i, :len(s)] = s
        mask[i, :len(s)] = True
    return ids, mask & (ids != PAD)


def encode_texts(token_lists, params):
    """Encode a batch of non-empty token sequences to unit vectors (n, d)."""
    if any(len(t) == 0 for t in token_lists):
        raise ContractError("cannot encode an empty token sequence")
    ids, mask = pad_batch([list(t) for t in token_lists])
    hidden = trans(embed(ids, params), mask, params)
    return pool(hidden)


def encode_query(tokens, params):
    """Unit-norm representation of a single query from its first position."""
    if len(tokens) == 0:
        raise ContractError("query has no tokens")
    return encode_texts([tokens], params)[0]
