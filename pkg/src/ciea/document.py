"""Model bundle and document encoding: image stream, fusion and pooling."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import tensor as T
from .data import END, START
from .encoder import EncoderConfig, EncoderParams, encode_texts, pad_batch, pool, trans
from .errors import ContractError
from .extractor import WEIGHT_MODES, ExtractorParams, neutral_weights, patch_differences, reweighted_attention
from .tensor import Tensor
from .visual import FrozenVisual, Projector, featurize, project


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    dim: int = 32
    layers: int = 2
    heads: int = 4
    ffn_dim: int = 64
    max_len: int = 128
    emb_scale: float = 0.1
    # projected patches start near the token-embedding scale instead of swamping it
    proj_scale: float = 0.15
    clip_dim: int = 48
    patch_dim: int = 16
    frozen_seed: int = 0
    init_seed: int = 0
    weights_mode: str = "dissimilar"
    reweight: bool = True

    def __post_init__(self):
        if self.weights_mode not in WEIGHT_MODES:
            raise ContractError(f"weights_mode must be one of {WEIGHT_MODES}")
        if self.proj_scale <= 0:
            raise ContractError("proj_scale must be positive")

    def encoder_config(self):
        return EncoderConfig(self.vocab_size, self.dim, self.layers, self.heads, self.ffn_dim, self.max_len,
                             self.emb_scale)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class DocumentRepresentation:
    vector: Tensor
    source: str


class CIEAModel:
    """Every parameter the retriever owns, trainable or frozen."""

    def __init__(self, config):
        self.config = config
        rng = np.random.default_rng(config.init_seed)
        self.encoder = EncoderParams(config.encoder_config(), rng)
        self.projector = Projector(config.clip_dim, config.dim, rng, config.proj_scale)
        self.extractor = ExtractorParams(config.dim, rng)
        self.frozen = FrozenVisual(config.patch_dim, config.clip_dim, config.frozen_seed)

    def named_parameters(self):
        out = dict(self.encoder.named())
        out.update(self.projector.named())
        out.update(self.extractor.named())
        return out

    def parameters(self):
        return list(self.named_parameters().values())

    def state_dict(self):
        return {k: v.data.copy() for k, v in self.named_parameters().items()}

    def load_state_dict(self, state):
        params = self.named_parameters()
        missing = set(params) - set(state)
        if missing:
            raise ContractError(f"state is missing parameters: {sorted(missing)}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ContractError(f"parameter {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)

    def n_parameters(self):
        return sum(p.data.size for p in self.parameters())


# --- image stream ---------------------------------------------------------------

def _text_ids(docs):
    return pad_batch([list(d.tokens) for d in docs])


def image_stream(model, patches, text_ids, text_mask):
    """Patches (B, l_i, raw) -> projected, weights and re-weighted patch embeddings."""
    projected = project(featurize(patches, model.frozen), model.projector)
    if model.config.reweight:
        text_tok = T.take_rows(model.encoder.tok_emb, text_ids) if text_ids.shape[1] else \
            Tensor(np.zeros(text_ids.shape + (model.config.dim,)))
        weights = patch_differences(projected, text_tok, text_mask, model.config.weights_mode).w
    else:
        weights = neutral_weights(projected)
    return projected, weights, reweighted_attention(projected, weights, model.extractor)


def _stack_patches(docs):
    shapes = {d.patches.shape for d in docs}
    if len(shapes) != 1:
        raise ContractError(f"documents in one batch must share a patch grid shape, got {sorted(shapes)}")
    return np.stack([d.patches for d in docs])


def fused_inputs(model, reweighted, text_ids, text_mask):
    """Build [<start>, image rows, <end>, text rows] plus positions for the whole sequence."""
    b, n_img = reweighted.shape[0], reweighted.shape[1]
    enc = model.encoder
    start = T.take_rows(enc.tok_emb, np.full((b, 1), START))
    end = T.take_rows(enc.tok_emb, np.full((b, 1), END))
    parts = [start, reweighted, end]
    if text_ids.shape[1]:
        parts.append(T.take_rows(enc.tok_emb, text_ids))
    seq = T.concat(parts, axis=1)
    length = seq.shape[1]
    if length > enc.config.max_positions:
        raise ContractError(f"fused sequence of length {length} exceeds {enc.config.max_positions} positions")
    x = seq + enc.pos_emb[:length]
    mask = np.concatenate([np.ones((b, n_img + 2), dtype=bool), text_mask], axis=1)
    return x, mask


def encode_multimodal(model, docs):
    ids, mask = _text_ids(docs)
    _, _, rew = image_stream(model, _stack_patches(docs), ids, mask)
    x, full_mask = fused_inputs(model, rew, ids, mask)
    return pool(trans(x, full_mask, model.encoder))


def encode_image_only_batch(model, docs):
    if any(not d.has_image for d in docs):
        raise ContractError("image-only encoding needs documents with patches")
    ids, mask = _text_ids(docs)
    _, _, rew = image_stream(model, _stack_patches(docs), ids, mask)
    n_img = rew.shape[1]
    # same positions the image rows occupy inside the fused sequence
    x = rew + model.encoder.pos_emb[1:1 + n_img]
    return pool(trans(x, np.ones(x.shape[:2], dtype=bool), model.encoder))


def encode_documents(model, docs):
    """Unit-norm representations (n, d) in input order; text-only documents skip the image segment."""
    for d in docs:
        if not d.has_image and len(d.tokens) == 0:
            raise ContractError(f"document {d.id!r} has neither tokens nor patches")
    mm = [i for i, d in enumerate(docs) if d.has_image]
    txt = [i for i, d in enumerate(docs) if not d.has_image]
    parts, order = [], []
    if mm:
        parts.append(encode_multimodal(model, [docs[i] for i in mm]))
        order += mm
    if txt:
        parts.append(encode_texts([docs[i].tokens for i in txt], model.encoder))
        order += txt
    reps = parts[0] if len(parts) == 1 else T.concat(parts, axis=0)
    if order != sorted(order):
        reps = reps[np.argsort(order)]
    return reps


def encode_document(doc, model):
    rep = encode_documents(model, [doc])[0]
    return DocumentRepresentation(rep, "multimodal" if doc.has_image else "text_only")


def encode_image_only(doc, model):
    if not doc.has_image:
        raise ContractError(f"document {doc.id!r} is text-only; no image representation exists")
    return DocumentRepresentation(encode_image_only_batch(model, [doc])[0], "image_only")


def encode_corpus(model, docs, batch_size=256):
    """Inference-only encoding of a whole corpus to an (n, d) array."""
    out = np.zeros((len(docs), model.config.dim))
    for s in range(0, len(docs), batch_size):
        out[s:s + batch_size] = encode_documents(model, docs[s:s + batch_size]).data
    return out


def encode_query_batch(model, token_lists, batch_size=256):
    out = np.zeros((len(token_lists), model.config.dim))
    for s in range(0, len(token_lists), batch_size):
        out[s:s + batch_size] = encode_texts(token_lists[s:s + batch_size], model.encoder).data
    return out
