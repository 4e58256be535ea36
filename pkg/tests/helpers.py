"""Small corpora and models shared by the training-level tests."""

import numpy as np

from ciea.data import SyntheticSpec, build_vocab, gen_synthetic, select, tokenize_corpus, tokenize_queries
from ciea.document import CIEAModel, ModelConfig


def tiny_spec(**kw):
    base = dict(n_docs=64, vocab_size=256, group_size=4, n_concepts=12, n_attributes=12, patch_dim=6)
    base.update(kw)
    return SyntheticSpec(**base)


def tiny_data(seed=0, **kw):
    spec = tiny_spec(**kw)
    data = gen_synthetic(spec, seed)
    vocab = build_vocab([d.text for d in data.corpus])
    corpus = tokenize_corpus(data.corpus, vocab)
    queries = tokenize_queries(data.queries, vocab)
    parts = {k: select(queries, data.splits[k]) for k in ("train", "dev", "test")}
    return spec, vocab, corpus, queries, parts


def tiny_model(vocab, spec, seed=0, **kw):
    cfg = dict(vocab_size=len(vocab), dim=8, layers=1, heads=2, ffn_dim=8, clip_dim=8,
               patch_dim=spec.patch_dim, init_seed=seed)
    cfg.update(kw)
    return CIEAModel(ModelConfig(**cfg))


def separable_data(n_docs=200, dim=8, seed=0):
    """Text-only documents, one distinct word each; a query names its document through a word of its own."""
    from ciea.data import Document, QueryRecord

    rng = np.random.default_rng(seed)
    docs = [Document(f"d{i:03d}", f"w{i}", None) for i in range(n_docs)]
    queries = [QueryRecord(f"q{i:03d}", f"q{i}", (f"d{i:03d}",)) for i in range(n_docs)]
    vocab = build_vocab([d.text for d in docs] + [q.text for q in queries])
    docs = tokenize_corpus(docs, vocab)
    queries = tokenize_queries(queries, vocab)
    dev = [queries[i] for i in rng.choice(n_docs, size=n_docs // 5, replace=False)]
    return vocab, docs, queries, dev
