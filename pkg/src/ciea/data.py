"""Vocabulary, tokenization, corpus/query file I/O and the synthetic benchmark."""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ReferentialError

PAD, MASK, START, END = 0, 1, 2, 3
SPECIAL_TOKENS = ("<pad>", "<mask>", "<start>", "<end>")
MAX_TEXT_LEN = 128

_WORD = re.compile(r"\w+", re.UNICODE)


def split_words(text):
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class Vocabulary:
    tokens: tuple  # id -> token, reserved ids first

    def __post_init__(self):
        if tuple(self.tokens[:4]) != SPECIAL_TOKENS:
            raise ContractError("vocabulary must start with the four reserved tokens")
        if len(set(self.tokens)) != len(self.tokens):
            raise ContractError("vocabulary tokens must be unique")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._ids

    def id(self, token):
        return self._ids[token]

    def get(self, token, default=None):
        return self._ids.get(token, default)

    def token(self, idx):
        return self.tokens[idx]

    def to_json(self):
        return list(self.tokens)

    @classmethod
    def from_json(cls, tokens):
        return cls(tuple(tokens))


def build_vocab(texts, min_count=1):
    """Build a vocabulary ordered by descending count, then lexicographically."""
    texts = list(texts)
    if not texts:
        raise ContractError("build_vocab needs at least one text")
    counts = Counter()
    for text in texts:
        counts.update(split_words(text))
    admitted = sorted((t for t, c in counts.items() if c >= min_count and t not in SPECIAL_TOKENS),
                      key=lambda t: (-counts[t], t))
    return Vocabulary(SPECIAL_TOKENS + tuple(admitted))


def tokenize(text, vocab, max_len=MAX_TEXT_LEN):
    """Map text to vocabulary IDs, dropping unknown words, keeping a prefix of ``max_len``."""
    ids = []
    for word in split_words(text):
        idx = vocab.get(word)
        if idx is not None:
            ids.append(idx)
            if len(ids) == max_len:
                break
    return tuple(ids)


def detokenize(ids, vocab):
    return " ".join(vocab.token(i) for i in ids)


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    patches: np.ndarray | None = None  # (n_patches, raw_dim)
    tokens: tuple = ()

    @property
    def has_image(self):
        return self.patches is not None


@dataclass(frozen=True)
class QueryRecord:
    qid: str
    text: str
    positives: tuple
    tokens: tuple = ()


def tokenize_corpus(docs, vocab, max_len=MAX_TEXT_LEN):
    return [replace(d, tokens=tokenize(d.text, vocab, max_len)) for d in docs]


def tokenize_queries(queries, vocab, max_len=MAX_TEXT_LEN):
    return [replace(q, tokens=tokenize(q.text, vocab, max_len)) for q in queries]


# --- file formats ------------------------------------------------------------

def _read_jsonl(path):
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(path, lineno, f"invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict):
                raise ParseError(path, lineno, "expected a JSON object")
            yield lineno, obj


def _parse_patches(raw, path, lineno):
    try:
        arr = np.asarray(raw, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(path, lineno, "patches must be a rectangular numeric grid") from None
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ParseError(path, lineno, f"patches must be a non-empty 2-D grid, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ParseError(path, lineno, "patches contain non-finite values")
    return arr


def load_corpus(path):
    docs, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        doc_id, text = obj.get("id"), obj.get("text", "")
        if not isinstance(doc_id, str) or not isinstance(text, str):
            raise ParseError(path, lineno, "'id' and 'text' must be strings")
        patches = obj.get("patches")
        if patches is not None:
            patches = _parse_patches(patches, path, lineno)
        if not text.strip() and patches is None:
            raise ParseError(path, lineno, f"document {doc_id!r} has neither text nor patches")
        if doc_id in seen:
            raise ReferentialError(f"duplicate document id {doc_id!r} at {path}:{lineno}")
        seen.add(doc_id)
        docs.append(Document(doc_id, text, patches))
    return docs


def load_queries(path, corpus_ids=None):
    queries, seen = [], set()
    for lineno, obj in _read_jsonl(path):
        qid, text, positives = obj.get("qid"), obj.get("text"), obj.get("positives")
        if not isinstance(qid, str) or not isinstance(text, str):
            raise ParseError(path, lineno, "'qid' and 'text' must be strings")
        if not isinstance(positives, list) or not positives:
            raise ParseError(path, lineno, "'positives' must be a non-empty list")
        if qid in seen:
            raise ReferentialError(f"duplicate query id {qid!r} at {path}:{lineno}")
        if corpus_ids is not None:
            missing = [p for p in positives if p not in corpus_ids]
            if missing:
                raise ReferentialError(f"query {qid!r} names unknown document(s) {missing}")
        seen.add(qid)
        queries.append(QueryRecord(qid, text, tuple(positives)))
    return queries


def write_corpus(docs, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for d in docs:
            obj = {"id": d.id, "text": d.text}
            if d.patches is not None:
                obj["patches"] = d.patches.tolist()
            fh.write(json.dumps(obj) + "\n")


def write_queries(queries, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for q in queries:
            fh.write(json.dumps({"qid": q.qid, "text": q.text, "positives": list(q.positives)}) + "\n")


def write_qrels(qrels, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for qid, docs in qrels.items():
            for docid in sorted(docs):
                fh.write(f"{qid}\t{docid}\n")


def read_qrels(path):
    qrels = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 2 or not all(parts):
                raise ParseError(path, lineno, "expected 'qid<TAB>docid'")
            qrels.setdefault(parts[0], set()).add(parts[1])
    return qrels


def qrels_from_queries(queries):
    return {q.qid: set(q.positives) for q in queries}


# --- synthetic benchmark -------------------------------------------------------

CONCEPT_WORDS = (
    "red", "green", "blue", "orange", "purple", "yellow", "white", "black",
    "clock", "leaf", "tiles", "flowers", "ceiling", "tower", "bridge", "river",
    "statue", "window", "tree", "snow", "lamp", "boat", "horse", "cloud",
    "night", "crowd", "fountain", "column", "roof", "grass", "sand", "wall",
    "door", "flag", "mountain", "stairs", "bench", "car", "bird", "garden",
)


@dataclass(frozen=True)
class SyntheticSpec:
    """Shape of a generated benchmark.

    Documents come in topic groups sharing a two-word topic phrase. Captions add
    two attribute words and one concept word whose visual prototype also shows
    up in a patch (redundant). A second, caption-absent concept lives only in the
    patches (complementary). A complementary query names the topic phrase and
    that concept, so only the image separates the target from its group-mates.
    """

    n_docs: int = 2000
    vocab_size: int = 1024
    n_patches: int = 4
    patch_dim: int = 16
    complementary_fraction: float = 0.6
    n_queries: int | None = None
    group_size: int = 8
    n_concepts: int = 24
    n_attributes: int = 48
    redundant_patches: int = 1
    patch_noise: float = 0.3
    # the image-only concept of each document is the caption concept of a group-mate
    shared_concepts: bool = False
    text_only_fraction: float = 0.0
    dev_fraction: float = 0.1
    test_fraction: float = 0.2

    def validate(self):
        if self.n_docs < 2 or self.group_size < 1:
            raise ContractError("need at least two documents and a positive group size")
        if not 0.0 <= self.complementary_fraction <= 1.0:
            raise ContractError("complementary_fraction must lie in [0, 1]")
        if not 0.0 <= self.text_only_fraction < 1.0:
            raise ContractError("text_only_fraction must lie in [0, 1)")
        n_topics = -(-self.n_docs // self.group_size)
        needed = 2 * n_topics + self.n_attributes + self.n_concepts
        if needed > self.vocab_size:
            raise ContractError(f"infeasible: {needed} content words needed but vocab_size={self.vocab_size}")
        per_group = self.group_size if self.shared_concepts else 2 * self.group_size
        if per_group > self.n_concepts or (self.shared_concepts and self.group_size < 2):
            raise ContractError(f"infeasible: groups of {self.group_size} need {per_group} "
                                f"distinct concepts, only {self.n_concepts} available")
        pairs = self.n_attributes * (self.n_attributes - 1) // 2
        if pairs < self.group_size:
            raise ContractError("too few attributes to make captions distinct within a group")
        if self.n_patches < self.redundant_patches + 1:
            raise ContractError("n_patches must leave room for the complementary patch")
        if self.dev_fraction + self.test_fraction >= 1.0:
            raise ContractError("dev and test fractions leave no training queries")


@dataclass
class SyntheticData:
    corpus: list
    queries: list
    qrels: dict
    splits: dict = field(default_factory=dict)
    complementary: dict = field(default_factory=dict)  # qid -> needs patch signal


def concept_words(n):
    if n <= len(CONCEPT_WORDS):
        return list(CONCEPT_WORDS[:n])
    return list(CONCEPT_WORDS) + [f"concept{i}" for i in range(len(CONCEPT_WORDS), n)]


def gen_synthetic(spec, seed):
    """Generate corpus, queries, qrels and a train/dev/test split, deterministically."""
    spec.validate()
    rng = np.random.default_rng(seed)
    n_topics = -(-spec.n_docs // spec.group_size)
    concepts = concept_words(spec.n_concepts)
    attributes = [f"attr{i}" for i in range(spec.n_attributes)]
    topics = [(f"topic{i}a", f"topic{i}b") for i in range(n_topics)]

    protos = rng.standard_normal((spec.n_concepts, spec.patch_dim))
    protos /= np.linalg.norm(protos, axis=1, keepdims=True)
    protos *= np.sqrt(spec.patch_dim) / 2

    all_pairs = [(a, b) for a in range(spec.n_attributes) for b in range(a + 1, spec.n_attributes)]
    docs, facts = [], []
    for m in range(spec.n_docs):
        g, slot = divmod(m, spec.group_size)
        if slot == 0:
            size = min(spec.group_size, spec.n_docs - m)
            pair_idx = rng.choice(len(all_pairs), size=spec.group_size, replace=False)
            if spec.shared_concepts and size > 1:
                caps = rng.choice(spec.n_concepts, size=size, replace=False)
                shift = int(rng.integers(1, size))
                group_concepts = [(int(caps[i]), int(caps[(i + shift) % size])) for i in range(size)]
            else:
                flat = rng.choice(spec.n_concepts, size=2 * size, replace=False)
                group_concepts = [(int(flat[2 * i]), int(flat[2 * i + 1])) for i in range(size)]
        cap_c, vis_c = group_concepts[slot]
        a1, a2 = all_pairs[pair_idx[slot]]
        ta, tb = topics[g]
        words = [ta, tb, attributes[a1], attributes[a2], concepts[cap_c]]
        text = " ".join(words)
        text_only = rng.random() < spec.text_only_fraction
        patches = None
        if not text_only:
            rows = [protos[cap_c]] * spec.redundant_patches + [protos[vis_c]]
            n_bg = spec.n_patches - len(rows)
            rows += list(rng.standard_normal((n_bg, spec.patch_dim)) * 0.5)
            rows = np.array(rows)[rng.permutation(spec.n_patches)]
            patches = np.round(rows + spec.patch_noise * rng.standard_normal(rows.shape), 6)
        docs.append(Document(f"d{m:05d}", text, patches))
        facts.append((ta, tb, attributes[a1], attributes[a2], concepts[vis_c], text_only))

    n_queries = spec.n_queries or spec.n_docs
    order = np.concatenate([rng.permutation(spec.n_docs)
                            for _ in range(-(-n_queries // spec.n_docs))])[:n_queries]
    queries, complementary = [], {}
    for k, m in enumerate(order):
        ta, tb, a1, a2, vis, text_only = facts[m]
        comp = (not text_only) and rng.random() < spec.complementary_fraction
        words = [ta, tb, vis] if comp else [ta, tb, a1, a2]
        qid = f"q{k:05d}"
        queries.append(QueryRecord(qid, " ".join(words), (docs[m].id,)))
        complementary[qid] = comp

    perm = rng.permutation(n_queries)
    n_dev = int(round(spec.dev_fraction * n_queries))
    n_test = int(round(spec.test_fraction * n_queries))
    qids = [q.qid for q in queries]
    splits = {
        "dev": sorted(qids[i] for i in perm[:n_dev]),
        "test": sorted(qids[i] for i in perm[n_dev:n_dev + n_test]),
        "train": sorted(qids[i] for i in perm[n_dev + n_test:]),
    }
    return SyntheticData(docs, queries, qrels_from_queries(queries), splits, complementary)


def select(queries, qids):
    wanted = set(qids)
    return [q for q in queries if q.qid in wanted]
