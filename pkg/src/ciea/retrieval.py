"""Exact cosine top-k search, ranking metrics, TREC run files and the vocabulary probe."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError, ParseError, ReferentialError

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("mrr@10", "ndcg@10", "mrr@20", "ndcg@20", "rec@20", "rec@100")


class EmbeddingIndex:
    """Unit-norm document vectors stored in ascending document-ID order."""

    def __init__(self, ids, vectors, tol=1e-6):
        vectors = np.asarray(vectors, dtype=np.float64)
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise ReferentialError("document ids in an index must be unique")
        if vectors.shape[0] != len(ids):
            raise ContractError(f"{len(ids)} ids but {vectors.shape[0]} vectors")
        norms = np.linalg.norm(vectors, axis=1)
        if len(ids) and np.max(np.abs(norms - 1.0)) > tol:
            raise ContractError("index vectors must be unit-norm")
        order = sorted(range(len(ids)), key=ids.__getitem__)
        self.ids = [ids[i] for i in order]
        self.matrix = vectors[order]

    def __len__(self):
        return len(self.ids)


@dataclass
class RankedList:
    qid: str
    entries: list = field(default_factory=list)  # [(docid, score), ...]

    @property
    def docids(self):
        return [d for d, _ in self.entries]


def _rank(scores, k):
    # stable sort on -score: equal scores keep ascending index, i.e. ascending docid
    order = np.argsort(-scores, kind="stable")
    return order[:k]


def search_topk(index, query_vec, k, qid=""):
    # one code path with search_batch, so a query scores identically either way
    return search_batch(index, [qid], np.asarray(query_vec, dtype=np.float64)[None, :], k)[qid]


def search_batch(index, qids, query_vecs, k):
    if k < 1:
        raise ContractError("k must be at least 1")
    k = min(k, len(index))
    runs = {}
    for qid, vec in zip(qids, np.asarray(query_vecs, dtype=np.float64)):
        # per-query matrix-vector product: scores do not depend on what else is in the batch
        row = index.matrix @ vec
        top = _rank(row, k)
        runs[qid] = RankedList(qid, [(index.ids[i], float(row[i])) for i in top])
    return runs


# --- per-query metrics -------------------------------------------------------

def reciprocal_rank(ranked, relevant, k):
    for i, docid in enumerate(ranked[:k]):
        if docid in relevant:
            return 1.0 / (i + 1)
    return 0.0


def recall(ranked, relevant, k):
    if not relevant:
        return 0.0
    return len(set(ranked[:k]) & set(relevant)) / len(relevant)


def ndcg(ranked, relevant, k):
    """Binary-gain NDCG with 1/log2(rank + 1) discount."""
    dcg = sum(1.0 / math.log2(i + 2) for i, d in enumerate(ranked[:k]) if d in relevant)
    ideal = sum(1.0 / math.log2(i + 2) for i in range(min(len(relevant), k)))
    return dcg / ideal if ideal > 0 else 0.0


def _mean_metric(fn, run, qrels, k):
    values = []
    for qid, ranked in run.items():
        if qid not in qrels:
            log.warning("query %s has no qrels; excluded from the mean", qid)
            continue
        docids = ranked.docids if isinstance(ranked, RankedList) else list(ranked)
        values.append(fn(docids, qrels[qid], k))
    return float(np.mean(values)) if values else 0.0


def mrr_at_k(run, qrels, k):
    return _mean_metric(reciprocal_rank, run, qrels, k)


def recall_at_k(run, qrels, k):
    return _mean_metric(recall, run, qrels, k)


def ndcg_at_k(run, qrels, k):
    return _mean_metric(ndcg, run, qrels, k)


_METRIC_FNS = {"mrr": mrr_at_k, "ndcg": ndcg_at_k, "rec": recall_at_k}


def evaluate(run, qrels, columns=METRIC_COLUMNS):
    out = {}
    for col in columns:
        name, k = col.split("@")
        out[col] = _METRIC_FNS[name](run, qrels, int(k))
    return out


# --- run files ---------------------------------------------------------------

def write_run_file(runs, path, tag="ciea"):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for qid, ranked in runs.items():
            for rank, (docid, score) in enumerate(ranked.entries, 1):
                fh.write(f"{qid} Q0 {docid} {rank} {score:.6f} {tag}\n")


def read_run_file(path):
    runs = {}
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 6 or parts[1] != "Q0":
                raise ParseError(path, lineno, "expected 'qid Q0 docid rank score tag'")
            qid, _, docid, rank, score, _ = parts
            try:
                rank, score = int(rank), float(score)
            except ValueError:
                raise ParseError(path, lineno, "rank must be an integer and score a number") from None
            ranked = runs.setdefault(qid, RankedList(qid))
            if rank != len(ranked.entries) + 1:
                raise ParseError(path, lineno, f"rank {rank} out of sequence for query {qid}")
            ranked.entries.append((docid, score))
    return runs


# --- vocabulary probe --------------------------------------------------------

def nearest_vocab_tokens(rows, table, top_n=3, vocab=None, skip=()):
    """Closest vocabulary entries (by cosine) to each row, de-duplicated in first-seen order."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    table = np.asarray(table, dtype=np.float64)
    if rows.shape[1] != table.shape[1]:
        raise ContractError(f"row width {rows.shape[1]} != embedding width {table.shape[1]}")
    rn = rows / np.maximum(np.linalg.norm(rows, axis=1, keepdims=True), 1e-12)
    tn = table / np.maximum(np.linalg.norm(table, axis=1, keepdims=True), 1e-12)
    sims = rn @ tn.T
    if skip:
        sims[:, list(skip)] = -np.inf
    seen, out = set(), []
    for row in sims:
        for idx in np.argsort(-row, kind="stable")[:top_n]:
            idx = int(idx)
            if idx not in seen:
                seen.add(idx)
                out.append(vocab.token(idx) if vocab is not None else idx)
    return out
