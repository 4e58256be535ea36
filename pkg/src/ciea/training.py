"""Two-phase contrastive training with in-batch and mined hard negatives."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .data import MASK
from .document import encode_corpus, encode_documents, encode_image_only_batch, encode_query_batch
from .encoder import encode_texts
from .errors import ContractError, NumericError
from .losses import image_query, info_nce
from .optim import AdamW
from .retrieval import EmbeddingIndex, mrr_at_k, search_batch

log = logging.getLogger(__name__)

NEGATIVE_MODES = ("in_batch", "hard")


@dataclass(frozen=True)
class TrainConfig:
    """Optimisation settings. Field defaults are the full-scale reference values;
    :meth:`desk` gives small-corpus settings for quick runs and tests."""

    epochs: int = 40
    batch_size: int = 64
    learning_rate: float = 5e-6
    eval_every_steps: int = 500
    early_stop_patience: int = 5
    negative_mode: str = "hard"
    hard_neg_pool: int = 100
    hard_negatives_per_query: int = 1
    hard_epochs: int | None = None
    temperature: float = 0.01
    lam: float = 0.0011
    min_len: int = 2
    weight_decay: float = 0.01
    max_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.negative_mode not in NEGATIVE_MODES:
            raise ContractError(f"negative_mode must be one of {NEGATIVE_MODES}")
        for name in ("epochs", "batch_size", "eval_every_steps", "early_stop_patience",
                     "hard_neg_pool", "hard_negatives_per_query", "min_len"):
            if getattr(self, name) < 1:
                raise ContractError(f"{name} must be positive")
        if self.learning_rate <= 0 or self.temperature <= 0 or self.lam < 0:
            raise ContractError("learning_rate and temperature must be positive, lam non-negative")

    @classmethod
    def desk(cls, **overrides):
        base = dict(epochs=6, batch_size=16, learning_rate=2e-3, eval_every_steps=50,
                    hard_neg_pool=20, hard_epochs=3, lam=0.5)
        base.update(overrides)
        return cls(**base)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Example:
    qid: str
    tokens: tuple
    comp_tokens: tuple
    pos: int          # corpus index of the positive used as d+
    positives: frozenset


@dataclass
class TrainResult:
    best_state: dict
    best_mrr: float
    best_step: int
    log: list = field(default_factory=list)
    hard_negatives: dict = field(default_factory=dict)
    steps: int = 0


class TrainingDiverged(NumericError):
    def __init__(self, message, result):
        super().__init__(message)
        self.result = result


def prepare_examples(queries, corpus, min_len=2):
    where = {d.id: i for i, d in enumerate(corpus)}
    out = []
    for q in queries:
        if not q.tokens:
            raise ContractError(f"query {q.qid!r} has no in-vocabulary tokens")
        pos = [where[p] for p in q.positives]
        masked = image_query(q.tokens, corpus[pos[0]].tokens, min_len)
        out.append(Example(q.qid, q.tokens, masked.tokens, pos[0], frozenset(pos)))
    return out


# --- negatives ---------------------------------------------------------------

def sample_in_batch_negatives(batch):
    """For each example, corpus indices of the other positives that are not its own positives."""
    if len(batch) < 2:
        raise ContractError("in-batch negatives need a batch of at least two queries")
    out = []
    for i, ex in enumerate(batch):
        out.append([o.pos for j, o in enumerate(batch) if j != i and o.pos not in ex.positives])
    return out


def epoch_batches(n, batch_size, rng):
    order = rng.permutation(n)
    batches = [order[s:s + batch_size] for s in range(0, n, batch_size)]
    return [b for b in batches if len(b) >= 2]


def mine_hard_negatives(model, corpus, queries, pool_size):
    """Top-``pool_size`` most similar non-positive documents per query (query id -> doc ids)."""
    avail = len(corpus) - max((len(q.positives) for q in queries), default=0)
    if pool_size > avail:
        log.warning("hard-negative pool %d exceeds the %d available documents; clamping", pool_size, avail)
    index = EmbeddingIndex([d.id for d in corpus], encode_corpus(model, corpus))
    qvecs = encode_query_batch(model, [q.tokens for q in queries])
    scores = qvecs @ index.matrix.T
    out = {}
    for q, row in zip(queries, scores):
        order = np.argsort(-row, kind="stable")
        pos = set(q.positives)
        picked = []
        for i in order:
            docid = index.ids[i]
            if docid not in pos:
                picked.append(docid)
                if len(picked) == pool_size:
                    break
        out[q.qid] = picked
    return out


def write_hard_negatives(hard, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for qid, docs in hard.items():
            fh.write(json.dumps({"qid": qid, "negatives": docs}) + "\n")


def read_hard_negatives(path):
    out = {}
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                obj = json.loads(line)
                out[obj["qid"]] = obj["negatives"]
    return out


# --- one optimisation step ---------------------------------------------------------

def batch_loss(model, corpus, batch, cfg, rng, hard=None):
    """Mean contrastive loss and mean image-query loss over one batch; returns (total, l_c, l_comp)."""
    cand = [ex.pos for ex in batch]
    if hard is not None:
        for ex in batch:
            pool = hard.get(ex.qid) or []
            if pool:
                take = min(cfg.hard_negatives_per_query, len(pool))
                cand.extend(int(j) for j in rng.choice(pool, size=take, replace=False))
    uniq = list(dict.fromkeys(cand))
    col = {j: c for c, j in enumerate(uniq)}
    pos_cols = np.array([col[ex.pos] for ex in batch])
    valid = np.array([[j not in ex.positives for j in uniq] for ex in batch])
    b = len(batch)

    q = encode_texts([ex.tokens for ex in batch], model.encoder)
    d = encode_documents(model, [corpus[j] for j in uniq])
    l_c = info_nce(q @ d.T, pos_cols, valid, cfg.temperature).sum() * (1.0 / b)

    l_comp = None
    img = [j for j in uniq if corpus[j].has_image]
    img_col = {j: c for c, j in enumerate(img)}
    # a fully masked image query carries nothing to align, so it sits out
    elig = [i for i, ex in enumerate(batch)
            if ex.pos in img_col and any(j not in ex.positives for j in img)
            and any(t != MASK for t in ex.comp_tokens)]
    if elig and (cfg.lam > 0 or not T.current_tape()):
        qc = encode_texts([batch[i].comp_tokens for i in elig], model.encoder)
        di = encode_image_only_batch(model, [corpus[j] for j in img])
        ivalid = np.array([[j not in batch[i].positives for j in img] for i in elig])
        per = info_nce(qc @ di.T, [img_col[batch[i].pos] for i in elig], ivalid, cfg.temperature)
        l_comp = per.sum() * (1.0 / b)
    total = l_c if l_comp is None or cfg.lam == 0 else l_c + cfg.lam * l_comp
    return total, l_c, l_comp


def evaluate_mrr(model, corpus, queries, k=10, doc_matrix=None):
    index = EmbeddingIndex([d.id for d in corpus],
                           doc_matrix if doc_matrix is not None else encode_corpus(model, corpus))
    qvecs = encode_query_batch(model, [q.tokens for q in queries])
    runs = search_batch(index, [q.qid for q in queries], qvecs, k)
    return mrr_at_k(runs, {q.qid: set(q.positives) for q in queries}, k)


# --- the loop ----------------------------------------------------------------

def _run_phase(model, corpus, examples, dev, cfg, rng, phase, epochs, start_step, best, records, hard=None):
    opt = AdamW(model.named_parameters(), cfg.learning_rate, weight_decay=cfg.weight_decay)
    step, since_best, stop = start_step, 0, False
    for _ in range(epochs):
        for idx in epoch_batches(len(examples), cfg.batch_size, rng):
            batch = [examples[i] for i in idx]
            with T.Tape() as tape:
                total, l_c, l_comp = batch_loss(model, corpus, batch, cfg, rng, hard)
            if not np.isfinite(total.item()):
                model.load_state_dict(best["state"])
                raise TrainingDiverged(f"loss became non-finite at step {step + 1}", best)
            opt.zero_grad()
            tape.backward(total)
            opt.step()
            step += 1
            records.append({"step": step, "loss": total.item(), "l_c": l_c.item(),
                            "l_comp": None if l_comp is None else l_comp.item(), "phase": phase})
            if step % cfg.eval_every_steps == 0:
                since_best = _evaluate(model, corpus, dev, step, phase, best, records, since_best)
                if since_best >= cfg.early_stop_patience:
                    stop = True
            if stop or (cfg.max_steps and step - start_step >= cfg.max_steps):
                stop = True
                break
        if stop:
            break
    if step % cfg.eval_every_steps != 0:
        _evaluate(model, corpus, dev, step, phase, best, records, since_best)
    return step


def _evaluate(model, corpus, dev, step, phase, best, records, since_best):
    mrr = evaluate_mrr(model, corpus, dev, 10)
    records.append({"eval_step": step, "mrr@10": mrr, "phase": phase})
    if mrr > best["mrr"]:
        best.update(mrr=mrr, step=step, state=model.state_dict())
        return 0
    return since_best + 1


def train(model, corpus, train_queries, dev_queries, cfg, log_path=None):
    """Train in place; the model ends holding the best dev-MRR@10 parameters."""
    rng = np.random.default_rng(cfg.seed)
    examples = prepare_examples(train_queries, corpus, cfg.min_len)
    if len(examples) < 2:
        raise ContractError("training needs at least two queries")
    records = []
    best = {"mrr": -1.0, "step": 0, "state": model.state_dict()}
    _evaluate(model, corpus, dev_queries, 0, "in_batch", best, records, 0)
    step = _run_phase(model, corpus, examples, dev_queries, cfg, rng, "in_batch", cfg.epochs, 0, best, records)
    hard = {}
    if cfg.negative_mode == "hard":
        model.load_state_dict(best["state"])
        mined = mine_hard_negatives(model, corpus, train_queries, cfg.hard_neg_pool)
        where = {d.id: i for i, d in enumerate(corpus)}
        hard = {qid: [where[d] for d in docs] for qid, docs in mined.items()}
        step = _run_phase(model, corpus, examples, dev_queries, cfg, rng, "hard",
                          cfg.hard_epochs or cfg.epochs, step, best, records, hard)
        hard = mined
    model.load_state_dict(best["state"])
    result = TrainResult(best["state"], best["mrr"], best["step"], records, hard, step)
    if log_path is not None:
        write_log(records, log_path)
    return result


def write_log(records, path):
    with Path(path).open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
