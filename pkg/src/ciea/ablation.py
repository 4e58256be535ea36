"""Component ablation: the full model against variants with parts switched off, over several seeds."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import build_vocab, select, tokenize_corpus, tokenize_queries
from .document import CIEAModel, encode_corpus, encode_query_batch
from .errors import ContractError, ParseError
from .retrieval import METRIC_COLUMNS, EmbeddingIndex, evaluate, search_batch, write_run_file
from .training import train, write_log

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Variant:
    name: str
    use_image_query: bool
    reweight: bool
    weights_mode: str = "dissimilar"


TABLE_ROWS = (
    Variant("CIEA", True, True),
    Variant("w/o image query", False, True),
    Variant("w/o attention", True, False),
    Variant("Base", False, False),
)
SIMILAR = Variant("CIEA (similar weights)", True, True, "similar")
ALL_VARIANTS = TABLE_ROWS + (SIMILAR,)

# (better, worse, strict): the orderings the ablation is expected to show
EXPECTED_ORDERINGS = (
    ("CIEA", "w/o image query", True),
    ("CIEA", "w/o attention", True),
    ("w/o image query", "Base", True),
    ("w/o attention", "Base", True),
    ("CIEA", "CIEA (similar weights)", False),
)


def variant_slug(name):
    return "".join(c if c.isalnum() else "-" for c in name.lower()).strip("-").replace("--", "-")


def seeds_for(cfg):
    return [cfg.seed + i for i in range(cfg.ablation_seeds)]


def prepared_data(corpus, queries, splits):
    """Vocabulary plus tokenized corpus and the three query splits."""
    vocab = build_vocab([d.text for d in corpus])
    tok_corpus = tokenize_corpus(corpus, vocab)
    tok_queries = tokenize_queries(queries, vocab)
    parts = {k: select(tok_queries, splits[k]) for k in ("train", "dev", "test")}
    return vocab, tok_corpus, parts


def run_variant(cfg, variant, seed, vocab, corpus, parts, run_dir=None):
    """Train one variant with one seed; return its test metrics."""
    changes = {"reweight": variant.reweight, "weights_mode": variant.weights_mode}
    if not variant.use_image_query:
        changes["lam"] = 0.0
    vcfg = cfg.replace(**changes)
    model = CIEAModel(vcfg.model_config(len(vocab), init_seed=seed))
    result = train(model, corpus, parts["train"], parts["dev"], vcfg.train_config(seed=seed))
    index = EmbeddingIndex([d.id for d in corpus], encode_corpus(model, corpus))
    test = parts["test"]
    runs = search_batch(index, [q.qid for q in test], encode_query_batch(model, [q.tokens for q in test]),
                        max(cfg.top_k, 100))
    metrics = evaluate(runs, {q.qid: set(q.positives) for q in test})
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        write_log(result.log, run_dir / "train_log.jsonl")
        write_run_file(runs, run_dir / "test.run")
    return metrics, result


def run_ablation(cfg, corpus, queries, splits, out_dir=None, variants=ALL_VARIANTS):
    """Every variant over every seed. Returns per-seed rows and the wall time per run."""
    if cfg.ablation_seeds < 2:
        log.warning("with %d seed the standard deviation is undefined", cfg.ablation_seeds)
    vocab, tok_corpus, parts = prepared_data(corpus, queries, splits)
    rows, timing = [], []
    for variant in variants:
        for seed in seeds_for(cfg):
            run_dir = None if out_dir is None else Path(out_dir) / "runs" / f"{variant_slug(variant.name)}-s{seed}"
            t0 = time.perf_counter()
            metrics, _ = run_variant(cfg, variant, seed, vocab, tok_corpus, parts, run_dir)
            timing.append({"config": variant.name, "seed": seed, "seconds": time.perf_counter() - t0})
            rows.append({"config": variant.name, "seed": seed, **metrics})
            log.info("%s seed %d: mrr@10 %.4f", variant.name, seed, metrics["mrr@10"])
    return rows, timing


# --- aggregation ---------------------------------------------------------------

def summarize(rows):
    """Mean and sample standard deviation of every metric per configuration, in first-seen order."""
    order = list(dict.fromkeys(r["config"] for r in rows))
    out = {}
    for name in order:
        sub = [r for r in rows if r["config"] == name]
        entry = {"n": len(sub)}
        for col in METRIC_COLUMNS:
            vals = np.array([r[col] for r in sub], dtype=np.float64)
            entry[col] = (float(vals.mean()), float(vals.std(ddof=1)) if len(vals) > 1 else float("nan"))
        out[name] = entry
    return out


def pooled_standard_error(a, b):
    """Standard error of the difference of two sample means under a pooled variance."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    n1, n2 = len(a), len(b)
    if n1 < 2 or n2 < 2:
        return float("nan")
    pooled = ((n1 - 1) * a.var(ddof=1) + (n2 - 1) * b.var(ddof=1)) / (n1 + n2 - 2)
    return math.sqrt(pooled * (1.0 / n1 + 1.0 / n2))


def orderings(rows, metric="mrr@10", expected=EXPECTED_ORDERINGS):
    """Gap, pooled standard error and verdict for each expected pair present in ``rows``.

    A strict ordering holds when the gap exceeds one pooled standard error;
    a non-strict one when the better mean is at least the worse mean.
    """
    by = {}
    for r in rows:
        by.setdefault(r["config"], []).append(r[metric])
    out = []
    for better, worse, strict in expected:
        if better not in by or worse not in by:
            continue
        gap = float(np.mean(by[better]) - np.mean(by[worse]))
        se = pooled_standard_error(by[better], by[worse])
        holds = gap > se if strict else gap >= 0.0
        out.append({"better": better, "worse": worse, "metric": metric, "gap": gap,
                    "pooled_se": se, "rule": "gap > pooled SE" if strict else "gap >= 0", "holds": holds})
    return out


# --- files -----------------------------------------------------------------------

PER_SEED_FIELDS = ("config", "seed") + METRIC_COLUMNS


def write_per_seed(rows, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PER_SEED_FIELDS)
        for r in rows:
            w.writerow([r["config"], r["seed"]] + [repr(float(r[c])) for c in METRIC_COLUMNS])


def read_per_seed(path):
    path = Path(path)
    rows = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(header) != PER_SEED_FIELDS:
            raise ParseError(path, 1, f"expected header {','.join(PER_SEED_FIELDS)}")
        for lineno, rec in enumerate(reader, 2):
            if len(rec) != len(PER_SEED_FIELDS):
                raise ParseError(path, lineno, f"expected {len(PER_SEED_FIELDS)} fields, got {len(rec)}")
            try:
                rows.append({"config": rec[0], "seed": int(rec[1]),
                             **{c: float(v) for c, v in zip(METRIC_COLUMNS, rec[2:])}})
            except ValueError:
                raise ParseError(path, lineno, "seed must be an integer and metrics numbers") from None
    if not rows:
        raise ContractError(f"{path} holds no ablation runs")
    return rows


def write_summary_csv(summary, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "n"] + [f"{c}_{s}" for c in METRIC_COLUMNS for s in ("mean", "std")])
        for name, entry in summary.items():
            w.writerow([name, entry["n"]] + [repr(v) for c in METRIC_COLUMNS for v in entry[c]])


def write_orderings_csv(items, path):
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["better", "worse", "metric", "gap", "pooled_se", "rule", "holds"])
        for o in items:
            w.writerow([o["better"], o["worse"], o["metric"], repr(o["gap"]), repr(o["pooled_se"]),
                        o["rule"], str(o["holds"]).lower()])


def _cell(mean, std):
    if math.isnan(std):
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def markdown_report(summary, items):
    """Ablation table (rows in the fixed order, values x100 as mean ± std), weighting table, orderings."""
    header = "| Model | " + " | ".join(METRIC_COLUMNS) + " |"
    rule = "|" + "---|" * (len(METRIC_COLUMNS) + 1)
    lines = ["## Ablation", "", header, rule]
    for v in TABLE_ROWS:
        if v.name in summary:
            lines.append(f"| {v.name} | " + " | ".join(_cell(*summary[v.name][c]) for c in METRIC_COLUMNS) + " |")
    if SIMILAR.name in summary and "CIEA" in summary:
        lines += ["", "## Patch weighting", "", header, rule]
        for label, name in (("Dissimilar", "CIEA"), ("Similar", SIMILAR.name)):
            lines.append(f"| {label} | " + " | ".join(_cell(*summary[name][c]) for c in METRIC_COLUMNS) + " |")
    if items:
        lines += ["", "## Orderings", "", "| Better | Worse | Gap (mrr@10) | Pooled SE | Rule | Holds |",
                  "|---|---|---|---|---|---|"]
        for o in items:
            lines.append(f"| {o['better']} | {o['worse']} | {100 * o['gap']:.2f} | {100 * o['pooled_se']:.2f} "
                         f"| {o['rule']} | {'yes' if o['holds'] else 'no'} |")
    return "\n".join(lines) + "\n"


def write_reports(rows, out_dir):
    """Summary CSV, orderings CSV and the Markdown tables, all derived from the per-seed rows."""
    out_dir = Path(out_dir)
    summary = summarize(rows)
    items = orderings(rows)
    write_summary_csv(summary, out_dir / "ablation.csv")
    write_orderings_csv(items, out_dir / "orderings.csv")
    (out_dir / "ablation.md").write_text(markdown_report(summary, items), encoding="utf-8")
    return summary, items
