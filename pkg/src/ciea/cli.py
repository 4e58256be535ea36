"""Command-line entry point: ``ciea <command> [options]``.

Exit codes: 0 success, 1 contract error (bad configuration or data that
violates an invariant), 2 I/O or parse error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from . import checkpoint
from .ablation import (prepared_data, read_per_seed, run_ablation, summarize, write_per_seed,
                       write_reports)
from .config import RunConfig
from .data import (build_vocab, gen_synthetic, load_corpus, load_queries, read_qrels, tokenize_corpus,
                   tokenize_queries, write_corpus, write_qrels, write_queries)
from .document import CIEAModel, encode_corpus, encode_query_batch
from .errors import CieaError, ContractError, ParseError
from .retrieval import METRIC_COLUMNS, EmbeddingIndex, evaluate, read_run_file, search_batch, write_run_file
from .training import train, write_hard_negatives

log = logging.getLogger("ciea")

SPLITS = ("train", "dev", "test")


class MissingInput(OSError):
    """An upstream artifact is absent; the message names the command that produces it."""


def _require(path, producer):
    path = Path(path)
    if not path.exists():
        raise MissingInput(f"{path} not found; create it with `ciea {producer}`")
    return path


def _prepare_out_dir(path, force):
    path = Path(path)
    if path.exists() and any(path.iterdir()) and not force:
        raise ContractError(f"output directory {path} is not empty; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _prepare_out_file(path, force):
    path = Path(path)
    if path.exists() and not force:
        raise ContractError(f"{path} exists; pass --force to overwrite")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# --- configuration ----------------------------------------------------------------

def _add_config_flags(p):
    p.add_argument("--config", help="JSON file of configuration keys")
    group = p.add_argument_group("configuration keys")
    for key in RunConfig.keys():
        if key == "out_dir":
            continue
        group.add_argument("--" + key.replace("_", "-"), dest="cfg_" + key, default=None, metavar="V")


def _resolve_config(args, base=None):
    """Defaults, then ``base`` (e.g. the data directory's saved config), then --config, then flags."""
    merged = dict(base or {})
    merged.pop("out_dir", None)
    if getattr(args, "config", None):
        loaded = RunConfig.load(_require(args.config, "gen-data"))
        merged.update({k: v for k, v in loaded.to_dict().items() if k != "out_dir"})
    for key in RunConfig.keys():
        value = getattr(args, "cfg_" + key, None)
        if value is not None:
            merged[key] = value
    merged["out_dir"] = str(args.out)
    return RunConfig.from_dict(merged)


def _data_config(data_dir):
    path = Path(data_dir) / "config.json"
    if not path.exists():
        return {}
    return RunConfig.load(path).to_dict()


def _load_data(data_dir):
    data_dir = Path(data_dir)
    corpus = load_corpus(_require(data_dir / "corpus.jsonl", "gen-data"))
    ids = {d.id for d in corpus}
    queries, splits = [], {}
    for split in SPLITS:
        part = load_queries(_require(data_dir / f"queries_{split}.jsonl", "gen-data"), ids)
        splits[split] = [q.qid for q in part]
        queries.extend(part)
    return corpus, queries, splits


# --- commands -------------------------------------------------------------------------

def cmd_gen_data(args):
    out = _prepare_out_dir(args.out, args.force)
    cfg = _resolve_config(args)
    data = gen_synthetic(cfg.synthetic_spec(), cfg.seed)
    write_corpus(data.corpus, out / "corpus.jsonl")
    by_id = {q.qid: q for q in data.queries}
    for split in SPLITS:
        write_queries([by_id[q] for q in data.splits[split]], out / f"queries_{split}.jsonl")
    write_qrels(data.qrels, out / "qrels.tsv")
    manifest = {
        "seed": cfg.seed,
        "complementary_fraction": cfg.complementary_fraction,
        "n_docs": len(data.corpus),
        "n_queries": len(data.queries),
        "splits": {k: len(v) for k, v in data.splits.items()},
        "complementary_queries": sorted(q for q, c in data.complementary.items() if c),
    }
    _write_json(manifest, out / "manifest.json")
    cfg.save(out / "config.json")
    print(f"wrote {len(data.corpus)} documents and {len(data.queries)} queries to {out}")


def cmd_train(args):
    cfg = _resolve_config(args, _data_config(args.data))
    corpus, queries, splits = _load_data(args.data)
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.json")
    vocab, tok_corpus, parts = prepared_data(corpus, queries, splits)
    model = CIEAModel(cfg.model_config(len(vocab)))
    result = train(model, tok_corpus, parts["train"], parts["dev"], cfg.train_config(),
                   log_path=out / "train_log.jsonl")
    checkpoint.save_model(model, out / "model", vocab,
                          {"best_dev_mrr@10": result.best_mrr, "best_step": result.best_step})
    if result.hard_negatives:
        write_hard_negatives(result.hard_negatives, out / "hard_negatives.jsonl")
    print(f"best dev mrr@10 {result.best_mrr:.4f} at step {result.best_step} ({result.steps} steps)")


def _load_checkpoint(train_dir):
    stem = Path(train_dir) / "model"
    _require(stem.with_suffix(".json"), "train")
    _require(stem.with_suffix(".bin"), "train")
    model, vocab, meta = checkpoint.load_model(stem)
    if vocab is None:
        raise ContractError(f"checkpoint {stem} carries no vocabulary")
    return model, vocab


def cmd_encode(args):
    model, vocab = _load_checkpoint(args.checkpoint)
    corpus = tokenize_corpus(load_corpus(_require(Path(args.data) / "corpus.jsonl", "gen-data")), vocab)
    out = _prepare_out_dir(args.out, args.force)
    vectors = encode_corpus(model, corpus)
    checkpoint.save_encoded(out / "encoded", [d.id for d in corpus], vectors)
    print(f"encoded {len(corpus)} documents into {out / 'encoded.bin'}")


def cmd_search(args):
    model, vocab = _load_checkpoint(args.checkpoint)
    stem = Path(args.encoded) / "encoded"
    _require(stem.with_suffix(".json"), "encode")
    ids, vectors, _ = checkpoint.load_encoded(stem)
    qpath = Path(args.queries) if args.queries else Path(args.data) / f"queries_{args.split}.jsonl"
    queries = tokenize_queries(load_queries(_require(qpath, "gen-data")), vocab)
    empty = [q.qid for q in queries if not q.tokens]
    if empty:
        log.warning("%d queries have no in-vocabulary tokens and score every document 0", len(empty))
    out = _prepare_out_file(args.out, args.force)
    index = EmbeddingIndex(ids, vectors)
    runs = search_batch(index, [q.qid for q in queries], _query_vectors(model, queries), args.k)
    write_run_file(runs, out, tag=args.tag)
    print(f"wrote top-{min(args.k, len(index))} results for {len(queries)} queries to {out}")


def _query_vectors(model, queries):
    import numpy as np

    vecs = np.zeros((len(queries), model.config.dim))
    live = [i for i, q in enumerate(queries) if q.tokens]
    if live:
        vecs[live] = encode_query_batch(model, [queries[i].tokens for i in live])
    return vecs


def cmd_eval(args):
    runs = read_run_file(_require(args.run, "search"))
    qrels = read_qrels(_require(args.qrels, "gen-data"))
    metrics = evaluate(runs, qrels)
    text = ",".join(METRIC_COLUMNS) + "\n" + ",".join(f"{metrics[c]:.6f}" for c in METRIC_COLUMNS) + "\n"
    if args.out:
        _prepare_out_file(args.out, args.force).write_text(text, encoding="utf-8")
    sys.stdout.write(text)


def cmd_ablate(args):
    cfg = _resolve_config(args, _data_config(args.data))
    corpus, queries, splits = _load_data(args.data)
    out = _prepare_out_dir(args.out, args.force)
    cfg.save(out / "config.json")
    t0 = time.perf_counter()
    rows, timing = run_ablation(cfg, corpus, queries, splits, out_dir=out)
    write_per_seed(rows, out / "per_seed.csv")
    _write_json({"total_seconds": time.perf_counter() - t0, "runs": timing}, out / "timing.json")
    _render(rows, out, [])
    print((out / "ablation.md").read_text(encoding="utf-8"), end="")


def _render(rows, out, train_logs):
    from .plotting import plot_ablation, plot_training

    summary, _ = write_reports(rows, out)
    plot_ablation(summary, out / "ablation.png")
    for path in train_logs:
        records = [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
        name = Path(path).parent.name or "train"
        plot_training(records, out / f"training_{name}.png", title=name)
    return summary


def cmd_report(args):
    rows = read_per_seed(_require(Path(args.ablation) / "per_seed.csv", "ablate"))
    logs = [_require(Path(d) / "train_log.jsonl", "train") for d in args.train or []]
    out = _prepare_out_dir(args.out, args.force)
    _render(rows, out, logs)
    print((out / "ablation.md").read_text(encoding="utf-8"), end="")


# --- parser -----------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="ciea", description="Multimodal dense retrieval with "
                                     "complementary image information, at desk scale.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus, queries and qrels")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a generated data directory")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="encode a corpus with a trained checkpoint")
    p.add_argument("--checkpoint", required=True, help="directory written by `ciea train`")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("search", help="rank an encoded corpus for a query file")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--encoded", required=True, help="directory written by `ciea encode`")
    p.add_argument("--data", help="data directory; queries come from queries_<split>.jsonl")
    p.add_argument("--split", default="test", choices=SPLITS)
    p.add_argument("--queries", help="explicit query JSONL file (overrides --data/--split)")
    p.add_argument("--k", type=int, default=100)
    p.add_argument("--tag", default="ciea")
    p.add_argument("--out", required=True, help="run file to write")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="score a run file against qrels")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--out", help="also write the metrics CSV here")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train every ablation variant over several seeds")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    _add_config_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("report", help="tables and figures from ablation results and training logs")
    p.add_argument("--ablation", required=True, help="directory written by `ciea ablate`")
    p.add_argument("--train", nargs="*", help="training directories whose logs to plot")
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "search" and not (args.queries or args.data):
        parser.error("search needs --data or --queries")
    if args.command == "search" and args.k < 1:
        parser.error("--k must be at least 1")
    try:
        args.func(args)
    except (ParseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CieaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
