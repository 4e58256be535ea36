import numpy as np
import pytest

from ciea import tensor as T
from ciea.errors import ContractError
from ciea.training import (Example, TrainConfig, batch_loss, epoch_batches, mine_hard_negatives,
                           prepare_examples, read_hard_negatives, sample_in_batch_negatives, train,
                           write_hard_negatives)

from helpers import tiny_data, tiny_model


def ex(qid, pos, positives=None):
    return Example(qid, (4,), (4,), pos, frozenset(positives or {pos}))


class TestInBatch:
    def test_counts(self):
        negs = sample_in_batch_negatives([ex("a", 0), ex("b", 1), ex("c", 2)])
        assert [len(n) for n in negs] == [2, 2, 2]

    def test_shared_positive_excluded(self):
        negs = sample_in_batch_negatives([ex("a", 0, {0, 1}), ex("b", 1), ex("c", 1)])
        assert negs[0] == []
        assert negs[1] == [0] and negs[2] == [0]

    def test_single_query_batch(self):
        with pytest.raises(ContractError):
            sample_in_batch_negatives([ex("a", 0)])

    def test_epoch_batches_deterministic(self):
        a = epoch_batches(49, 16, np.random.default_rng(3))
        b = epoch_batches(49, 16, np.random.default_rng(3))
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        assert sum(len(x) for x in a) == 48  # a trailing batch of one has no negatives
        assert min(len(x) for x in a) >= 2


class TestMining:
    def test_clamped_with_warning(self, caplog):
        spec, vocab, corpus, queries, _ = tiny_data(n_docs=5, group_size=1, n_concepts=4, n_attributes=4)
        mined = mine_hard_negatives(tiny_model(vocab, spec), corpus, queries, 100)
        assert all(len(v) == 4 for v in mined.values())
        assert "clamping" in caplog.text

    def test_positives_excluded(self):
        spec, vocab, corpus, queries, _ = tiny_data()
        mined = mine_hard_negatives(tiny_model(vocab, spec), corpus, queries, 10)
        assert all(not set(mined[q.qid]) & set(q.positives) for q in queries)

    def test_brute_force_pool_three(self):
        spec, vocab, corpus, queries, _ = tiny_data(n_docs=20, group_size=4)
        model = tiny_model(vocab, spec, seed=5)
        mined = mine_hard_negatives(model, corpus, queries, 3)
        from ciea.document import encode_document
        from ciea.encoder import encode_query
        docs = {d.id: encode_document(d, model).vector.values for d in corpus}
        for q in queries:
            qv = encode_query(q.tokens, model.encoder).values
            scored = sorted(((-float(np.dot(qv, v)), i) for i, v in docs.items() if i not in q.positives))
            assert mined[q.qid] == [i for _, i in scored[:3]]

    def test_file_round_trip(self, tmp_path):
        hard = {"q1": ["d3", "d1"], "q2": []}
        write_hard_negatives(hard, tmp_path / "h.jsonl")
        assert read_hard_negatives(tmp_path / "h.jsonl") == hard


class TestBatchLoss:
    def setup_method(self):
        self.spec, self.vocab, self.corpus, self.queries, self.parts = tiny_data()
        self.examples = prepare_examples(self.parts["train"], self.corpus)

    def test_lambda_zero_total_is_contrastive(self):
        model = tiny_model(self.vocab, self.spec)
        cfg = TrainConfig.desk(lam=0.0)
        total, l_c, l_comp = batch_loss(model, self.corpus, self.examples[:8], cfg, np.random.default_rng(0))
        assert total.item() == l_c.item()
        with T.Tape():
            total, l_c, l_comp = batch_loss(model, self.corpus, self.examples[:8], cfg, np.random.default_rng(0))
        assert l_comp is None and total is l_c

    def test_lambda_combines(self):
        model = tiny_model(self.vocab, self.spec)
        cfg = TrainConfig.desk(lam=0.3)
        total, l_c, l_comp = batch_loss(model, self.corpus, self.examples[:8], cfg, np.random.default_rng(0))
        assert total.item() == pytest.approx(l_c.item() + 0.3 * l_comp.item(), abs=1e-12)

    def test_image_loss_gradients_skip_frozen(self):
        model = tiny_model(self.vocab, self.spec)
        cfg = TrainConfig.desk(lam=1.0)
        with T.Tape() as tape:
            _, _, l_comp = batch_loss(model, self.corpus, self.examples[:8], cfg, np.random.default_rng(0))
        tape.backward(l_comp)
        for name in ("proj.weight", "extractor.wq", "extractor.wk", "extractor.wv"):
            assert np.any(model.named_parameters()[name].grad != 0), name
        assert model.frozen.weight.grad is None

    def test_loss_decreases_on_fixed_batch(self):
        from ciea.optim import AdamW
        cfg = TrainConfig.desk(lam=0.5)
        for seed in range(5):
            model = tiny_model(self.vocab, self.spec, seed=seed)
            opt = AdamW(model.named_parameters(), 1e-3)
            batch = self.examples[8 * seed:8 * seed + 8]
            losses = []
            for _ in range(11):
                with T.Tape() as tape:
                    total, _, _ = batch_loss(model, self.corpus, batch, cfg, np.random.default_rng(0))
                losses.append(total.item())
                opt.zero_grad()
                tape.backward(total)
                opt.step()
            assert all(a > b for a, b in zip(losses, losses[1:])), (seed, losses)


class TestTrain:
    def cfg(self, **kw):
        base = dict(epochs=2, hard_epochs=1, batch_size=8, eval_every_steps=4, hard_neg_pool=5, seed=1)
        base.update(kw)
        return TrainConfig.desk(**base)

    def test_deterministic(self):
        spec, vocab, corpus, _, parts = tiny_data()
        runs = []
        for _ in range(2):
            model = tiny_model(vocab, spec)
            res = train(model, corpus, parts["train"], parts["dev"], self.cfg())
            runs.append((model.state_dict(), res.log, res.hard_negatives))
        (s1, l1, h1), (s2, l2, h2) = runs
        assert all(np.array_equal(s1[k], s2[k]) for k in s1)
        assert l1 == l2 and h1 == h2

    def test_frozen_weights_unchanged(self):
        spec, vocab, corpus, _, parts = tiny_data()
        model = tiny_model(vocab, spec)
        digest = model.frozen.digest()
        train(model, corpus, parts["train"], parts["dev"], self.cfg())
        assert model.frozen.digest() == digest

    def test_early_stopping_window(self):
        spec, vocab, corpus, _, parts = tiny_data()
        model = tiny_model(vocab, spec)
        cfg = self.cfg(epochs=30, negative_mode="in_batch", early_stop_patience=2, eval_every_steps=1,
                       learning_rate=1e-2)
        res = train(model, corpus, parts["train"], parts["dev"], cfg)
        evals = [r for r in res.log if "eval_step" in r]
        best = max(range(len(evals)), key=lambda i: (evals[i]["mrr@10"], -i))
        assert len(evals) - 1 - best <= cfg.early_stop_patience + 1
        assert res.steps < 30 * (len(parts["train"]) // 8)

    def test_ends_on_best_state(self):
        spec, vocab, corpus, _, parts = tiny_data()
        model = tiny_model(vocab, spec)
        res = train(model, corpus, parts["train"], parts["dev"], self.cfg())
        from ciea.training import evaluate_mrr
        assert evaluate_mrr(model, corpus, parts["dev"]) == res.best_mrr

    def test_hard_phase_excludes_positives(self):
        spec, vocab, corpus, queries, parts = tiny_data()
        res = train(tiny_model(vocab, spec), corpus, parts["train"], parts["dev"], self.cfg())
        pos = {q.qid: set(q.positives) for q in queries}
        assert res.hard_negatives and all(not set(v) & pos[q] for q, v in res.hard_negatives.items())

    def test_lambda_zero_logs_no_image_loss(self):
        spec, vocab, corpus, _, parts = tiny_data()
        res = train(tiny_model(vocab, spec), corpus, parts["train"], parts["dev"], self.cfg(lam=0.0))
        steps = [r for r in res.log if "step" in r]
        assert steps and all(r["l_comp"] is None and r["loss"] == r["l_c"] for r in steps)

    def test_invalid_config(self):
        with pytest.raises(ContractError):
            TrainConfig(negative_mode="random")
        with pytest.raises(ContractError):
            TrainConfig(batch_size=0)

    def test_full_scale_defaults(self):
        cfg = TrainConfig()
        assert (cfg.epochs, cfg.batch_size, cfg.learning_rate, cfg.eval_every_steps,
                cfg.early_stop_patience, cfg.hard_neg_pool, cfg.temperature, cfg.lam) == \
            (40, 64, 5e-6, 500, 5, 100, 0.01, 0.0011)
