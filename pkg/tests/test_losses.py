import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ciea import tensor as T
from ciea.data import MASK, build_vocab, tokenize
from ciea.errors import ContractError
from ciea.losses import (LossConfig, find_overlap_segments, image_query, info_nce, loss_comp,
                         loss_contrastive, loss_total, mask_query)
from ciea.tensor import Tensor

seqs = st.lists(st.integers(4, 9), max_size=12)


def unit(v):
    v = np.asarray(v, dtype=float)
    return Tensor(v / np.linalg.norm(v))


def brute_segments(q, doc, min_len):
    """Greedy longest-first scan using plain substring search over all lengths."""
    doc_s = "," + ",".join(map(str, doc)) + ","
    out, i = [], 0
    while i < len(q):
        for length in range(len(q) - i, min_len - 1, -1):
            if "," + ",".join(map(str, q[i:i + length])) + "," in doc_s:
                out.append((i, length))
                i += length
                break
        else:
            i += 1
    return out


class TestSegments:
    def test_full_containment(self):
        assert find_overlap_segments([5, 6, 7], [1, 5, 6, 7, 2]) == [(0, 3)]

    def test_no_shared_tokens(self):
        assert find_overlap_segments([5, 6], [7, 8]) == []

    def test_repeated_segment(self):
        assert find_overlap_segments([5, 6, 5, 6], [5, 6]) == [(0, 2), (2, 2)]

    def test_single_token_overlap_ignored_at_default(self):
        assert find_overlap_segments([5, 9, 6], [5, 6]) == []
        assert find_overlap_segments([5, 9, 6], [5, 6], min_len=1) == [(0, 1), (2, 1)]

    @given(seqs, seqs, st.integers(1, 3))
    def test_matches_substring_oracle(self, q, doc, min_len):
        assert find_overlap_segments(q, doc, min_len) == brute_segments(q, doc, min_len)


class TestMasking:
    def test_no_spans_is_identity(self):
        assert mask_query((5, 6, 7), []).tokens == (5, 6, 7)

    def test_caption_phrase_is_masked(self):
        caption = "madison square garden in new york"
        query = "what color is the roof of madison square garden in new york"
        vocab = build_vocab([caption, query])
        masked = image_query(tokenize(query, vocab), tokenize(caption, vocab))
        kept = [vocab.token(t) for t in masked.tokens if t != MASK]
        assert kept == ["what", "color", "is", "the", "roof", "of"]
        assert masked.masked_spans == ((6, 6),)

    def test_all_positions(self):
        assert mask_query((5, 6), [(0, 2)]).tokens == (MASK, MASK)

    def test_overlapping_spans(self):
        with pytest.raises(ContractError):
            mask_query((5, 6, 7), [(0, 2), (1, 2)])

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            mask_query((5, 6), [(1, 2)])

    @given(seqs, seqs)
    def test_length_preserved(self, q, doc):
        m = image_query(q, doc)
        assert len(m.tokens) == len(q)
        covered = [i for s, n in m.masked_spans for i in range(s, s + n)]
        assert len(covered) == len(set(covered))
        assert all((m.tokens[i] == MASK) == (i in covered) or q[i] == MASK for i in range(len(q)))


class TestContrastive:
    @pytest.mark.parametrize("tau", [0.01, 0.1, 1.0])
    @pytest.mark.parametrize("n", [1, 3, 5])
    def test_all_equal_cosines(self, tau, n):
        q = unit([1.0, 0.0])
        docs = [unit([1.0, 1.0])] * (n + 1)
        assert loss_contrastive(q, docs[0], docs[1:], tau).item() == pytest.approx(math.log(1 + n), abs=1e-12)

    def test_extreme_cosines_small_temperature(self):
        q = unit([1.0, 0.0])
        val = loss_contrastive(q, unit([1.0, 0.0]), [unit([-1.0, 0.0])], 0.01).item()
        assert np.isfinite(val) and 0.0 <= val < 1e-80
        worst = loss_contrastive(q, unit([-1.0, 0.0]), [unit([1.0, 0.0])], 1e-4).item()
        assert worst == pytest.approx(2e4, rel=1e-12)

    def test_high_precision_oracle(self, rng):
        vecs = [rng.standard_normal(6) for _ in range(5)]
        q, pos, negs = unit(vecs[0]), unit(vecs[1]), [unit(v) for v in vecs[2:]]
        got = loss_contrastive(q, pos, negs, 0.01).item()
        with mpmath.workdps(50):
            def cos(a, b):
                a = [mpmath.mpf(x) for x in a.values]
                b = [mpmath.mpf(x) for x in b.values]
                return mpmath.fsum(x * y for x, y in zip(a, b))
            num = mpmath.exp(cos(q, pos) / mpmath.mpf("0.01"))
            den = num + mpmath.fsum(mpmath.exp(cos(q, n) / mpmath.mpf("0.01")) for n in negs)
            ref = -mpmath.log(num / den)
        assert got == pytest.approx(float(ref), rel=1e-12, abs=1e-12)

    def test_invalid_temperature(self):
        with pytest.raises(ContractError):
            loss_contrastive(unit([1, 0]), unit([1, 0]), [unit([0, 1])], 0.0)

    def test_needs_negatives(self):
        with pytest.raises(ContractError):
            loss_contrastive(unit([1, 0]), unit([1, 0]), [], 0.1)

    def test_positive_and_decreasing_in_positive_cosine(self):
        q, neg = unit([1.0, 0.0]), [unit([0.0, 1.0])]
        vals = [loss_contrastive(q, unit([np.cos(a), np.sin(a)]), neg, 0.1).item()
                for a in np.linspace(np.pi, 0, 20)]
        assert all(v > 0 for v in vals)
        assert all(a > b for a, b in zip(vals, vals[1:]))

    def test_invariant_to_negative_order(self, rng):
        q, pos = unit(rng.standard_normal(4)), unit(rng.standard_normal(4))
        negs = [unit(rng.standard_normal(4)) for _ in range(4)]
        a = loss_contrastive(q, pos, negs, 0.05).item()
        assert a == pytest.approx(loss_contrastive(q, pos, negs[::-1], 0.05).item(), abs=1e-14)

    def test_image_loss_shares_the_kernel(self, rng):
        q, pos = unit(rng.standard_normal(4)), unit(rng.standard_normal(4))
        negs = [unit(rng.standard_normal(4)) for _ in range(5)]
        assert loss_comp(q, pos, negs, 0.2).item() == loss_contrastive(q, pos, negs, 0.2).item()

    def test_image_loss_all_equal(self):
        docs = [unit([0.3, 0.7])] * 6
        assert loss_comp(unit([1.0, 0.0]), docs[0], docs[1:], 0.01).item() == pytest.approx(math.log(6), abs=1e-12)

    def test_batched_kernel_masks_invalid_columns(self):
        scores = Tensor([[0.5, 0.2, 0.9]])
        full = info_nce(scores, [0], None, 0.1).item()
        masked = info_nce(scores, [0], np.array([[True, True, False]]), 0.1).item()
        assert masked == pytest.approx(math.log(1 + math.exp(-3.0)), abs=1e-14)
        assert full > masked


class TestTotal:
    def test_lambda_zero_is_contrastive_exactly(self):
        assert loss_total(Tensor(1.234), Tensor(9.0), 0.0).item() == 1.234

    def test_sum(self):
        assert loss_total(Tensor(2.0), Tensor(3.0), 1.0).item() == 5.0

    def test_gradient_is_linear(self, rng):
        x = Tensor(rng.standard_normal(3), requires_grad=True)
        c1, c2, lam = rng.standard_normal(3), rng.standard_normal(3), 0.37

        def grad(fn):
            x.grad = None
            with T.Tape() as tape:
                loss = fn()
            tape.backward(loss)
            return x.grad.copy()

        g1 = grad(lambda: T.tanh(x * c1).sum())
        g2 = grad(lambda: T.exp(x * c2).sum())
        gt = grad(lambda: loss_total(T.tanh(x * c1).sum(), T.exp(x * c2).sum(), lam))
        np.testing.assert_allclose(gt, g1 + lam * g2, atol=1e-12)


def test_loss_config_validation():
    LossConfig()
    for bad in (dict(temperature=0.0), dict(lam=-1.0), dict(negatives=0)):
        with pytest.raises(ContractError):
            LossConfig(**bad)
