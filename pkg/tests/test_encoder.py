import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ciea import tensor as T
from ciea.data import PAD
from ciea.encoder import (EncoderConfig, EncoderParams, embed, encode_query, encode_texts, pad_batch,
                          pool, trans)
from ciea.errors import ContractError
from ciea.tensor import Tensor

from conftest import fd_check


def params(seed=0, **kw):
    cfg = EncoderConfig(**{"vocab_size": 30, "dim": 8, "layers": 2, "heads": 2, "ffn_dim": 16, "max_len": 16, **kw})
    return EncoderParams(cfg, np.random.default_rng(seed))


class TestConfig:
    def test_heads_must_divide_dim(self):
        with pytest.raises(ContractError):
            EncoderConfig(vocab_size=10, dim=10, heads=3)

    def test_parameter_count_fixed(self):
        p = params()
        n = sum(t.data.size for t in p.named().values())
        assert n == sum(t.data.size for t in params(seed=9).named().values())


class TestEmbed:
    def test_single_token_with_zero_positions(self):
        p = params()
        p.pos_emb.data[:] = 0.0
        np.testing.assert_array_equal(embed([5], p).values, p.tok_emb.values[[5]])

    def test_shape(self):
        assert embed([5, 6], params()).shape == (2, 8)

    def test_empty(self):
        assert embed([], params()).shape == (0, 8)

    def test_out_of_range(self):
        with pytest.raises(ContractError):
            embed([30], params())

    def test_perturbing_a_row_changes_only_its_occurrences(self):
        p = params()
        seq = [4, 7, 4, 9]
        before = embed(seq, p).values.copy()
        p.tok_emb.data[4] += 1.0
        changed = np.any(embed(seq, p).values != before, axis=1)
        assert changed.tolist() == [True, False, True, False]


class TestTrans:
    def test_no_layers_is_identity(self, rng):
        p = params(layers=0)
        x = Tensor(rng.standard_normal((5, 8)))
        np.testing.assert_array_equal(trans(x, np.ones(5, bool), p).values, x.values)

    def test_all_pad_gives_zeros(self, rng):
        out = trans(Tensor(rng.standard_normal((4, 8))), np.zeros(4, bool), params())
        assert np.all(out.values == 0.0)

    def test_permutation_equivariance_without_positions(self, rng):
        p = params()
        x = rng.standard_normal((5, 8))
        perm = np.array([0, 3, 2, 1, 4])
        a = trans(Tensor(x), np.ones(5, bool), p).values
        b = trans(Tensor(x[perm]), np.ones(5, bool), p).values
        np.testing.assert_allclose(b, a[perm], atol=1e-12)

    def test_pad_invariance(self):
        p = params()
        a = encode_texts([[5, 6, 7]], p).values
        ids = np.array([[5, 6, 7, PAD, PAD]])
        hidden = trans(embed(ids, p), ids != PAD, p)
        np.testing.assert_allclose(pool(hidden).values, a, atol=1e-12)


class TestEncodeQuery:
    @given(st.lists(st.integers(4, 29), min_size=1, max_size=10))
    def test_unit_norm(self, toks):
        assert abs(np.linalg.norm(encode_query(toks, params()).values) - 1.0) < 1e-9

    def test_identical_queries(self):
        p = params()
        assert np.array_equal(encode_query([4, 5], p).values, encode_query([4, 5], p).values)

    def test_batch_matches_single(self):
        p = params()
        batch = encode_texts([[4, 5, 6], [7]], p).values
        np.testing.assert_allclose(batch[1], encode_query([7], p).values, atol=1e-12)

    def test_empty_query(self):
        with pytest.raises(ContractError):
            encode_query([], params())

    def test_pools_position_zero(self):
        p = params()
        ids = np.array([[4, 5, 6]])
        hidden = trans(embed(ids, p), np.ones((1, 3), bool), p).values[0, 0]
        np.testing.assert_allclose(encode_query([4, 5, 6], p).values, hidden / np.linalg.norm(hidden), atol=1e-14)

    def test_gradient_all_parameters(self, rng):
        p = params(dim=4, heads=2, ffn_dim=6, vocab_size=8)
        target = Tensor(rng.standard_normal(4))
        tensors = list(p.named().values())
        assert fd_check(lambda *_: T.cosine(encode_query([4, 5, 6], p), target), tensors) < 1e-4


def test_pad_batch_masks_explicit_pad():
    ids, mask = pad_batch([[4, PAD, 5], [6]])
    assert ids.tolist() == [[4, 0, 5], [6, 0, 0]]
    assert mask.tolist() == [[True, False, True], [True, False, False]]
