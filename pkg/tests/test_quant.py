import numpy as np
import pytest
from scipy import stats

from maxsim import (
    DocBatch,
    EmbeddingMatrix,
    EmptyDocument,
    KTooLarge,
    ShapeMismatch,
    dequantize,
    fused_score_batch,
    fused_score_int8,
    fused_score_pair,
    quantize_per_token,
    two_stage_topk,
)
from maxsim.quant import QuantizedMatrix, ZERO_ROW_SCALE
from maxsim.synth import make_queries, planted_corpus


def _lossless_pair(rng, rows_q, rows_d, dim):
    """Embeddings whose values are exact int multiples of a pow-2 step, so
    quantization is lossless and both score paths are exact."""
    step = np.float32(2.0**-7)
    def draw(rows):
        q = rng.integers(-127, 128, size=(rows, dim)).astype(np.float32)
        q[:, 0] = 127.0  # pin maxabs so the scale is exactly one step
        return EmbeddingMatrix(q * step)
    return draw(rows_q), draw(rows_d)


class TestQuantizePerToken:
    def test_half_even_rounding_row(self):
        qm = quantize_per_token(np.array([[0.5, -1.0]], np.float32))
        assert qm.scale[0] == np.float32(1.0 / 127.0)
        assert list(qm.q[0]) == [64, -127]  # 63.5 rounds to even 64

    def test_zero_row_gets_epsilon_scale(self):
        qm = quantize_per_token(np.zeros((1, 4), np.float32))
        assert qm.scale[0] == ZERO_ROW_SCALE
        assert not qm.q.any()

    def test_dequantized_within_half_step(self, rng):
        x = rng.standard_normal((32, 16)).astype(np.float32)
        qm = quantize_per_token(x)
        err = np.abs(dequantize(qm) - x)
        assert np.all(err <= qm.scale[:, None] / 2 + 1e-7)

    def test_range_symmetric(self, rng):
        qm = quantize_per_token(rng.standard_normal((64, 8)).astype(np.float32))
        assert qm.q.min() >= -127 and qm.q.max() <= 127

    def test_overflow_guard_on_dim(self):
        with pytest.raises(ShapeMismatch):
            QuantizedMatrix(q=np.zeros((1, 140_000), np.int8), scale=np.ones(1, np.float32))


class TestFusedScoreInt8:
    def test_lossless_inputs_match_full_precision_exactly(self, rng):
        q, d = _lossless_pair(rng, 6, 9, 16)
        score_full, arg_full, _ = fused_score_pair(q, d)
        score_int, arg_int = fused_score_int8(quantize_per_token(q), quantize_per_token(d))
        assert score_int == score_full
        assert np.array_equal(arg_int, arg_full)

    def test_argmax_valid_even_when_it_drifts(self, rng):
        q = make_queries(1, 8, 32, seed=17)[0]
        d = EmbeddingMatrix(rng.standard_normal((20, 32)).astype(np.float32))
        _, arg = fused_score_int8(quantize_per_token(q), quantize_per_token(d), valid_len=13)
        assert np.all((arg >= 0) & (arg < 13))

    def test_masking_applies(self, rng):
        q, d = _lossless_pair(rng, 3, 12, 8)
        s_full, _, _ = fused_score_pair(q, d, valid_len=5)
        s_int, _ = fused_score_int8(quantize_per_token(q), quantize_per_token(d), valid_len=5)
        assert s_int == s_full

    def test_empty_document_rejected(self, rng):
        q, d = _lossless_pair(rng, 2, 4, 8)
        with pytest.raises(EmptyDocument):
            fused_score_int8(quantize_per_token(q), quantize_per_token(d), valid_len=0)

    def test_ranking_fidelity_on_seeded_corpus(self):
        query = make_queries(1, 24, 64, seed=17)[0]
        corpus = planted_corpus(query, 256, 32, seed=18)
        docs = DocBatch(corpus)
        full, _, _ = fused_score_batch([query], docs)
        coarse = np.array([
            fused_score_int8(quantize_per_token(query), quantize_per_token(c.data))[0] for c in corpus
        ])
        rho = stats.spearmanr(full.values[0], coarse).statistic
        assert rho >= 0.99
        top = lambda s: set(np.argsort(-s)[:20])
        assert top(full.values[0]) == top(coarse)


class TestMonotoneFidelity:
    def test_correlation_non_decreasing_in_levels(self):
        query = make_queries(1, 16, 32, seed=29)[0]
        corpus = planted_corpus(query, 128, 24, seed=30, sim_lo=0.55, sim_hi=0.95)
        docs = DocBatch(corpus)
        full, _, _ = fused_score_batch([query], docs)
        rhos = []
        for levels in (3, 15, 127):
            coarse = np.array([
                fused_score_int8(
                    quantize_per_token(query, levels=levels),
                    quantize_per_token(c.data, levels=levels),
                )[0]
                for c in corpus
            ])
            rhos.append(stats.spearmanr(full.values[0], coarse).statistic)
        assert rhos[0] <= rhos[1] + 1e-12 and rhos[1] <= rhos[2] + 1e-12


class TestTwoStageTopK:
    def _setup(self, seed=17, n_docs=64):
        query = make_queries(1, 16, 32, seed=seed)[0]
        corpus = planted_corpus(query, n_docs, 20, seed=seed + 1)
        docs = DocBatch(corpus)
        corpus_q = [quantize_per_token(c.data) for c in corpus]
        return query, corpus, docs, corpus_q

    def test_k_equals_corpus_size_is_exhaustive_full_precision(self):
        query, corpus, docs, corpus_q = self._setup()
        got = two_stage_topk(query, corpus_q, docs, k=len(corpus))
        full, _, _ = fused_score_batch([query], docs)
        order = np.lexsort((np.arange(len(corpus)), -full.values[0]))
        expect = [(int(b), float(full.values[0][b])) for b in order]
        assert got == expect

    def test_shortlist_recovers_true_topk(self):
        query, corpus, docs, corpus_q = self._setup(seed=17, n_docs=256)
        got = two_stage_topk(query, corpus_q, docs, k=10, shortlist_factor=4)
        full, _, _ = fused_score_batch([query], docs)
        expect_ids = set(np.argsort(-full.values[0])[:10])
        assert {i for i, _ in got} == expect_ids
        scores = [s for _, s in got]
        assert scores == sorted(scores, reverse=True)

    def test_k_zero_empty(self):
        query, corpus, docs, corpus_q = self._setup()
        assert two_stage_topk(query, corpus_q, docs, k=0) == []

    def test_k_too_large(self):
        query, corpus, docs, corpus_q = self._setup()
        with pytest.raises(KTooLarge):
            two_stage_topk(query, corpus_q, docs, k=len(corpus) + 1)
