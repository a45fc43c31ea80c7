import numpy as np
import pytest

from maxsim import (
    DimMismatch,
    DocBatch,
    EmbeddingMatrix,
    EmptyDocument,
    TrafficReport,
    backward_dispatch,
    dense_backward,
    fused_score_batch,
    fused_score_pair,
    fused_score_varlen,
    pack,
    unpack,
)
from maxsim.reference import dense_score_batch
from maxsim.synth import doc_lengths, fill_ratio, make_corpus, make_queries

from conftest import random_queries


class TestPack:
    def test_offsets_for_two_docs(self, rng):
        docs = [rng.standard_normal((2, 4)).astype(np.float32), rng.standard_normal((3, 4)).astype(np.float32)]
        packed = pack(docs)
        assert list(packed.cu_seqlens) == [0, 2, 5]

    def test_single_doc(self, rng):
        packed = pack([rng.standard_normal((7, 3)).astype(np.float32)])
        assert list(packed.cu_seqlens) == [0, 7]

    def test_roundtrip_100_random_docs(self, rng):
        docs = [
            EmbeddingMatrix(rng.standard_normal((int(rng.integers(1, 20)), 6)).astype(np.float32))
            for _ in range(100)
        ]
        back = unpack(pack(docs))
        assert len(back) == 100
        for a, b in zip(docs, back):
            assert np.array_equal(a.data, b.data)

    def test_empty_doc_rejected(self, rng):
        with pytest.raises(EmptyDocument) as exc:
            pack([rng.standard_normal((2, 4)), np.zeros((0, 4), np.float32)])
        assert exc.value.index == 1

    def test_dim_mismatch(self, rng):
        with pytest.raises(DimMismatch):
            pack([rng.standard_normal((2, 4)), rng.standard_normal((2, 5))])


class TestFusedScoreVarlen:
    def test_bit_identical_to_per_document_pairs(self, rng):
        query = random_queries(rng, 1, 9, 8)[0]
        docs = [
            EmbeddingMatrix(rng.standard_normal((int(rng.integers(1, 30)), 8)).astype(np.float32))
            for _ in range(12)
        ]
        scores, argmax, _ = fused_score_varlen(query, pack(docs))
        for b, doc in enumerate(docs):
            p_score, p_arg, _ = fused_score_pair(query, doc)
            assert scores[b] == p_score
            assert np.array_equal(argmax.indices[0, b], p_arg)

    def test_equal_lengths_match_dense_batch_with_unit_work_ratio(self, rng):
        query = random_queries(rng, 1, 6, 8)[0]
        docs = [EmbeddingMatrix(rng.standard_normal((10, 8)).astype(np.float32)) for _ in range(5)]
        rep_packed = TrafficReport()
        scores, _, _ = fused_score_varlen(query, pack(docs), report=rep_packed)
        rep_padded = TrafficReport()
        dense, _, _ = fused_score_batch([query], DocBatch(docs), report=rep_padded)
        assert np.array_equal(scores, dense.values[0])
        assert rep_packed.mac_count == rep_padded.mac_count

    def test_mac_count_exact(self, rng):
        query = random_queries(rng, 1, 7, 4)[0]
        lens = [3, 11, 1, 8]
        docs = [EmbeddingMatrix(rng.standard_normal((l, 4)).astype(np.float32)) for l in lens]
        _, _, rep = fused_score_varlen(query, pack(docs))
        assert rep.mac_count == 2 * 7 * sum(lens) * 4

    @pytest.mark.parametrize("dist,target", [("const", 1.0), ("uniform", 0.75), ("hotpot", 0.30), ("ragged", 0.16)])
    def test_work_ratio_equals_fill_ratio(self, dist, target):
        max_len = 96
        lens = doc_lengths(dist, 48, max_len, seed=2)
        corpus = make_corpus(48, lens, 16, seed=3)
        query = make_queries(1, 12, 16, seed=4)[0]
        rho = fill_ratio(lens, max_len)
        assert abs(rho - target) < 0.08
        rep_packed = TrafficReport()
        fused_score_varlen(query, pack(corpus), report=rep_packed)
        rep_padded = TrafficReport()
        fused_score_batch([query], DocBatch(corpus, padded_len=max_len), report=rep_padded)
        assert rep_packed.mac_count / rep_padded.mac_count == pytest.approx(rho, abs=1e-12)


class TestVarlenBackward:
    def test_packed_argmax_feeds_backward_unchanged(self, rng):
        # same gradients as the padded path, restricted to the real rows
        query = random_queries(rng, 1, 5, 8)[0]
        lens = [4, 9, 2]
        docs = [EmbeddingMatrix(rng.standard_normal((l, 8)).astype(np.float32)) for l in lens]
        packed = pack(docs)
        g = rng.standard_normal((1, 3))

        _, argmax_packed, _ = fused_score_varlen(query, packed)
        d_q_p, d_d_p = backward_dispatch(argmax_packed, g, [query], packed)

        batch = DocBatch(docs)
        vals, argmax_padded = dense_score_batch([query], batch)
        d_q_d, d_d_d = dense_backward([query], batch, g, argmax_padded)

        assert np.max(np.abs(d_q_p - d_q_d)) == 0.0
        for b in range(3):
            rows = slice(int(packed.cu_seqlens[b]), int(packed.cu_seqlens[b + 1]))
            assert np.max(np.abs(d_d_p[rows] - d_d_d[b, : lens[b]])) == 0.0
        assert d_d_p.shape == (sum(lens), 8)
