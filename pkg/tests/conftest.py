"""Shared test helpers.

triple_loop_score is the independent scalar oracle: python loops only, no
tiling, no matrix routine.  Each dot product is a strict left-to-right
float32 fold of float32 products and the final score a plain python float
(float64) fold over the row maxima, which is exactly the accumulation
order the engine contracts to, so comparisons are bit-for-bit.
"""

import numpy as np
import pytest

from maxsim import DocBatch, EmbeddingMatrix


def triple_loop_score(q_rows: np.ndarray, d_rows: np.ndarray, valid_len: int | None = None):
    """Returns (score, winners): float64 score and lowest-index argmax list."""
    if valid_len is None:
        valid_len = d_rows.shape[0]
    score = 0.0
    winners = []
    for i in range(q_rows.shape[0]):
        best = None
        best_j = 0
        for j in range(valid_len):
            acc = np.float32(q_rows[i, 0]) * np.float32(d_rows[j, 0])
            for k in range(1, q_rows.shape[1]):
                acc = acc + np.float32(q_rows[i, k]) * np.float32(d_rows[j, k])
            if best is None or acc > best:
                best = acc
                best_j = j
        score = score + float(best)
        winners.append(best_j)
    return score, winners


def random_queries(rng, n_queries, len_q, dim):
    return [EmbeddingMatrix(rng.standard_normal((len_q, dim)).astype(np.float32)) for _ in range(n_queries)]


def random_batch(rng, n_docs, len_d, dim, ragged=False):
    docs = []
    for _ in range(n_docs):
        rows = int(rng.integers(1, len_d + 1)) if ragged else len_d
        docs.append(EmbeddingMatrix(rng.standard_normal((rows, dim)).astype(np.float32)))
    return DocBatch(docs, padded_len=len_d)


def min_top2_gap(queries, docs: DocBatch) -> float:
    """Smallest gap between the best and second-best similarity, any row."""
    gap = np.inf
    for q in queries:
        for b in range(docs.n_docs):
            rows = docs.data[b][: int(docs.valid_lens[b])].astype(np.float64)
            if rows.shape[0] < 2:
                continue
            sims = q.data.astype(np.float64) @ rows.T
            part = np.sort(sims, axis=1)
            gap = min(gap, float(np.min(part[:, -1] - part[:, -2])))
    return gap


def well_separated_instance(rng, n_queries, n_docs, len_q, len_d, dim, min_gap=1e-3):
    """Instance whose argmax is at least min_gap away from a tie everywhere."""
    for _ in range(50):
        queries = random_queries(rng, n_queries, len_q, dim)
        docs = random_batch(rng, n_docs, len_d, dim)
        if min_top2_gap(queries, docs) > min_gap:
            return queries, docs
    raise AssertionError("could not draw a tie-free instance")


@pytest.fixture
def rng():
    return np.random.default_rng(0)
