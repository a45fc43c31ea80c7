"""Dense, materialized brute-force reference path.

This is the simple thing the streaming engine must match while never
allocating: build the full [B x L_q x L_d] similarity tensor, mask padding
to -inf, reduce.  Two precisions are exposed:

  * "f32" mirrors the engine's element arithmetic exactly (same dot_block
    accumulation order), so scores and argmax compare bit-for-bit.
  * "f64" computes similarities independently via float64 matmul and is the
    tolerance oracle for precision checks.

Performance is explicitly a non-goal here; being obviously correct is.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyDocument, ShapeMismatch
from .instrument import TrafficReport
from .kernels import seq_sum_f64
from .types import ArgmaxMap, DocBatch, EmbeddingMatrix, validate_pair


@dataclass
class DenseSimTensor:
    """Materialized similarities, shape (B, L_q, L_d), padding masked to -inf."""

    values: np.ndarray

    @property
    def shape(self):
        return self.values.shape


def materialize_sims(
    query: EmbeddingMatrix,
    docs: DocBatch,
    precision: str = "f32",
    report: TrafficReport | None = None,
) -> DenseSimTensor:
    """Build the full similarity tensor for one query against a batch."""
    rep = report if report is not None else TrafficReport()
    q = query.data
    d3 = docs.data
    b, l_pad, dim = d3.shape
    l_q = q.shape[0]
    if precision == "f64":
        sims = np.matmul(q.astype(np.float64)[None, :, :], d3.astype(np.float64).transpose(0, 2, 1))
        rep.alloc(sims.nbytes)
    elif precision == "f32":
        sims = np.empty((b, l_q, l_pad), dtype=np.float32)
        tmp = np.empty_like(sims)
        rep.alloc(sims.nbytes + tmp.nbytes)
        np.multiply(q[None, :, 0, None], d3[:, None, :, 0], out=sims)
        for k in range(1, dim):
            np.multiply(q[None, :, k, None], d3[:, None, :, k], out=tmp)
            sims += tmp
        rep.release(tmp.nbytes)
    else:
        raise ValueError(f"unknown precision {precision!r}")
    rep.add_read(q.nbytes + d3.nbytes)
    neg_inf = -np.inf
    for i in range(b):
        sims[i, :, int(docs.valid_lens[i]) :] = neg_inf
    return DenseSimTensor(sims)


def dense_score(
    query: EmbeddingMatrix,
    docs: DocBatch,
    precision: str = "f32",
    report: TrafficReport | None = None,
):
    """Score one query against a batch the brute-force way.

    Returns (scores, argmax): float64 scores of shape (B,) and the
    lowest-index ArgmaxMap with shape (1, B, L_q).
    """
    for b in range(docs.n_docs):
        if int(docs.valid_lens[b]) < 1:
            raise EmptyDocument(b)
    validate_pair(query, docs.data[0])
    rep = report if report is not None else TrafficReport()
    sim = materialize_sims(query, docs, precision=precision, report=rep)
    s = sim.values
    maxima = s.max(axis=2)
    winners = s.argmax(axis=2).astype(np.int32)
    scores = np.empty(docs.n_docs, dtype=np.float64)
    for b in range(docs.n_docs):
        scores[b] = seq_sum_f64(maxima[b])
    rep.add_write(scores.nbytes)
    rep.release(s.nbytes)
    argmax = ArgmaxMap(winners[None, :, :], docs.valid_lens, padded_len=docs.padded_len)
    return scores, argmax


def dense_score_batch(
    queries,
    docs: DocBatch,
    precision: str = "f32",
    report: TrafficReport | None = None,
):
    """All-pairs scores for a list of queries; loops dense_score per query."""
    rep = report if report is not None else TrafficReport()
    scores = np.empty((len(queries), docs.n_docs), dtype=np.float64)
    idx = np.empty((len(queries), docs.n_docs, queries[0].rows), dtype=np.int32)
    for qi, query in enumerate(queries):
        s, am = dense_score(query, docs, precision=precision, report=rep)
        scores[qi] = s
        idx[qi] = am.indices[0]
    return scores, ArgmaxMap(idx, docs.valid_lens, padded_len=docs.padded_len)


def dense_backward(
    queries,
    docs: DocBatch,
    upstream: np.ndarray,
    argmax: ArgmaxMap,
):
    """Gradients of sum(upstream * scores) w.r.t. queries and documents.

    The query gradient is a gather (one document row per query token per
    document); the document gradient is a sequential scatter loop in
    ascending flat source order (q, b, s).  All accumulation in float64.
    """
    n_q = len(queries)
    b_docs = docs.n_docs
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (n_q, b_docs):
        raise ShapeMismatch(f"upstream shape {g.shape} does not match ({n_q}, {b_docs})")
    if argmax.indices.shape[:2] != (n_q, b_docs):
        raise ShapeMismatch("argmax map does not match the query/document batch")
    l_q = queries[0].rows
    dim = queries[0].dim
    d_q = np.zeros((n_q, l_q, dim), dtype=np.float64)
    d_d = np.zeros((b_docs, docs.padded_len, dim), dtype=np.float64)
    idx = argmax.indices
    for qi in range(n_q):
        for bi in range(b_docs):
            d_q[qi] += g[qi, bi] * docs.data[bi][idx[qi, bi]]
    for qi in range(n_q):
        q_rows = queries[qi].data
        for bi in range(b_docs):
            gv = g[qi, bi]
            row = idx[qi, bi]
            for s in range(l_q):
                d_d[bi, row[s]] += gv * q_rows[s]
    return d_q, d_d


def finite_diff_grad(score_fn, point: np.ndarray, eps: float) -> np.ndarray:
    """Central-difference gradient of a scalar function, float64 throughout."""
    if eps <= 0:
        raise ValueError(f"finite-difference step must be positive, got {eps}")
    x = np.asarray(point, dtype=np.float64).copy()
    grad = np.zeros_like(x)
    flat = x.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(score_fn(x))
        flat[i] = orig - eps
        lo = float(score_fn(x))
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return grad
