"""Exact training backward without re-materializing similarities.

The forward saves one winning document-token index per (query, document,
query token).  Resolving the max makes the score piecewise linear, so:

    dQ[q, s]  = sum_b g[q, b] * D[b, argmax[q, b, s]]      (a gather)
    dD[b, t]  = sum over sources that picked t of g * Q row (a scatter)

The gather side has no collisions.  The scatter side is inverted at runtime
into a CSR map over destination rows (bincount -> cumsum for the row
pointer, stable argsort of flat destinations for the column indices), and
the document gradient is then a destination-owned reduction: one owner per
output row, each row accumulated in a private register and stored exactly
once, no atomics, no [N_q, B, L_q, L_d] gradient tensor ever allocated.

A plain source-order scatter is kept as the low-contention fallback; a
dispatch heuristic picks between the two from the bincount's maximum
bucket load.

Accumulation is float64 in ascending flat source order (q, b, s) on every
path, which makes the CSR reduction bit-identical to the sequential dense
reference.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch, StaleCsr
from .instrument import TrafficReport
from .types import ArgmaxMap, DocBatch
from .varlen import PackedCorpus

# Scatter fallback processes sources in chunks of about this many elements
# so its scratch stays small regardless of source count.
_SCATTER_CHUNK_ELEMS = 8192

# Dispatch threshold: estimated max sources per destination row above which
# the CSR path is built.  The value is a tunable stand-in calibrated so a
# uniform random assignment picks scatter and a hot-token assignment picks
# CSR; the result contract is identical either way.
DEFAULT_SCATTER_THRESHOLD = 8


@dataclass
class CsrInverse:
    """Destination-owned inversion of an ArgmaxMap.

    row_ptr has one slot per destination document token plus one; col_idx
    lists flat source positions (q, b, s) bucketed per destination, each
    bucket in ascending source order (stable sort).
    """

    row_ptr: np.ndarray
    col_idx: np.ndarray
    n_dest: int
    src_shape: tuple  # (N_q, B, L_q)
    padded_len: int | None

    @property
    def n_sources(self) -> int:
        return int(self.col_idx.size)

    def destinations_per_source(self) -> np.ndarray:
        """Scatter row ids back through col_idx; inverse of construction."""
        per_pos = np.repeat(np.arange(self.n_dest, dtype=np.int64), np.diff(self.row_ptr))
        dst = np.empty(self.n_sources, dtype=np.int64)
        dst[self.col_idx] = per_pos
        return dst

    def check_sources(self, n_queries: int, n_docs: int, len_q: int) -> None:
        if self.src_shape != (n_queries, n_docs, len_q):
            raise StaleCsr(
                f"CSR built for source shape {self.src_shape}, applied to "
                f"({n_queries}, {n_docs}, {len_q})"
            )


def build_inverse_csr(argmax: ArgmaxMap, report: TrafficReport | None = None) -> CsrInverse:
    """Invert the argmax map: for each destination token, who selected it.

    Cost is O(sources) for the indices plus O(destination rows) for the row
    pointer, far below the similarity tensor the map replaces.  Index range
    (every entry inside its document's valid length) is enforced when the
    ArgmaxMap is constructed and raises IndexOutOfRange there.
    """
    rep = report if report is not None else TrafficReport()
    n_dest = argmax.n_dest_rows
    dst = argmax.flat_destinations()
    rep.alloc(dst.nbytes)
    counts = np.bincount(dst, minlength=n_dest)
    rep.alloc(counts.nbytes)
    row_ptr = np.empty(n_dest + 1, dtype=np.int64)
    row_ptr[0] = 0
    np.cumsum(counts, out=row_ptr[1:])
    rep.release(counts.nbytes)
    col_idx = np.argsort(dst, kind="stable")
    rep.release(dst.nbytes)
    # row_ptr and col_idx stay live for the rest of the backward.
    rep.alloc(row_ptr.nbytes + col_idx.nbytes)
    return CsrInverse(
        row_ptr=row_ptr,
        col_idx=col_idx,
        n_dest=n_dest,
        src_shape=(argmax.n_queries, argmax.n_docs, argmax.len_q),
        padded_len=argmax.padded_len,
    )


def _check_upstream(upstream, n_queries: int, n_docs: int) -> np.ndarray:
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (n_queries, n_docs):
        raise ShapeMismatch(f"upstream gradient shape {g.shape}, expected ({n_queries}, {n_docs})")
    return g


def _flat_query_rows(queries):
    """Stack query token rows into (N_q * L_q, dim) float32."""
    mats = [q.data for q in queries]
    l_q = mats[0].shape[0]
    for m in mats:
        if m.shape != mats[0].shape:
            raise ShapeMismatch("queries must share shape for the batched backward")
    return np.concatenate(mats, axis=0), l_q


def _source_weights(g: np.ndarray, l_q: int) -> np.ndarray:
    """Per-source upstream weight in flat (q, b, s) order."""
    n_q, n_docs = g.shape
    return np.broadcast_to(g[:, :, None], (n_q, n_docs, l_q)).ravel()


def grad_docs_csr(
    csr: CsrInverse,
    upstream,
    queries,
    report: TrafficReport | None = None,
    out: np.ndarray | None = None,
) -> np.ndarray:
    """Document gradient via the destination-owned CSR reduction.

    Returns the flat (n_dest, dim) float64 gradient; each destination row is
    accumulated privately in ascending source order and stored exactly once.
    """
    rep = report if report is not None else TrafficReport()
    n_q = len(queries)
    q_flat, l_q = _flat_query_rows(queries)
    n_docs = csr.src_shape[1]
    g = _check_upstream(upstream, n_q, n_docs)
    csr.check_sources(n_q, n_docs, l_q)
    if csr.n_sources != n_q * n_docs * l_q:
        raise StaleCsr("CSR source count disagrees with the argmax shape")
    dim = q_flat.shape[1]
    w = _source_weights(g, l_q)
    src = np.arange(csr.n_sources, dtype=np.int64)
    q_row = (src // (n_docs * l_q)) * l_q + (src % l_q)
    if out is None:
        out = np.zeros((csr.n_dest, dim), dtype=np.float64)
    acc = np.zeros(dim, dtype=np.float64)
    with rep.scratch(q_flat, w, src, acc):
        row_ptr = csr.row_ptr
        col_idx = csr.col_idx
        for r in range(csr.n_dest):
            lo = row_ptr[r]
            hi = row_ptr[r + 1]
            acc[:] = 0.0
            for t in range(lo, hi):
                s = col_idx[t]
                acc += w[s] * q_flat[q_row[s]]
            out[r] = acc
    return out


def grad_docs_scatter(
    argmax: ArgmaxMap,
    upstream,
    queries,
    report: TrafficReport | None = None,
) -> np.ndarray:
    """Document gradient via chunked source-order scatter-accumulate.

    Mathematically identical to the CSR path; contributions land in the same
    ascending source order per destination, so the two agree to within (and
    in practice exactly at) accumulation-order noise.
    """
    rep = report if report is not None else TrafficReport()
    n_q = len(queries)
    q_flat, l_q = _flat_query_rows(queries)
    g = _check_upstream(upstream, n_q, argmax.n_docs)
    if argmax.len_q != l_q:
        raise ShapeMismatch("argmax map and queries disagree on query length")
    dim = q_flat.shape[1]
    dst = argmax.flat_destinations()
    w = _source_weights(g, l_q)
    src = np.arange(argmax.n_sources, dtype=np.int64)
    q_row = (src // (argmax.n_docs * l_q)) * l_q + (src % l_q)
    out = np.zeros((argmax.n_dest_rows, dim), dtype=np.float64)
    chunk = max(1, _SCATTER_CHUNK_ELEMS // dim)
    buf = np.empty((chunk, dim), dtype=np.float64)
    with rep.scratch(q_flat, w, dst, src, buf):
        for c0 in range(0, argmax.n_sources, chunk):
            c1 = min(c0 + chunk, argmax.n_sources)
            np.multiply(w[c0:c1, None], q_flat[q_row[c0:c1]], out=buf[: c1 - c0])
            np.add.at(out, dst[c0:c1], buf[: c1 - c0])
    return out


def _doc_rows(docs, b: int) -> np.ndarray:
    if isinstance(docs, DocBatch):
        return docs.data[b]
    if isinstance(docs, PackedCorpus):
        return docs.doc(b)
    raise ShapeMismatch(f"unsupported document container {type(docs).__name__}")


def grad_query(argmax: ArgmaxMap, upstream, docs) -> np.ndarray:
    """Query gradient: pure gather, one document row per (pair, query token).

    No CSR needed; each output row is written by exactly one (q, s) owner.
    Returns (N_q, L_q, dim) float64.
    """
    g = _check_upstream(upstream, argmax.n_queries, argmax.n_docs)
    dim = docs.dim
    d_q = np.zeros((argmax.n_queries, argmax.len_q, dim), dtype=np.float64)
    idx = argmax.indices
    for qi in range(argmax.n_queries):
        for bi in range(argmax.n_docs):
            d_q[qi] += g[qi, bi] * _doc_rows(docs, bi)[idx[qi, bi]]
    return d_q


def choose_gradient_path(argmax: ArgmaxMap, threshold: int = DEFAULT_SCATTER_THRESHOLD) -> str:
    """Pick "csr" when the estimated max bucket load exceeds the threshold.

    The load estimate is the bincount of flat destinations, i.e. exactly the
    quantity the CSR build needs anyway.
    """
    if argmax.n_sources == 0:
        return "scatter"
    counts = np.bincount(argmax.flat_destinations(), minlength=argmax.n_dest_rows)
    return "csr" if int(counts.max()) > threshold else "scatter"


def doc_grads_in_layout(flat: np.ndarray, argmax: ArgmaxMap) -> np.ndarray:
    """Reshape the flat destination gradient to the corpus layout.

    Dense/padded corpora get (B, padded_len, dim) with zero rows at padding;
    packed corpora keep the flat (sum L_d, dim) layout aligned with their
    token buffer.
    """
    if argmax.padded_len is not None:
        return flat.reshape(argmax.n_docs, argmax.padded_len, flat.shape[1])
    return flat


def backward_dispatch(
    argmax: ArgmaxMap,
    upstream,
    queries,
    docs,
    threshold: int = DEFAULT_SCATTER_THRESHOLD,
    report: TrafficReport | None = None,
):
    """Full backward: gather dQ, scatter/CSR dD, path chosen by contention.

    Returns (dQ, dD); the numerical contract is independent of the chosen
    document-gradient path.
    """
    rep = report if report is not None else TrafficReport()
    path = choose_gradient_path(argmax, threshold)
    if path == "csr":
        csr = build_inverse_csr(argmax, report=rep)
        flat = grad_docs_csr(csr, upstream, queries, report=rep)
    else:
        flat = grad_docs_scatter(argmax, upstream, queries, report=rep)
    d_q = grad_query(argmax, upstream, docs)
    return d_q, doc_grads_in_layout(flat, argmax)
