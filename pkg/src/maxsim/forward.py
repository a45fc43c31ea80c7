"""Materialization-free tiled MaxSim forward.

One scoring pair streams document tiles through a bounded working set and
folds each similarity sub-tile into a per-query-token running maximum:

    m <- max(m, rowmax(S_tile))        (strict replace, ties keep earlier)

max is idempotent and associative, so no rescaling correction is ever
needed and the fold is exact for every tile shape.  The full
[L_q x L_d] similarity matrix only ever exists bq x bd elements at a time;
auxiliary memory is O(bq * bd + L_q), independent of document length.

Masked (padding) positions are set to -inf BEFORE the row reduction, so
padding can never win even when every valid similarity is negative.

Determinism contract: scores and argmax are bit-identical across every
valid TileConfig and across repeated runs.  The per-pair score is a strict
sequential float64 sum over the final per-token maxima, so it does not
depend on how query rows were chunked/tiled; ties resolve to the lowest
document-token index because replacement uses strict `>` and tiles scan
columns in index order.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDocument, ShapeMismatch
from .instrument import TrafficReport
from .kernels import dot_block, fold_extreme, seq_sum_f64
from .types import ArgmaxMap, DEFAULT_TILE, DocBatch, EmbeddingMatrix, ScoreMatrix, TileConfig, validate_pair

STRATEGY_TAGS = ("single_query_rerank", "batched_multiquery", "varlen_packed", "int8_two_stage")


@dataclass
class RunningRowState:
    """Streaming state for the query rows currently in flight.

    m holds the exact row maximum over all document tiles consumed so far,
    arg the (lowest-index) winning column, acc the pair-score accumulator.
    """

    m: np.ndarray
    arg: np.ndarray
    acc: float = 0.0


@dataclass(frozen=True)
class ForwardStrategy:
    """Dispatch decision: which kernel family member runs, with which tiles."""

    tag: str
    tile: TileConfig = field(default_factory=lambda: DEFAULT_TILE)


# Documented tile lookup for the dispatcher.  Scores are identical for any
# config (see tile-invariance tests); these only pick working-set shapes.
# "long_doc" applies from DOC_LEN_LONG tokens up; everything else gets the
# default.  Extension point: split-K and query-reuse variants would slot in
# here as additional tags, they are intentionally not implemented.
DOC_LEN_LONG = 2048
TILE_LOOKUP = {
    "default": TileConfig(bq=32, bd=64, qchunk=128),
    "long_doc": TileConfig(bq=32, bd=128, qchunk=128),
    "int8": TileConfig(bq=32, bd=128, qchunk=128),
}


def dispatch(n_queries, n_docs, len_q, len_d, dim, dtype="f32", packed=False) -> ForwardStrategy:
    """Pick the kernel family member for a problem shape.

    Deterministic rules, in priority order: int8 data runs the two-stage
    scan, packed (ragged) corpora run the padding-free kernel, a single
    query reranks, anything else is the batched multi-query path.
    """
    for v in (n_queries, n_docs, len_q, len_d, dim):
        if v < 1:
            raise ValueError("dispatch expects positive shape values")
    if dtype == "i8":
        return ForwardStrategy("int8_two_stage", TILE_LOOKUP["int8"])
    tile = TILE_LOOKUP["long_doc"] if len_d >= DOC_LEN_LONG else TILE_LOOKUP["default"]
    if packed:
        return ForwardStrategy("varlen_packed", tile)
    if n_queries == 1:
        return ForwardStrategy("single_query_rerank", tile)
    return ForwardStrategy("batched_multiquery", tile)


def query_chunk_decompose(query: EmbeddingMatrix, chunk_len: int):
    """Split a query into row chunks whose partial scores sum to the whole.

    The sum-of-maxima decomposes over query rows, so scoring each chunk and
    adding the partial scores reproduces the whole-query score; with the
    engine's sequential float64 score reduction the agreement is exact.
    """
    if chunk_len < 1:
        raise ValueError(f"chunk_len must be >= 1, got {chunk_len}")
    chunks = []
    for r0 in range(0, query.rows, chunk_len):
        chunks.append(EmbeddingMatrix(query.data[r0 : r0 + chunk_len], elem=query.elem))
    return chunks if chunks else [query]


def _fold_pair(
    q_data: np.ndarray,
    d_data: np.ndarray,
    valid_len: int,
    tile: TileConfig,
    state: RunningRowState,
    rep: TrafficReport,
    count_query: bool,
    count_doc: bool,
) -> None:
    """Stream one pair's document tiles into the running row state.

    Byte accounting counts each operand once per pair (the query once per
    query, when the caller batches): query rows are charged as their chunk
    is brought in flight, document tiles on first touch.  Re-touches by
    later query chunks hit the resident tile and are not main-memory traffic.
    MACs are counted for the full tile extent including masked padding
    columns: the dense layout really does compute them.
    """
    l_q, dim = q_data.shape
    l_proc = d_data.shape[0]
    bq, bd, qchunk = tile.bq, tile.bd, tile.qchunk
    wq = min(bq, max(l_q, 1))
    wd = min(bd, l_proc)
    s_buf = np.empty((wq, wd), dtype=np.float32)
    tmp = np.empty((wq, wd), dtype=np.float32)
    neg_inf = np.float32(-np.inf)
    with rep.scratch(s_buf, tmp):
        for c0 in range(0, l_q, qchunk):
            c1 = min(c0 + qchunk, l_q)
            if count_query:
                rep.add_read((c1 - c0) * dim * q_data.itemsize)
            first_chunk = c0 == 0
            for t0 in range(0, l_proc, bd):
                t1 = min(t0 + bd, l_proc)
                if count_doc and first_chunk:
                    rep.add_read((t1 - t0) * dim * d_data.itemsize)
                d_rows = d_data[t0:t1]
                mask_from = valid_len - t0  # local column where padding starts
                for r0 in range(c0, c1, bq):
                    r1 = min(r0 + bq, c1)
                    block = s_buf[: r1 - r0, : t1 - t0]
                    scratch = tmp[: r1 - r0, : t1 - t0]
                    dot_block(q_data[r0:r1], d_rows, block, scratch)
                    rep.add_macs(2 * (r1 - r0) * (t1 - t0) * dim)
                    if mask_from < t1 - t0:
                        block[:, max(mask_from, 0) :] = neg_inf
                    fold_extreme(block, t0, state.m[r0:r1], state.arg[r0:r1], maximize=True)


def fused_score_pair(
    query: EmbeddingMatrix,
    doc: EmbeddingMatrix,
    valid_len: int | None = None,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
):
    """Score one (query, document) pair without materializing similarities.

    Returns (score, argmax_row, traffic): float64 score, int32 winning index
    per query token, and the traffic/allocation ledger for the call.
    """
    validate_pair(query, doc)
    if valid_len is None:
        valid_len = doc.rows
    if valid_len < 1:
        raise EmptyDocument(0)
    if valid_len > doc.rows:
        raise ShapeMismatch(f"valid_len {valid_len} exceeds document rows {doc.rows}")
    rep = report if report is not None else TrafficReport()
    m = np.full(query.rows, -np.inf, dtype=np.float32)
    arg = np.zeros(query.rows, dtype=np.int32)
    state = RunningRowState(m=m, arg=arg)
    with rep.scratch(m, arg):
        _fold_pair(query.data, doc.data, valid_len, tile, state, rep, count_query=True, count_doc=True)
        state.acc = seq_sum_f64(state.m)
    rep.add_write(8)
    return state.acc, arg, rep


def _score_query_against(
    q_data: np.ndarray,
    docs: DocBatch,
    tile: TileConfig,
    rep: TrafficReport,
    out_scores: np.ndarray,
    out_idx: np.ndarray,
    count_query: bool = True,
) -> None:
    """Score one query row block against every document (pairs independent)."""
    l_q = q_data.shape[0]
    m = np.empty(l_q, dtype=np.float32)
    arg = np.empty(l_q, dtype=np.int32)
    with rep.scratch(m, arg):
        for bi in range(docs.n_docs):
            m[:] = -np.inf
            arg[:] = 0
            state = RunningRowState(m=m, arg=arg)
            _fold_pair(
                q_data,
                docs.data[bi],
                int(docs.valid_lens[bi]),
                tile,
                state,
                rep,
                count_query=(count_query and bi == 0),
                count_doc=True,
            )
            out_scores[bi] = seq_sum_f64(m)
            out_idx[bi] = arg
            rep.add_write(8)


def fused_score_batch(
    queries,
    docs: DocBatch,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
    threads: int = 1,
    count_query: bool = True,
):
    """All-pairs scores for N_q queries vs B documents.

    Every (query, document) pair is an independent work unit; with
    threads > 1 queries are scored by a thread pool, each worker writing
    only its own output rows and keeping a private traffic ledger that is
    merged at the end (counters add, peaks max).

    Returns (ScoreMatrix, ArgmaxMap, TrafficReport).
    """
    if isinstance(queries, EmbeddingMatrix):
        queries = [queries]
    if not queries:
        raise ShapeMismatch("need at least one query")
    l_q = queries[0].rows
    for q in queries:
        if q.rows != l_q:
            raise ShapeMismatch("batched queries must share length; pack ragged queries separately")
        validate_pair(q, docs.data[0])
    rep = report if report is not None else TrafficReport()
    n_q = len(queries)
    scores = np.empty((n_q, docs.n_docs), dtype=np.float64)
    indices = np.empty((n_q, docs.n_docs, l_q), dtype=np.int32)

    if threads <= 1 or n_q == 1:
        for qi, q in enumerate(queries):
            _score_query_against(q.data, docs, tile, rep, scores[qi], indices[qi], count_query)
    else:
        def run(qi):
            local = TrafficReport()
            _score_query_against(queries[qi].data, docs, tile, local, scores[qi], indices[qi], count_query)
            return local
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for local in pool.map(run, range(n_q)):
                rep.merge(local)

    argmax = ArgmaxMap(indices, docs.valid_lens, padded_len=docs.padded_len)
    return ScoreMatrix(scores), argmax, rep
