"""Binary embedding files and out-of-core block-streamed scoring.

File format "MXS1", version 1, everything little-endian fixed-width:

    magic   4 bytes  b"MXS1"
    version u16
    elem    u8       0 = f32, 1 = f16 (widened to f32 on load), 2 = i8
    layout  u8       0 = dense, 1 = packed, 2 = quantized

    dense / quantized:  B u64, L u64, dim u64
    packed:             B u64, dim u64, cu_seqlens (B + 1) u64

    payload: row-major values (dense: B*L*dim, packed: cu[B]*dim elements);
    the quantized layout appends B*L float32 per-token scales after the
    int8 values.

Streamed scoring holds only one block of documents in memory at a time and
keeps the best K scores in a bounded heap, so peak auxiliary memory is set
by the block size, flat in corpus size.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass

import numpy as np

from .errors import BadMagic, IoError, KTooLarge, ShapeMismatch, TruncatedPayload, VersionUnsupported
from .instrument import TrafficReport
from .quant import QuantizedCorpus
from .types import DEFAULT_TILE, DocBatch, EmbeddingMatrix, TileConfig
from .varlen import PackedCorpus

MAGIC = b"MXS1"
VERSION = 1

_ELEM_CODES = {"f32": 0, "f16": 1, "i8": 2}
_ELEM_NAMES = {v: k for k, v in _ELEM_CODES.items()}
_ELEM_NP = {"f32": "<f4", "f16": "<f2", "i8": "i1"}
_ELEM_SIZE = {"f32": 4, "f16": 2, "i8": 1}
_LAYOUT_CODES = {"dense": 0, "packed": 1, "quantized": 2}
_LAYOUT_NAMES = {v: k for k, v in _LAYOUT_CODES.items()}

_HEAD = struct.Struct("<4sHBB")
_U64 = struct.Struct("<Q")


def _write_u64s(fh, *values):
    for v in values:
        fh.write(_U64.pack(int(v)))


def write_embeddings(path, obj, elem: str | None = None) -> None:
    """Persist embeddings; layout follows the object type.

    DocBatch (fully valid) and EmbeddingMatrix write the dense layout,
    PackedCorpus the packed layout, QuantizedCorpus the quantized layout.
    """
    if isinstance(obj, EmbeddingMatrix):
        obj = DocBatch([obj], elem=obj.elem)
    try:
        fh = open(path, "wb")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc}") from exc
    with fh:
        if isinstance(obj, DocBatch):
            tag = elem or obj.elem
            if tag == "i8":
                raise ShapeMismatch("raw int8 embeddings must use the quantized layout")
            if (obj.valid_lens != obj.padded_len).any():
                raise ShapeMismatch("ragged batches lose their lengths in the dense layout; pack() them instead")
            fh.write(_HEAD.pack(MAGIC, VERSION, _ELEM_CODES[tag], _LAYOUT_CODES["dense"]))
            _write_u64s(fh, obj.n_docs, obj.padded_len, obj.dim)
            fh.write(obj.data.astype(_ELEM_NP[tag]).tobytes())
        elif isinstance(obj, PackedCorpus):
            tag = elem or obj.elem
            if tag == "i8":
                raise ShapeMismatch("raw int8 embeddings must use the quantized layout")
            fh.write(_HEAD.pack(MAGIC, VERSION, _ELEM_CODES[tag], _LAYOUT_CODES["packed"]))
            _write_u64s(fh, obj.n_docs, obj.dim)
            fh.write(obj.cu_seqlens.astype("<u8").tobytes())
            fh.write(obj.tokens.astype(_ELEM_NP[tag]).tobytes())
        elif isinstance(obj, QuantizedCorpus):
            b, l, d = obj.q.shape
            fh.write(_HEAD.pack(MAGIC, VERSION, _ELEM_CODES["i8"], _LAYOUT_CODES["quantized"]))
            _write_u64s(fh, b, l, d)
            fh.write(obj.q.tobytes())
            fh.write(obj.scales.astype("<f4").tobytes())
        else:
            raise ShapeMismatch(f"cannot persist objects of type {type(obj).__name__}")


class _Header:
    __slots__ = ("elem", "layout", "n_docs", "length", "dim", "cu_seqlens", "payload_offset")


def _read_exact(fh, n: int, expected_total: int | None = None) -> bytes:
    buf = fh.read(n)
    if len(buf) != n:
        raise TruncatedPayload(expected_total if expected_total is not None else n, len(buf))
    return buf


def _parse_header(fh) -> _Header:
    raw = fh.read(_HEAD.size)
    if len(raw) < _HEAD.size:
        raise BadMagic("file too short to hold a header")
    magic, version, elem_code, layout_code = _HEAD.unpack(raw)
    if magic != MAGIC:
        raise BadMagic(f"bad magic {magic!r}")
    if version != VERSION:
        raise VersionUnsupported(version)
    if elem_code not in _ELEM_NAMES or layout_code not in _LAYOUT_NAMES:
        raise BadMagic(f"unknown element/layout tags ({elem_code}, {layout_code})")
    h = _Header()
    h.elem = _ELEM_NAMES[elem_code]
    h.layout = _LAYOUT_NAMES[layout_code]
    if h.layout in ("dense", "quantized"):
        h.n_docs, h.length, h.dim = (_U64.unpack(_read_exact(fh, 8))[0] for _ in range(3))
        h.cu_seqlens = None
    else:
        h.n_docs = _U64.unpack(_read_exact(fh, 8))[0]
        h.dim = _U64.unpack(_read_exact(fh, 8))[0]
        cu = np.frombuffer(_read_exact(fh, 8 * (h.n_docs + 1)), dtype="<u8").astype(np.int64)
        h.cu_seqlens = cu
        h.length = None
    if h.layout == "quantized" and h.elem != "i8":
        raise BadMagic("quantized layout requires the i8 element tag")
    if h.layout != "quantized" and h.elem == "i8":
        raise BadMagic("int8 elements require the quantized layout (scales are part of the data)")
    h.payload_offset = fh.tell()
    return h


def read_embeddings(path):
    """Load a whole embedding file: DocBatch, PackedCorpus or QuantizedCorpus."""
    try:
        fh = open(path, "rb")
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    with fh:
        h = _parse_header(fh)
        esize = _ELEM_SIZE[h.elem]
        if h.layout == "dense":
            need = h.n_docs * h.length * h.dim * esize
            raw = _read_exact(fh, need, need)
            data = np.frombuffer(raw, dtype=_ELEM_NP[h.elem]).astype(np.float32)
            return DocBatch.from_dense(data.reshape(h.n_docs, h.length, h.dim), elem=h.elem)
        if h.layout == "packed":
            total = int(h.cu_seqlens[-1])
            need = total * h.dim * esize
            raw = _read_exact(fh, need, need)
            toks = np.frombuffer(raw, dtype=_ELEM_NP[h.elem]).astype(np.float32)
            return PackedCorpus(toks.reshape(total, h.dim), h.cu_seqlens, elem=h.elem)
        need_q = h.n_docs * h.length * h.dim
        need_s = h.n_docs * h.length * 4
        raw_q = _read_exact(fh, need_q, need_q + need_s)
        raw_s = _read_exact(fh, need_s, need_q + need_s)
        q = np.frombuffer(raw_q, dtype="i1").reshape(h.n_docs, h.length, h.dim)
        scales = np.frombuffer(raw_s, dtype="<f4").reshape(h.n_docs, h.length)
        return QuantizedCorpus(q=q, scales=scales)


class CorpusReader:
    """Block access to a dense or packed embedding file.

    Only one block of documents is materialized per read_block call; the
    header (and, for packed files, the offset table) is all that stays
    resident.
    """

    def __init__(self, path):
        self.path = path
        try:
            self._fh = open(path, "rb")
        except OSError as exc:
            raise IoError(f"cannot read {path}: {exc}") from exc
        try:
            self._h = _parse_header(self._fh)
        except Exception:
            self._fh.close()
            raise
        if self._h.layout == "quantized":
            self._fh.close()
            raise ShapeMismatch("streamed scoring reads dense or packed files; quantized files load whole")

    @property
    def n_docs(self) -> int:
        return int(self._h.n_docs)

    @property
    def dim(self) -> int:
        return int(self._h.dim)

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False

    def read_block(self, first: int, count: int):
        """Documents [first, first + count) as an in-memory batch."""
        h = self._h
        count = min(count, self.n_docs - first)
        esize = _ELEM_SIZE[h.elem]
        if h.layout == "dense":
            start = h.payload_offset + first * h.length * h.dim * esize
            need = count * h.length * h.dim * esize
            self._fh.seek(start)
            raw = _read_exact(self._fh, need, need)
            data = np.frombuffer(raw, dtype=_ELEM_NP[h.elem]).astype(np.float32)
            return DocBatch.from_dense(data.reshape(count, h.length, h.dim), elem=h.elem)
        cu = h.cu_seqlens
        t0, t1 = int(cu[first]), int(cu[first + count])
        start = h.payload_offset + t0 * h.dim * esize
        need = (t1 - t0) * h.dim * esize
        self._fh.seek(start)
        raw = _read_exact(self._fh, need, need)
        toks = np.frombuffer(raw, dtype=_ELEM_NP[h.elem]).astype(np.float32)
        rel = (cu[first : first + count + 1] - t0).astype(np.int64)
        return PackedCorpus(toks.reshape(t1 - t0, h.dim), rel, elem=h.elem)


class TopKHeap:
    """Bounded min-heap keeping the K best (doc id, score) pairs.

    Ordering: higher score wins; on equal scores the lower document id is
    kept.  ranked() returns descending score, ascending id.
    """

    __slots__ = ("capacity", "_heap")

    def __init__(self, capacity: int):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self._heap = []

    def __len__(self):
        return len(self._heap)

    def offer(self, doc_id: int, score: float) -> None:
        if self.capacity == 0:
            return
        key = (float(score), -int(doc_id))
        if len(self._heap) < self.capacity:
            heapq.heappush(self._heap, key)
        elif key > self._heap[0]:
            heapq.heapreplace(self._heap, key)

    def merge(self, other: "TopKHeap") -> None:
        for score, neg_id in other._heap:
            self.offer(-neg_id, score)

    def ranked(self):
        return [(-neg_id, score) for score, neg_id in sorted(self._heap, key=lambda t: (-t[0], -t[1]))]


def stream_score_topk(
    query: EmbeddingMatrix,
    corpus,
    block_docs: int,
    k: int,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
):
    """Score a corpus too big to hold by streaming blocks from its file.

    Results are identical to exhaustive in-memory ranking; peak auxiliary
    bytes are one block's embeddings plus O(L_q) running state plus the
    O(K) heap, independent of corpus size.

    Returns (ranked list of (doc id, score), TrafficReport).
    """
    from .forward import fused_score_batch
    from .varlen import fused_score_varlen

    if block_docs < 1:
        raise ValueError("block_docs must be >= 1")
    own = None
    if not isinstance(corpus, CorpusReader):
        own = CorpusReader(corpus)
        corpus = own
    try:
        n_docs = corpus.n_docs
        if n_docs == 0:
            raise ShapeMismatch("corpus is empty")
        if k > n_docs:
            raise KTooLarge(k, n_docs)
        rep = report if report is not None else TrafficReport()
        heap = TopKHeap(k)
        for first in range(0, n_docs, block_docs):
            block = corpus.read_block(first, block_docs)
            if isinstance(block, DocBatch):
                block_bytes = block.data.nbytes
            else:
                block_bytes = block.tokens.nbytes + block.cu_seqlens.nbytes
            rep.alloc(block_bytes)
            try:
                if isinstance(block, DocBatch):
                    scores, _, _ = fused_score_batch(
                        [query], block, tile=tile, report=rep, count_query=(first == 0)
                    )
                    block_scores = scores.values[0]
                else:
                    block_scores, _, _ = fused_score_varlen(
                        query, block, tile=tile, report=rep, count_query=(first == 0)
                    )
                for j, s in enumerate(block_scores):
                    heap.offer(first + j, float(s))
            finally:
                rep.release(block_bytes)
        return heap.ranked(), rep
    finally:
        if own is not None:
            own.close()


@dataclass(frozen=True)
class TrafficModel:
    """Predicted main-memory bytes for one scoring workload.

    The fused model counts each query's rows once (the query stays resident
    while the corpus streams past; query chunks partition those rows, so
    chunking never changes the count), every document once per scoring
    query, and one scalar written per pair.  The naive model adds three
    accesses of the materialized similarity surface (one write plus two
    reads); real allocators move somewhat more than this because of
    reduction intermediates the model deliberately ignores, so absolute
    naive byte counts from hardware profilers are not comparable, the
    fused counts are.
    """

    fused_read: int
    fused_write: int
    naive_read: int
    naive_write: int
    s_to_operand_ratio: float

    @property
    def fused_total(self) -> int:
        return self.fused_read + self.fused_write

    @property
    def naive_total(self) -> int:
        return self.naive_read + self.naive_write

    @property
    def naive_over_fused(self) -> float:
        return self.naive_total / self.fused_total

    def bytes(self, mode: str) -> int:
        if mode == "fused":
            return self.fused_total
        if mode == "naive":
            return self.naive_total
        raise ValueError(f"unknown mode {mode!r}")


def model_traffic(
    n_queries: int,
    n_docs: int,
    len_q: int,
    len_d: int,
    dim: int,
    elem_bytes: int = 4,
    scalar_bytes: int = 8,
) -> TrafficModel:
    """Analytic byte model matching the engine's instrumented counters.

    s_to_operand_ratio is the similarity-surface-to-operand element ratio
    len_q * len_d / ((len_q + len_d) * dim): the factor by which the
    materialized intermediate outweighs the inputs (len_q / (2 dim) when
    the two lengths are equal).
    """
    for v in (n_queries, n_docs, len_q, len_d, dim):
        if v < 1:
            raise ValueError("model_traffic expects positive shape values")
    q_bytes = n_queries * len_q * dim * elem_bytes
    d_bytes = n_queries * n_docs * len_d * dim * elem_bytes
    s_elems = n_queries * n_docs * len_q * len_d
    out_bytes = n_queries * n_docs * scalar_bytes
    return TrafficModel(
        fused_read=q_bytes + d_bytes,
        fused_write=out_bytes,
        naive_read=q_bytes + d_bytes + 2 * s_elems * elem_bytes,
        naive_write=s_elems * elem_bytes + out_bytes,
        s_to_operand_ratio=(len_q * len_d) / ((len_q + len_d) * dim),
    )
