"""Per-token symmetric INT8 scoring with fused dequantization.

Both sides are quantized per token: scale[t] = maxabs(row t) / 127, values
rounded half-to-even and clamped to the symmetric range [-127, 127] (the
-128 slot is unused so negation stays exact).  Integer tile products
accumulate exactly in int32; the pair of per-token scales is folded in just
before the running-max reduction, so the kernel sees the same online-max,
masking and tie semantics as the float path.

The two-stage top-K scan runs the whole corpus through the INT8 scorer,
keeps a shortlist of K * shortlist_factor candidates, and rescores only the
shortlist in full precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatch, EmptyDocument, KTooLarge, ShapeMismatch
from .instrument import TrafficReport
from .kernels import fold_extreme, seq_sum_f64
from .types import DEFAULT_TILE, DocBatch, EmbeddingMatrix, TileConfig

# scale assigned to an all-zero token so the kernel stays branch-free
ZERO_ROW_SCALE = np.float32(1e-12)

# int32 accumulation of d products bounded by 127^2 each never overflows
# for widths up to this (127**2 * 133_000 < 2**31 - 1).
MAX_INT8_DIM = 133_000


@dataclass
class QuantizedMatrix:
    """int8 token rows plus one positive scale per token."""

    q: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.int8)
        self.scale = np.ascontiguousarray(self.scale, dtype=np.float32)
        if self.q.ndim != 2:
            raise ShapeMismatch(f"quantized rows must be 2-D, got shape {self.q.shape}")
        if self.scale.shape != (self.q.shape[0],):
            raise ShapeMismatch("need exactly one scale per token row")
        if self.q.shape[1] > MAX_INT8_DIM:
            raise ShapeMismatch(
                f"dim {self.q.shape[1]} exceeds {MAX_INT8_DIM}; int32 dot accumulation could overflow"
            )
        if self.scale.size and float(self.scale.min()) <= 0.0:
            raise ShapeMismatch("token scales must be positive")
        self.q.setflags(write=False)
        self.scale.setflags(write=False)

    @property
    def rows(self) -> int:
        return self.q.shape[0]

    @property
    def dim(self) -> int:
        return self.q.shape[1]


@dataclass
class QuantizedCorpus:
    """Uniform-length quantized corpus: (B, L, dim) int8 plus (B, L) scales.

    This is the in-memory form of the quantized embedding file layout.
    """

    q: np.ndarray
    scales: np.ndarray

    def __post_init__(self):
        self.q = np.ascontiguousarray(self.q, dtype=np.int8)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32)
        if self.q.ndim != 3 or self.scales.shape != self.q.shape[:2]:
            raise ShapeMismatch("quantized corpus needs (B, L, dim) rows and (B, L) scales")

    @property
    def n_docs(self) -> int:
        return self.q.shape[0]

    @property
    def elem(self) -> str:
        return "i8"

    def doc(self, b: int) -> QuantizedMatrix:
        return QuantizedMatrix(q=self.q[b], scale=self.scales[b])

    def matrices(self):
        return [self.doc(b) for b in range(self.n_docs)]

    @classmethod
    def from_matrices(cls, mats) -> "QuantizedCorpus":
        lens = {m.rows for m in mats}
        if len(lens) != 1:
            raise ShapeMismatch("quantized file layout requires uniform document length")
        return cls(q=np.stack([m.q for m in mats]), scales=np.stack([m.scale for m in mats]))


def quantize_per_token(x, levels: int = 127) -> QuantizedMatrix:
    """Symmetric per-token quantization to [-levels, levels].

    levels=127 is the int8 contract; smaller values emulate coarser steps
    (used by the fidelity sweep tests).  Zero rows get a tiny epsilon scale
    instead of a special case.
    """
    data = x.data if isinstance(x, EmbeddingMatrix) else np.ascontiguousarray(x, dtype=np.float32)
    if data.ndim != 2:
        raise ShapeMismatch(f"expected 2-D token rows, got shape {data.shape}")
    if not 1 <= levels <= 127:
        raise ValueError(f"levels must be in [1, 127], got {levels}")
    maxabs = np.max(np.abs(data), axis=1) if data.size else np.zeros(data.shape[0], np.float32)
    scale = (maxabs / np.float32(levels)).astype(np.float32)
    scale[scale == 0] = ZERO_ROW_SCALE
    q = np.clip(np.round(data / scale[:, None]), -levels, levels).astype(np.int8)
    return QuantizedMatrix(q=q, scale=scale)


def dequantize(qm: QuantizedMatrix) -> np.ndarray:
    """scale[t] * q[t], float32; within half a step of the source row."""
    return (qm.scale[:, None] * qm.q).astype(np.float32)


def fused_score_int8(
    q_quant: QuantizedMatrix,
    d_quant: QuantizedMatrix,
    valid_len: int | None = None,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
):
    """INT8 x INT8 pair score with dequantization fused into the fold.

    Integer tile dot products accumulate in int32 (exact), are scaled by
    scale_q[i] * scale_d[j], and only then enter the running max, with the
    same -inf masking and lowest-index tie rule as the float kernel.
    Returns (score, argmax_row).
    """
    if q_quant.dim != d_quant.dim:
        raise DimMismatch(q_quant.dim, d_quant.dim)
    if valid_len is None:
        valid_len = d_quant.rows
    if valid_len < 1:
        raise EmptyDocument(0)
    if valid_len > d_quant.rows:
        raise ShapeMismatch(f"valid_len {valid_len} exceeds document rows {d_quant.rows}")
    rep = report if report is not None else TrafficReport()
    l_q, dim = q_quant.q.shape
    l_proc = d_quant.rows
    bq, bd = tile.bq, tile.bd
    wq, wd = min(bq, max(l_q, 1)), min(bd, l_proc)
    ibuf = np.empty((wq, wd), dtype=np.int32)
    fbuf = np.empty((wq, wd), dtype=np.float32)
    m = np.full(l_q, -np.inf, dtype=np.float32)
    arg = np.zeros(l_q, dtype=np.int32)
    neg_inf = np.float32(-np.inf)
    with rep.scratch(ibuf, fbuf, m, arg):
        rep.add_read(q_quant.q.nbytes + q_quant.scale.nbytes)
        for t0 in range(0, l_proc, bd):
            t1 = min(t0 + bd, l_proc)
            rep.add_read((t1 - t0) * (dim + 4))  # int8 rows + one f32 scale each
            d_rows = d_quant.q[t0:t1].astype(np.int32)
            d_scales = d_quant.scale[t0:t1]
            mask_from = valid_len - t0
            for r0 in range(0, l_q, bq):
                r1 = min(r0 + bq, l_q)
                iview = ibuf[: r1 - r0, : t1 - t0]
                np.matmul(q_quant.q[r0:r1].astype(np.int32), d_rows.T, out=iview)
                rep.add_macs(2 * (r1 - r0) * (t1 - t0) * dim)
                fview = fbuf[: r1 - r0, : t1 - t0]
                fview[:] = iview  # exact for |sum| < 2**24, approximate above
                fview *= q_quant.scale[r0:r1, None]
                fview *= d_scales[None, :]
                if mask_from < t1 - t0:
                    fview[:, max(mask_from, 0) :] = neg_inf
                fold_extreme(fview, t0, m[r0:r1], arg[r0:r1], maximize=True)
        score = seq_sum_f64(m)
    rep.add_write(8)
    return score, arg.copy()


def two_stage_topk(
    query: EmbeddingMatrix,
    corpus_q,
    corpus_full: DocBatch,
    k: int,
    shortlist_factor: int = 4,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
):
    """Coarse INT8 scan of the corpus, exact full-precision rescoring of a
    shortlist of k * shortlist_factor docs.

    Returns the top-k (doc id, full-precision score) pairs sorted by
    descending score, ties broken by lower id.  The query is quantized
    per token for stage one; stage two scores the original embeddings.
    """
    from .forward import fused_score_pair

    if shortlist_factor < 1:
        raise ValueError(f"shortlist_factor must be >= 1, got {shortlist_factor}")
    n_docs = len(corpus_q)
    if corpus_full.n_docs != n_docs:
        raise ShapeMismatch("quantized and full-precision corpora are not aligned")
    if k > n_docs:
        raise KTooLarge(k, n_docs)
    if k == 0:
        return []
    rep = report if report is not None else TrafficReport()
    q_quant = quantize_per_token(query)
    coarse = np.empty(n_docs, dtype=np.float64)
    for b in range(n_docs):
        coarse[b], _ = fused_score_int8(q_quant, corpus_q[b], tile=tile, report=rep)
    shortlist_n = min(k * shortlist_factor, n_docs)
    order = np.lexsort((np.arange(n_docs), -coarse))  # score desc, id asc
    shortlist = order[:shortlist_n]
    rescored = []
    for b in shortlist:
        b = int(b)
        score, _, _ = fused_score_pair(
            query,
            EmbeddingMatrix(corpus_full.data[b][: int(corpus_full.valid_lens[b])]),
            tile=tile,
            report=rep,
        )
        rescored.append((b, score))
    rescored.sort(key=lambda t: (-t[1], t[0]))
    return rescored[:k]
