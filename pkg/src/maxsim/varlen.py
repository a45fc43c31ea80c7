"""Padding-free scoring over ragged corpora.

Real corpora have ragged document lengths; a dense batch pads everything to
the longest document and the kernels compute (then mask away) every padded
position.  The packed layout concatenates real tokens and delimits them
with a prefix-sum offset array (cu_seqlens), so the kernel does exactly
sum(L_d) work instead of B * max(L_d): the work saving equals the fill
ratio of the corpus, and the scores are bit-identical because each document
runs the very same per-pair fold on the same rows.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatch, EmptyDocument, ShapeMismatch
from .instrument import TrafficReport
from .kernels import seq_sum_f64
from .types import ArgmaxMap, DEFAULT_TILE, EmbeddingMatrix, TileConfig, validate_pair


class PackedCorpus:
    """Concatenated document tokens plus cu_seqlens offsets.

    cu_seqlens is strictly increasing with cu[0] = 0 and cu[B] = total
    tokens; empty documents are impossible by construction.
    """

    __slots__ = ("tokens", "cu_seqlens", "n_docs", "dim", "elem")

    def __init__(self, tokens, cu_seqlens, elem: str = "f32"):
        toks = np.ascontiguousarray(tokens, dtype=np.float32)
        cu = np.ascontiguousarray(cu_seqlens, dtype=np.int64)
        if toks.ndim != 2:
            raise ShapeMismatch(f"packed tokens must be 2-D, got shape {toks.shape}")
        if cu.ndim != 1 or cu.size < 2 or cu[0] != 0:
            raise ShapeMismatch("cu_seqlens must be 1-D with cu[0] = 0 and one entry per document plus one")
        if (np.diff(cu) <= 0).any():
            raise EmptyDocument(int(np.argmax(np.diff(cu) <= 0)))
        if int(cu[-1]) != toks.shape[0]:
            raise ShapeMismatch(f"cu_seqlens end {int(cu[-1])} does not match token count {toks.shape[0]}")
        toks.setflags(write=False)
        cu.setflags(write=False)
        self.tokens = toks
        self.cu_seqlens = cu
        self.n_docs = int(cu.size - 1)
        self.dim = int(toks.shape[1])
        self.elem = elem

    @property
    def doc_lens(self) -> np.ndarray:
        return np.diff(self.cu_seqlens)

    @property
    def total_tokens(self) -> int:
        return int(self.cu_seqlens[-1])

    def doc(self, b: int) -> np.ndarray:
        """Token rows of document b (view into the shared buffer)."""
        return self.tokens[int(self.cu_seqlens[b]) : int(self.cu_seqlens[b + 1])]

    def __repr__(self):
        return f"PackedCorpus(n_docs={self.n_docs}, total_tokens={self.total_tokens}, dim={self.dim})"


def pack(docs) -> PackedCorpus:
    """Concatenate documents into a packed corpus; lossless, order kept."""
    if not docs:
        raise ShapeMismatch("pack needs at least one document")
    mats = [d if isinstance(d, EmbeddingMatrix) else EmbeddingMatrix(d) for d in docs]
    dim = mats[0].dim
    for b, m in enumerate(mats):
        if m.dim != dim:
            raise DimMismatch(dim, m.dim)
        if m.rows == 0:
            raise EmptyDocument(b)
    cu = np.zeros(len(mats) + 1, dtype=np.int64)
    np.cumsum([m.rows for m in mats], out=cu[1:])
    tokens = np.concatenate([m.data for m in mats], axis=0)
    return PackedCorpus(tokens, cu, elem=mats[0].elem)


def unpack(packed: PackedCorpus):
    """Inverse of pack: the original per-document matrices."""
    return [EmbeddingMatrix(packed.doc(b), elem=packed.elem) for b in range(packed.n_docs)]


def fused_score_varlen(
    query: EmbeddingMatrix,
    packed: PackedCorpus,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
    count_query: bool = True,
):
    """Score one query against every packed document, no padding computed.

    Returns (scores, argmax, traffic): float64 scores of shape (B,), an
    ArgmaxMap holding per-document LOCAL winner indices (the backward adds
    the cu_seqlens offset when it flattens destinations), and the ledger,
    whose mac_count is exactly 2 * L_q * sum(L_d) * dim.
    """
    from .forward import RunningRowState, _fold_pair  # shared pair fold

    validate_pair(query, packed.tokens)
    rep = report if report is not None else TrafficReport()
    l_q = query.rows
    scores = np.empty(packed.n_docs, dtype=np.float64)
    indices = np.empty((1, packed.n_docs, l_q), dtype=np.int32)
    m = np.empty(l_q, dtype=np.float32)
    arg = np.empty(l_q, dtype=np.int32)
    with rep.scratch(m, arg):
        for b in range(packed.n_docs):
            rows = packed.doc(b)
            m[:] = -np.inf
            arg[:] = 0
            state = RunningRowState(m=m, arg=arg)
            _fold_pair(
                query.data,
                rows,
                rows.shape[0],
                tile,
                state,
                rep,
                count_query=(count_query and b == 0),
                count_doc=True,
            )
            scores[b] = seq_sum_f64(m)
            indices[0, b] = arg
            rep.add_write(8)
    argmax = ArgmaxMap(indices, packed.doc_lens, padded_len=None)
    return scores, argmax, rep
