"""Core domain types shared by every scoring path.

Conventions fixed here and relied on everywhere else:

  * Embeddings are row-major [tokens x dim] float32 (half-precision files are
    widened to float32 on load; int8 data lives in quant.QuantizedMatrix).
    Inputs are NaN-validated at construction and frozen afterwards, so they
    are safe to share across threads.
  * Scores and gradient accumulators are float64 ("full precision"); all
    per-element similarity arithmetic is float32.
  * Argmax ties resolve to the LOWEST document-token index.  The running max
    replaces only on strict `>` and document tiles are scanned in index
    order, which makes the convention identical for every tile shape.
  * Documents with zero valid tokens are rejected with a typed error: the
    sum-of-maxima is undefined over an empty max, and silently scoring -inf
    would poison softmax-style losses downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadTileConfig, DimMismatch, EmptyDocument, IndexOutOfRange, NaNInput, ShapeMismatch

ELEM_TAGS = ("f32", "f16", "i8")


def _first_nan_location(name: str, arr: np.ndarray):
    flat = np.isnan(arr).ravel()
    pos = int(np.argmax(flat))
    idx = np.unravel_index(pos, arr.shape)
    return (name,) + tuple(int(i) for i in idx)


def _as_validated_f32(name: str, data) -> np.ndarray:
    arr = np.ascontiguousarray(data, dtype=np.float32)
    if arr.ndim != 2:
        raise ShapeMismatch(f"{name} must be 2-D [tokens x dim], got shape {arr.shape}")
    if arr.shape[1] <= 0:
        raise ShapeMismatch(f"{name} must have positive embedding width, got {arr.shape[1]}")
    if np.isnan(arr).any():
        raise NaNInput(_first_nan_location(name, arr))
    return arr


class EmbeddingMatrix:
    """One token-embedding block: `rows` tokens of width `dim`, row-major.

    `elem` records the source element type ("f32", "f16" widened on load, or
    "i8"); in-memory data is float32 except for the raw-int8 tag.
    """

    __slots__ = ("data", "rows", "dim", "elem")

    def __init__(self, data, elem: str = "f32", name: str = "embeddings"):
        if elem not in ELEM_TAGS:
            raise ValueError(f"unknown element tag {elem!r}")
        if elem == "i8":
            arr = np.ascontiguousarray(data, dtype=np.int8)
            if arr.ndim != 2 or arr.shape[1] <= 0:
                raise ShapeMismatch(f"{name} must be 2-D with positive width, got shape {arr.shape}")
        else:
            arr = _as_validated_f32(name, data)
        arr.setflags(write=False)
        self.data = arr
        self.rows = int(arr.shape[0])
        self.dim = int(arr.shape[1])
        self.elem = elem

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def __repr__(self):
        return f"EmbeddingMatrix(rows={self.rows}, dim={self.dim}, elem={self.elem})"


class DocBatch:
    """B documents padded to a common length, plus per-document valid lengths.

    Padding rows are zeros and can never win a max: the kernels mask them to
    -inf before any row reduction.
    """

    __slots__ = ("data", "valid_lens", "n_docs", "padded_len", "dim", "elem")

    def __init__(self, docs, padded_len: int | None = None, elem: str = "f32"):
        if not docs:
            raise ShapeMismatch("DocBatch needs at least one document")
        mats = [d if isinstance(d, EmbeddingMatrix) else EmbeddingMatrix(d) for d in docs]
        dim = mats[0].dim
        for b, m in enumerate(mats):
            if m.dim != dim:
                raise DimMismatch(dim, m.dim)
            if m.rows == 0:
                raise EmptyDocument(b)
        longest = max(m.rows for m in mats)
        if padded_len is None:
            padded_len = longest
        if padded_len < longest:
            raise ShapeMismatch(f"padded_len {padded_len} shorter than longest document ({longest})")
        data = np.zeros((len(mats), padded_len, dim), dtype=np.float32)
        for b, m in enumerate(mats):
            data[b, : m.rows] = m.data
        data.setflags(write=False)
        self.data = data
        self.valid_lens = np.array([m.rows for m in mats], dtype=np.int32)
        self.valid_lens.setflags(write=False)
        self.n_docs = len(mats)
        self.padded_len = int(padded_len)
        self.dim = dim
        self.elem = elem

    @classmethod
    def from_dense(cls, data, valid_lens=None, elem: str = "f32") -> "DocBatch":
        """Wrap an existing [B x L x d] array; valid_lens defaults to full."""
        arr = np.ascontiguousarray(data, dtype=np.float32)
        if arr.ndim != 3:
            raise ShapeMismatch(f"dense batch must be 3-D, got shape {arr.shape}")
        b, l, _ = arr.shape
        if valid_lens is None:
            valid_lens = np.full(b, l, dtype=np.int32)
        docs = [arr[i, : int(valid_lens[i])] for i in range(b)]
        return cls(docs, padded_len=l, elem=elem)

    def doc(self, b: int) -> np.ndarray:
        """Padded rows of document b (view)."""
        return self.data[b]

    def __repr__(self):
        return f"DocBatch(n_docs={self.n_docs}, padded_len={self.padded_len}, dim={self.dim})"


class ScoreMatrix:
    """All-pairs scores, n_queries x n_docs, float64."""

    __slots__ = ("values", "n_queries", "n_docs")

    def __init__(self, values):
        arr = np.ascontiguousarray(values, dtype=np.float64)
        if arr.ndim != 2:
            raise ShapeMismatch(f"score matrix must be 2-D, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NaNInput(_first_nan_location("scores", arr))
        arr.setflags(write=False)
        self.values = arr
        self.n_queries = int(arr.shape[0])
        self.n_docs = int(arr.shape[1])


class ArgmaxMap:
    """Winning document-token index per (query, document, query token).

    This is the whole forward state the exact backward needs.  Indices are
    int32 (lossless up to document length 2**31 - 1) and always local to the
    document; `padded_len` set means documents live in a padded dense layout,
    `padded_len=None` means a packed layout where destination row offsets are
    the prefix sums of `doc_lens`.
    """

    __slots__ = ("indices", "doc_lens", "padded_len")

    def __init__(self, indices, doc_lens, padded_len: int | None = None):
        idx = np.ascontiguousarray(indices, dtype=np.int32)
        if idx.ndim != 3:
            raise ShapeMismatch(f"argmax map must be 3-D [N_q x B x L_q], got shape {idx.shape}")
        lens = np.ascontiguousarray(doc_lens, dtype=np.int64)
        if lens.shape != (idx.shape[1],):
            raise ShapeMismatch(f"doc_lens shape {lens.shape} does not match B={idx.shape[1]}")
        if idx.size:
            if idx.min() < 0 or (idx >= lens[None, :, None]).any():
                raise IndexOutOfRange("argmax entry outside the document's valid length")
        if padded_len is not None and lens.size and int(lens.max()) > padded_len:
            raise ShapeMismatch("valid length exceeds padded length")
        idx.setflags(write=False)
        lens.setflags(write=False)
        self.indices = idx
        self.doc_lens = lens
        self.padded_len = None if padded_len is None else int(padded_len)

    @property
    def n_queries(self) -> int:
        return self.indices.shape[0]

    @property
    def n_docs(self) -> int:
        return self.indices.shape[1]

    @property
    def len_q(self) -> int:
        return self.indices.shape[2]

    @property
    def n_sources(self) -> int:
        return self.indices.size

    @property
    def n_dest_rows(self) -> int:
        if self.padded_len is not None:
            return self.n_docs * self.padded_len
        return int(self.doc_lens.sum())

    def dest_row_offsets(self) -> np.ndarray:
        """First flat destination row of each document."""
        if self.padded_len is not None:
            return np.arange(self.n_docs, dtype=np.int64) * self.padded_len
        offs = np.zeros(self.n_docs, dtype=np.int64)
        np.cumsum(self.doc_lens[:-1], out=offs[1:])
        return offs

    def flat_destinations(self) -> np.ndarray:
        """Flat destination row per source, in C source order (q, b, s)."""
        offs = self.dest_row_offsets()
        return (self.indices.astype(np.int64) + offs[None, :, None]).ravel()


@dataclass(frozen=True)
class TileConfig:
    """Tile shape for the streaming kernels.

    bq: query rows per similarity sub-tile, bd: document rows per tile,
    qchunk: query rows kept in flight per chunk (a multiple of bq).  Results
    are identical for every valid config; these only steer the working set.
    """

    bq: int = 32
    bd: int = 64
    qchunk: int = 128

    def __post_init__(self):
        if self.bq < 1 or self.bd < 1 or self.qchunk < 1:
            raise BadTileConfig(f"tile sizes must be >= 1, got {self}")
        if self.qchunk % self.bq != 0:
            raise BadTileConfig(f"qchunk ({self.qchunk}) must be a multiple of bq ({self.bq})")


DEFAULT_TILE = TileConfig()


def validate_pair(q, d) -> None:
    """Check that a query/document pair is scoreable: equal dims, no NaN.

    Accepts EmbeddingMatrix (already validated at construction) or raw
    2-D arrays.
    """
    q_arr = q.data if isinstance(q, EmbeddingMatrix) else np.asarray(q)
    d_arr = d.data if isinstance(d, EmbeddingMatrix) else np.asarray(d)
    if q_arr.ndim != 2 or d_arr.ndim != 2:
        raise ShapeMismatch("both operands must be 2-D [tokens x dim]")
    if q_arr.shape[1] != d_arr.shape[1]:
        raise DimMismatch(q_arr.shape[1], d_arr.shape[1])
    for name, arr in (("Q", q_arr), ("D", d_arr)):
        if arr.dtype == np.int8:
            # int8 dots would wrap around; quantized data scores via quant
            raise ShapeMismatch(f"{name} holds raw int8 rows; score them through the int8 kernel")
        if arr.dtype.kind == "f" and np.isnan(arr).any():
            raise NaNInput(_first_nan_location(name, arr))
