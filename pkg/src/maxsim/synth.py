"""Seeded synthetic workloads: unit-normalized Gaussian token embeddings
with length distributions spanning the fill-ratio regimes of real corpora.
"""

from __future__ import annotations

import numpy as np

from .chamfer import PointSet
from .types import DocBatch, EmbeddingMatrix

LENGTH_DISTS = ("const", "uniform", "hotpot", "ragged")


def unit_tokens(rng: np.random.Generator, rows: int, dim: int) -> np.ndarray:
    """Gaussian rows normalized to unit length, float32."""
    x = rng.standard_normal((rows, dim))
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return (x / norms).astype(np.float32)


def make_queries(n_queries: int, len_q: int, dim: int, seed: int):
    rng = np.random.default_rng(seed)
    return [EmbeddingMatrix(unit_tokens(rng, len_q, dim)) for _ in range(n_queries)]


def doc_lengths(dist: str, n_docs: int, max_len: int, seed: int) -> np.ndarray:
    """Document lengths for one of the fill-ratio regimes.

    const   -> fill ratio 1.0 (every doc at max_len)
    uniform -> lengths in [max_len/2, max_len], fill about 0.75
    hotpot  -> clipped lognormal, fill about 0.30 (realistic raggedness)
    ragged  -> bimodal short/long mix, fill about 0.16
    """
    rng = np.random.default_rng(seed)
    if dist == "const":
        lens = np.full(n_docs, max_len, dtype=np.int64)
    elif dist == "uniform":
        lens = rng.integers(max(1, max_len // 2), max_len + 1, size=n_docs)
    elif dist == "hotpot":
        lens = np.exp(rng.normal(np.log(0.22 * max_len), 0.75, size=n_docs))
        lens = np.clip(np.rint(lens), 4, max_len).astype(np.int64)
    elif dist == "ragged":
        short = max(1, max_len // 12)
        lens = np.full(n_docs, short, dtype=np.int64)
        lens[::12] = max_len
    else:
        raise ValueError(f"unknown length distribution {dist!r}")
    # fill-ratio math needs at least one doc at the padded length
    if lens.max() < max_len:
        lens[int(rng.integers(0, n_docs))] = max_len
    return lens


def fill_ratio(lengths, max_len: int) -> float:
    lengths = np.asarray(lengths)
    return float(lengths.sum() / (lengths.size * max_len))


def make_corpus(n_docs: int, lengths, dim: int, seed: int):
    """List of unit-token documents with the given lengths."""
    rng = np.random.default_rng(seed)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.shape != (n_docs,):
        raise ValueError("need one length per document")
    return [EmbeddingMatrix(unit_tokens(rng, int(l), dim)) for l in lengths]


def planted_corpus(
    query: EmbeddingMatrix,
    n_docs: int,
    len_d: int,
    seed: int,
    sim_lo: float = 0.70,
    sim_hi: float = 0.95,
):
    """Corpus with geometrically controlled, linearly graded relevance.

    Document b carries, for every query token q_i, one aligned unit token
    cos(t_b) * q_i + sin(t_b) * perp_i with cos(t_b) sliding linearly from
    sim_hi (doc 0) down to sim_lo, plus random unit fill tokens whose
    similarities stay below sim_lo with overwhelming margin at usual dims.
    True scores therefore decrease by the same known gap at every rank.
    Ranking-fidelity tests need this: with i.i.d. noise documents the
    rank-K boundary lands on near-ties that no reduced-precision scorer
    could resolve, so the overlap metric would measure the draw, not the
    kernel.
    """
    rng = np.random.default_rng(seed)
    docs = []
    l_q = query.rows
    q_rows = query.data.astype(np.float64)
    q_unit = q_rows / np.linalg.norm(q_rows, axis=1, keepdims=True)
    for b in range(n_docs):
        cos_t = sim_hi - (sim_hi - sim_lo) * b / max(n_docs - 1, 1)
        sin_t = float(np.sqrt(1.0 - cos_t * cos_t))
        tokens = unit_tokens(rng, len_d, query.dim).astype(np.float64)
        for i in range(min(l_q, len_d)):
            base = q_unit[i % l_q]
            perp = rng.standard_normal(query.dim)
            perp -= (perp @ base) * base
            perp /= np.linalg.norm(perp)
            tokens[i] = cos_t * base + sin_t * perp
        docs.append(EmbeddingMatrix(tokens.astype(np.float32)))
    return docs


def padded_batch(docs, max_len: int | None = None) -> DocBatch:
    return DocBatch(docs, padded_len=max_len)


def point_cloud(n: int, seed: int, dim: int = 3, scale: float = 1.0) -> PointSet:
    rng = np.random.default_rng(seed)
    return PointSet((rng.standard_normal((n, dim)) * scale).astype(np.float32))
