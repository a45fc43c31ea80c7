"""Shared elementwise compute primitives.

Both the streaming kernels and the materialized reference path build their
similarities from these helpers, which is what makes them bit-identical:

  * dot_block accumulates over the embedding axis one coordinate at a time
    with plain elementwise multiply-then-add.  Each (i, j) entry is therefore
    a strict left-to-right float32 sum of float32 products, independent of
    how the surrounding matrix is tiled (elementwise ops never reassociate
    across elements, unlike BLAS matmul whose rounding can differ between an
    interior element and a tile edge).
  * seq_sum_f64 is the one reduction convention for turning per-row float32
    extremes into a float64 scalar: np.add.accumulate, which is sequential
    by definition, so the result does not depend on chunk boundaries.
"""

from __future__ import annotations

import numpy as np


def seq_sum_f64(values: np.ndarray) -> float:
    """Strict left-to-right float64 sum of a 1-D array."""
    if values.size == 0:
        return 0.0
    return float(np.add.accumulate(values, dtype=np.float64)[-1])


def dot_block(q_rows: np.ndarray, d_rows: np.ndarray, out: np.ndarray, tmp: np.ndarray) -> None:
    """out[i, j] = <q_rows[i], d_rows[j]> in float32, fixed accumulation order.

    q_rows: (h, dim), d_rows: (w, dim), out/tmp: (h, w) float32 scratch views.
    """
    dim = q_rows.shape[1]
    np.multiply(q_rows[:, 0, None], d_rows[None, :, 0], out=out)
    for k in range(1, dim):
        np.multiply(q_rows[:, k, None], d_rows[None, :, k], out=tmp)
        out += tmp


def sq_norms(rows: np.ndarray) -> np.ndarray:
    """Per-row squared norms in float32 with the dot_block accumulation order."""
    dim = rows.shape[1]
    out = rows[:, 0] * rows[:, 0]
    for k in range(1, dim):
        out += rows[:, k] * rows[:, k]
    return out


def sq_dist_block(
    p_rows: np.ndarray,
    s_rows: np.ndarray,
    p_norms: np.ndarray,
    s_norms: np.ndarray,
    out: np.ndarray,
    tmp: np.ndarray,
) -> None:
    """out[i, j] = ||p_i||^2 + ||s_j||^2 - 2<p_i, s_j>, sharing dot_block.

    The expansion reuses the inner-product core, so squared distances cost
    one extra scale and two adds per element on top of a similarity tile.
    """
    dot_block(p_rows, s_rows, out, tmp)
    out *= np.float32(-2.0)
    out += p_norms[:, None]
    out += s_norms[None, :]


def fold_extreme(
    block: np.ndarray,
    col_offset: int,
    best: np.ndarray,
    best_idx: np.ndarray,
    maximize: bool,
) -> None:
    """Fold one similarity/distance tile into the running extreme.

    Replacement is strict (`>` for max, `<` for min), so on ties the
    earlier column wins; within a tile, argmax/argmin already return the
    first (lowest) position.  Scanning tiles in index order therefore
    yields the global lowest-index winner for every tile shape.
    """
    if maximize:
        ext = block.max(axis=1)
        pos = block.argmax(axis=1)
        upd = ext > best
    else:
        ext = block.min(axis=1)
        pos = block.argmin(axis=1)
        upd = ext < best
    if upd.any():
        best_idx[upd] = pos[upd] + col_offset
        best[upd] = ext[upd]
