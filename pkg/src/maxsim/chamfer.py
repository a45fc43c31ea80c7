"""Chamfer distance as a second instance of the hard-selection pattern.

Same streaming skeleton as MaxSim with two swaps: an online MIN over the
other point set (still idempotent, still no rescaling) and squared
Euclidean distance in place of the inner product.  Squared distances are
expanded as ||p||^2 + ||q||^2 - 2<p, q> with per-row norms precomputed, so
the inner loop is the same inner-product core the scorer uses.  The
backward reuses the saved nearest-neighbour indices through the very same
inverse CSR builder as the retrieval backward.

The point type is framed for 3-D clouds but every kernel here is
dimension-generic.
"""

from __future__ import annotations

import numpy as np

from .backward import build_inverse_csr
from .errors import DimMismatch, NaNInput, ShapeMismatch, StaleArgmin
from .instrument import TrafficReport
from .kernels import fold_extreme, seq_sum_f64, sq_dist_block, sq_norms
from .types import ArgmaxMap, DEFAULT_TILE, TileConfig


class PointSet:
    """n points of fixed dimension (3 for clouds), finite float32 rows."""

    __slots__ = ("data", "n", "dim")

    def __init__(self, points):
        arr = np.ascontiguousarray(points, dtype=np.float32)
        if arr.ndim != 2:
            raise ShapeMismatch(f"point set must be 2-D [n x dim], got shape {arr.shape}")
        if arr.shape[0] < 1:
            raise ShapeMismatch("point set must hold at least one point")
        if not np.isfinite(arr).all():
            bad = np.unravel_index(int(np.argmin(np.isfinite(arr))), arr.shape)
            raise NaNInput(("points",) + tuple(int(i) for i in bad))
        arr.setflags(write=False)
        self.data = arr
        self.n = int(arr.shape[0])
        self.dim = int(arr.shape[1])

    def __repr__(self):
        return f"PointSet(n={self.n}, dim={self.dim})"


def _nearest_fold(
    a: np.ndarray,
    b: np.ndarray,
    a_norms: np.ndarray,
    b_norms: np.ndarray,
    tile: TileConfig,
    rep: TrafficReport,
) -> tuple[np.ndarray, np.ndarray]:
    """Per row of a: min squared distance into b, plus the argmin (ties lowest)."""
    n, dim = a.shape
    m = b.shape[0]
    best = np.full(n, np.inf, dtype=np.float32)
    idx = np.zeros(n, dtype=np.int32)
    wq = min(tile.bq, n)
    wd = min(tile.bd, m)
    block = np.empty((wq, wd), dtype=np.float32)
    scratch = np.empty((wq, wd), dtype=np.float32)
    with rep.scratch(best, idx, block, scratch):
        rep.add_read(a.nbytes + b.nbytes)
        for r0 in range(0, n, tile.bq):
            r1 = min(r0 + tile.bq, n)
            for t0 in range(0, m, tile.bd):
                t1 = min(t0 + tile.bd, m)
                sub = block[: r1 - r0, : t1 - t0]
                tmp = scratch[: r1 - r0, : t1 - t0]
                sq_dist_block(a[r0:r1], b[t0:t1], a_norms[r0:r1], b_norms[t0:t1], sub, tmp)
                rep.add_macs(2 * (r1 - r0) * (t1 - t0) * dim)
                fold_extreme(sub, t0, best[r0:r1], idx[r0:r1], maximize=False)
    rep.alloc(best.nbytes + idx.nbytes)  # results stay live for the caller
    return best, idx


def chamfer_forward(
    p_set: PointSet,
    s_set: PointSet,
    tile: TileConfig = DEFAULT_TILE,
    report: TrafficReport | None = None,
):
    """Symmetric mean of squared nearest-neighbour distances, streamed.

    The [n x m] pairwise matrix is never allocated; both nearest-neighbour
    index lists are saved for the backward.  Returns
    (distance, argmin_ps, argmin_sp).
    """
    if p_set.dim != s_set.dim:
        raise DimMismatch(p_set.dim, s_set.dim)
    rep = report if report is not None else TrafficReport()
    p, s = p_set.data, s_set.data
    p_norms = sq_norms(p)
    s_norms = sq_norms(s)
    with rep.scratch(p_norms, s_norms):
        best_ps, argmin_ps = _nearest_fold(p, s, p_norms, s_norms, tile, rep)
        best_sp, argmin_sp = _nearest_fold(s, p, s_norms, p_norms, tile, rep)
    cd = seq_sum_f64(best_ps) / p_set.n + seq_sum_f64(best_sp) / s_set.n
    rep.add_write(8)
    return cd, argmin_ps, argmin_sp


def dense_chamfer_forward(p_set: PointSet, s_set: PointSet, precision: str = "f32"):
    """Reference path materializing the full pairwise distance matrix.

    "f32" shares the streamed kernel's elementwise arithmetic (bit-matched);
    "f64" computes distances directly from coordinate differences and is the
    independent tolerance oracle.
    """
    if p_set.dim != s_set.dim:
        raise DimMismatch(p_set.dim, s_set.dim)
    p, s = p_set.data, s_set.data
    if precision == "f64":
        diff = p.astype(np.float64)[:, None, :] - s.astype(np.float64)[None, :, :]
        dist = (diff * diff).sum(axis=2)
        argmin_ps = dist.argmin(axis=1).astype(np.int32)
        argmin_sp = dist.argmin(axis=0).astype(np.int32)
        cd = seq_sum_f64(dist.min(axis=1)) / p_set.n + seq_sum_f64(dist.min(axis=0)) / s_set.n
        return cd, argmin_ps, argmin_sp
    if precision != "f32":
        raise ValueError(f"unknown precision {precision!r}")
    # one materialized matrix per direction, each in the streamed kernel's
    # elementwise arrangement (norm of the row side added first)
    p_norms, s_norms = sq_norms(p), sq_norms(s)
    dist_ps = np.empty((p_set.n, s_set.n), dtype=np.float32)
    tmp = np.empty_like(dist_ps)
    sq_dist_block(p, s, p_norms, s_norms, dist_ps, tmp)
    dist_sp = np.empty((s_set.n, p_set.n), dtype=np.float32)
    tmp = np.empty_like(dist_sp)
    sq_dist_block(s, p, s_norms, p_norms, dist_sp, tmp)
    argmin_ps = dist_ps.argmin(axis=1).astype(np.int32)
    argmin_sp = dist_sp.argmin(axis=1).astype(np.int32)
    cd = seq_sum_f64(dist_ps.min(axis=1)) / p_set.n + seq_sum_f64(dist_sp.min(axis=1)) / s_set.n
    return cd, argmin_ps, argmin_sp


def _check_argmins(p_set: PointSet, s_set: PointSet, argmin_ps, argmin_sp):
    a1 = np.ascontiguousarray(argmin_ps, dtype=np.int64)
    a2 = np.ascontiguousarray(argmin_sp, dtype=np.int64)
    if a1.shape != (p_set.n,) or a2.shape != (s_set.n,):
        raise StaleArgmin("argmin lists do not match the point set sizes")
    if a1.size and (a1.min() < 0 or a1.max() >= s_set.n):
        raise StaleArgmin("argmin into the second set out of range")
    if a2.size and (a2.min() < 0 or a2.max() >= p_set.n):
        raise StaleArgmin("argmin into the first set out of range")
    return a1, a2


def chamfer_backward(
    p_set: PointSet,
    s_set: PointSet,
    argmin_ps,
    argmin_sp,
    upstream: float = 1.0,
    report: TrafficReport | None = None,
):
    """Gradient of the distance through the fixed nearest-neighbour match.

    Each direction contributes a gather to its own side, (2/n)(p - s*), and
    a scatter to the other side, routed through the same inverse-CSR builder
    the retrieval backward uses (destination-owned, ascending-source
    accumulation, each output row stored once).  Returns (dP, dS) in
    float64.
    """
    a1, a2 = _check_argmins(p_set, s_set, argmin_ps, argmin_sp)
    rep = report if report is not None else TrafficReport()
    p = p_set.data
    s = s_set.data
    n, m = p_set.n, s_set.n
    u = float(upstream)
    c_ps = 2.0 * u / n  # first sum is averaged over |P|
    c_sp = 2.0 * u / m
    d_p = np.zeros((n, p_set.dim), dtype=np.float64)
    d_s = np.zeros((m, s_set.dim), dtype=np.float64)
    # gather halves
    for i in range(n):
        d_p[i] += c_ps * (p[i].astype(np.float64) - s[a1[i]])
    for j in range(m):
        d_s[j] += c_sp * (s[j].astype(np.float64) - p[a2[j]])
    # scatter halves, destination-owned via the shared CSR inversion
    csr_s = build_inverse_csr(
        ArgmaxMap(a1[None, None, :].astype(np.int32), [m], padded_len=m), report=rep
    )
    for r in range(csr_s.n_dest):
        for t in range(csr_s.row_ptr[r], csr_s.row_ptr[r + 1]):
            i = int(csr_s.col_idx[t])
            d_s[r] += c_ps * (s[r].astype(np.float64) - p[i])
    csr_p = build_inverse_csr(
        ArgmaxMap(a2[None, None, :].astype(np.int32), [n], padded_len=n), report=rep
    )
    for r in range(csr_p.n_dest):
        for t in range(csr_p.row_ptr[r], csr_p.row_ptr[r + 1]):
            j = int(csr_p.col_idx[t])
            d_p[r] += c_sp * (p[r].astype(np.float64) - s[j])
    return d_p, d_s


def dense_chamfer_backward(p_set: PointSet, s_set: PointSet, argmin_ps, argmin_sp, upstream: float = 1.0):
    """Reference gradient: plain source-order loops, no CSR."""
    a1, a2 = _check_argmins(p_set, s_set, argmin_ps, argmin_sp)
    p = p_set.data.astype(np.float64)
    s = s_set.data.astype(np.float64)
    u = float(upstream)
    d_p = np.zeros_like(p)
    d_s = np.zeros_like(s)
    for i in range(p_set.n):
        delta = p[i] - s[a1[i]]
        d_p[i] += (2.0 * u / p_set.n) * delta
        d_s[a1[i]] -= (2.0 * u / p_set.n) * delta
    for j in range(s_set.n):
        delta = s[j] - p[a2[j]]
        d_s[j] += (2.0 * u / s_set.n) * delta
        d_p[a2[j]] -= (2.0 * u / s_set.n) * delta
    return d_p, d_s
