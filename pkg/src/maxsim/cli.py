"""Command-line front-end and benchmark harness.

Machine output is one schema-versioned JSON report on stdout (and, with
--out, to a file); the human summary goes to stderr.  Every command is
deterministic given (seed, flags): reports are byte-identical apart from
the wall_ms timing fields.  Exit code 0 means every correctness check in
the run passed.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import statistics
import sys
import tempfile
import time

import numpy as np

from . import __version__
from .backward import backward_dispatch
from .errors import MaxSimError
from .forward import dispatch, fused_score_batch
from .instrument import TrafficReport
from .quant import quantize_per_token, two_stage_topk
from .reference import dense_backward, dense_score, dense_score_batch, finite_diff_grad
from .streamio import CorpusReader, model_traffic, read_embeddings, stream_score_topk, write_embeddings
from .synth import LENGTH_DISTS, doc_lengths, fill_ratio, make_corpus, make_queries, padded_batch
from .types import DocBatch, EmbeddingMatrix, TileConfig
from .varlen import PackedCorpus, fused_score_varlen, pack

SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# report plumbing
# ---------------------------------------------------------------------------

def _environment(threads: int) -> dict:
    return {
        "engine_version": __version__,
        "numpy": np.__version__,
        "platform": platform.platform(),
        "python": platform.python_version(),
        "threads": threads,
    }


def _report(command: str, config: dict, results: dict, passed: bool, threads: int) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "environment": _environment(threads),
        "results": results,
        "passed": bool(passed),
    }


def _emit(report: dict, summary_lines, out_path=None) -> None:
    text = json.dumps(report, sort_keys=True, indent=2)
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text + "\n")
    sys.stdout.write(text + "\n")
    for line in summary_lines:
        sys.stderr.write(line + "\n")


def _parse_tile(arg: str | None) -> TileConfig:
    if not arg:
        return TileConfig()
    parts = [int(p) for p in arg.split(",")]
    if len(parts) != 3:
        raise ValueError("--tile expects bq,bd,qchunk")
    return TileConfig(bq=parts[0], bd=parts[1], qchunk=parts[2])


def _resolve_threads(value) -> int:
    if value is not None:
        return max(1, int(value))
    return max(1, int(os.environ.get("MXS_THREADS", "1")))


def _ranked(scores_row: np.ndarray, k: int | None):
    order = np.lexsort((np.arange(scores_row.size), -scores_row))
    if k is not None:
        order = order[:k]
    return [[int(b), float(scores_row[b])] for b in order]


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def _load_queries(path):
    obj = read_embeddings(path)
    if isinstance(obj, DocBatch):
        return [
            EmbeddingMatrix(obj.data[i][: int(obj.valid_lens[i])], elem=obj.elem)
            for i in range(obj.n_docs)
        ]
    if isinstance(obj, PackedCorpus):
        return [EmbeddingMatrix(obj.doc(i), elem=obj.elem) for i in range(obj.n_docs)]
    raise MaxSimError("query file must hold float embeddings (dense or packed layout)")


def run_score(args) -> dict:
    threads = _resolve_threads(args.threads)
    tile = _parse_tile(args.tile)
    queries = _load_queries(args.query)
    rep = TrafficReport()
    checks: dict = {}
    rankings = []
    t0 = time.perf_counter()

    if args.block:
        strategy_tag = "streamed_blocks"
        with CorpusReader(args.corpus) as reader:
            n_docs, dim = reader.n_docs, reader.dim
            k = args.topk if args.topk is not None else n_docs
            for q in queries:
                ranked, _ = stream_score_topk(q, reader, args.block, k, tile=tile, report=rep)
                rankings.append([[int(i), float(s)] for i, s in ranked])
        corpus_meta = {"n_docs": n_docs, "dim": dim, "layout": "streamed"}
    else:
        corpus = read_embeddings(args.corpus)
        if args.int8:
            if not isinstance(corpus, DocBatch):
                raise MaxSimError("--int8 expects a dense float corpus to quantize")
            strategy_tag = dispatch(len(queries), corpus.n_docs, queries[0].rows,
                                    corpus.padded_len, corpus.dim, dtype="i8").tag
            corpus_q = [
                quantize_per_token(corpus.data[b][: int(corpus.valid_lens[b])])
                for b in range(corpus.n_docs)
            ]
            k = args.topk if args.topk is not None else corpus.n_docs
            for q in queries:
                ranked = two_stage_topk(q, corpus_q, corpus, k, tile=tile, report=rep)
                rankings.append([[int(i), float(s)] for i, s in ranked])
            corpus_meta = {"n_docs": corpus.n_docs, "dim": corpus.dim, "layout": "dense"}
        elif isinstance(corpus, PackedCorpus) or args.varlen:
            if not isinstance(corpus, PackedCorpus):
                raise MaxSimError("--varlen expects a packed corpus file")
            strategy_tag = dispatch(len(queries), corpus.n_docs, queries[0].rows,
                                    int(corpus.doc_lens.max()), corpus.dim, packed=True).tag
            for q in queries:
                scores, _, _ = fused_score_varlen(q, corpus, tile=tile, report=rep)
                rankings.append(_ranked(scores, args.topk))
            corpus_meta = {"n_docs": corpus.n_docs, "dim": corpus.dim, "layout": "packed"}
        else:
            if not isinstance(corpus, DocBatch):
                raise MaxSimError(
                    "corpus layout not scoreable directly; quantized files hold no float "
                    "embeddings, regenerate the float corpus and pass --int8"
                )
            strat = dispatch(len(queries), corpus.n_docs, queries[0].rows,
                             corpus.padded_len, corpus.dim)
            strategy_tag = strat.tag
            scores, _, _ = fused_score_batch(queries, corpus, tile=tile, report=rep, threads=threads)
            for qi in range(len(queries)):
                rankings.append(_ranked(scores.values[qi], args.topk))
            model = model_traffic(len(queries), corpus.n_docs, queries[0].rows,
                                  corpus.padded_len, corpus.dim, elem_bytes=4)
            checks["traffic_matches_model"] = rep.bytes_read == model.fused_read
            corpus_meta = {"n_docs": corpus.n_docs, "dim": corpus.dim, "layout": "dense"}

    wall_ms = (time.perf_counter() - t0) * 1e3
    passed = all(checks.values()) if checks else True
    results = {
        "strategy": strategy_tag,
        "corpus": corpus_meta,
        "n_queries": len(queries),
        "rankings": rankings,
        "traffic": rep.as_dict(),
        "checks": checks,
        "wall_ms": wall_ms,
    }
    config = {
        "query": args.query,
        "corpus": args.corpus,
        "tile": [tile.bq, tile.bd, tile.qchunk],
        "topk": args.topk,
        "int8": bool(args.int8),
        "varlen": bool(args.varlen),
        "block": args.block,
    }
    return _report("score", config, results, passed, threads)


# ---------------------------------------------------------------------------
# gradcheck
# ---------------------------------------------------------------------------

def _softmax_ce(scores: np.ndarray):
    """In-batch contrastive loss: positives on the diagonal."""
    b = scores.shape[0]
    shifted = scores - scores.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1)) + scores.max(axis=1)
    loss = float(np.mean(lse - np.diag(scores)))
    probs = np.exp(scores - lse[:, None])
    grad = (probs - np.eye(b)) / b
    return loss, grad


def contrastive_drift(n_docs: int, len_q: int, len_d: int, dim: int, steps: int, seed: int,
                      lr: float = 0.05) -> dict:
    """Train the same toy contrastive objective through both paths.

    Two independent parameter copies take `steps` SGD steps, one through the
    streamed forward/backward, one through the dense reference; returns the
    loss trajectories and the max relative drift between them.
    """
    rng = np.random.default_rng(seed)
    q0 = rng.standard_normal((n_docs, len_q, dim)).astype(np.float32)
    d0 = rng.standard_normal((n_docs, len_d, dim)).astype(np.float32)
    params = {
        "fused": (q0.copy(), d0.copy()),
        "dense": (q0.copy(), d0.copy()),
    }
    losses = {"fused": [], "dense": []}
    for _ in range(steps):
        for path in ("fused", "dense"):
            q_arr, d_arr = params[path]
            queries = [EmbeddingMatrix(q_arr[i]) for i in range(n_docs)]
            docs = DocBatch([EmbeddingMatrix(d_arr[i]) for i in range(n_docs)])
            if path == "fused":
                scores, argmax, _ = fused_score_batch(queries, docs)
                loss, g = _softmax_ce(scores.values)
                d_q, d_d = backward_dispatch(argmax, g, queries, docs)
            else:
                vals, argmax = dense_score_batch(queries, docs)
                loss, g = _softmax_ce(vals)
                d_q, d_d = dense_backward(queries, docs, g, argmax)
            losses[path].append(loss)
            params[path] = (
                (q_arr.astype(np.float64) - lr * d_q).astype(np.float32),
                (d_arr.astype(np.float64) - lr * d_d).astype(np.float32),
            )
    fused = np.array(losses["fused"])
    dense = np.array(losses["dense"])
    drift = float(np.max(np.abs(fused - dense) / np.maximum(np.abs(dense), 1e-300)))
    return {
        "steps": steps,
        "loss_first": float(dense[0]),
        "loss_last_dense": float(dense[-1]),
        "loss_last_fused": float(fused[-1]),
        "max_rel_drift": drift,
    }


def run_gradcheck(args) -> dict:
    threads = _resolve_threads(args.threads)
    shape = tuple(int(v) for v in args.shape.split(","))
    if len(shape) != 5 or min(shape) < 1:
        raise ValueError("--shape expects five positive ints: nq,b,lq,ld,d")
    n_q, b, l_q, l_d, dim = shape
    rng = np.random.default_rng(args.seed)
    queries = [EmbeddingMatrix(rng.standard_normal((l_q, dim)).astype(np.float32)) for _ in range(n_q)]
    docs = DocBatch([EmbeddingMatrix(rng.standard_normal((l_d, dim)).astype(np.float32)) for _ in range(b)])
    g = rng.standard_normal((n_q, b))

    scores, argmax, _ = fused_score_batch(queries, docs)
    dense_vals, dense_arg = dense_score_batch(queries, docs)
    d_q, d_d = backward_dispatch(argmax, g, queries, docs)
    rd_q, rd_d = dense_backward(queries, docs, g, dense_arg)

    def _cos(a, b_arr):
        na, nb = np.linalg.norm(a), np.linalg.norm(b_arr)
        if na == 0 or nb == 0:
            return 1.0 if na == nb else 0.0
        return float(np.dot(a.ravel(), b_arr.ravel()) / (na * nb))

    max_abs = max(float(np.max(np.abs(d_q - rd_q))), float(np.max(np.abs(d_d - rd_d))))
    cos_q, cos_d = _cos(d_q, rd_q), _cos(d_d, rd_d)

    # finite differences against a pure float64 score evaluation, query side
    d64 = [docs.data[i][: int(docs.valid_lens[i])].astype(np.float64) for i in range(b)]

    def loss_at(q_flat: np.ndarray) -> float:
        total = 0.0
        for qi in range(n_q):
            for bi in range(b):
                sims = q_flat[qi] @ d64[bi].T
                total += g[qi, bi] * float(sims.max(axis=1).sum())
        return total

    point = np.stack([q.data for q in queries]).astype(np.float64)
    fd = finite_diff_grad(loss_at, point, eps=1e-5)
    denom = np.maximum(np.abs(fd), 1e-8)
    fd_rel = float(np.max(np.abs(fd - d_q) / denom))

    loop = contrastive_drift(
        n_docs=b, len_q=l_q, len_d=l_d, dim=dim, steps=args.steps, seed=args.seed + 1
    )
    passed = (
        max_abs == 0.0
        and round(cos_q, 7) == 1.0
        and round(cos_d, 7) == 1.0
        and fd_rel <= 1e-6
        and loop["max_rel_drift"] <= 1e-4
    )
    results = {
        "grad_max_abs_diff": max_abs,
        "grad_cosine_q": cos_q,
        "grad_cosine_d": cos_d,
        "finite_diff_max_rel": fd_rel,
        "training_loop": loop,
        "scores_match_dense": bool(np.array_equal(scores.values, dense_vals)),
    }
    config = {"shape": list(shape), "seed": args.seed, "steps": args.steps}
    return _report("gradcheck", config, results, passed, threads)


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def _median_time(fn, repeats: int) -> tuple[float, object]:
    fn()  # warmup
    times = []
    result = None
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        result = fn()
        times.append((time.perf_counter() - start) * 1e3)
    return statistics.median(times), result


def _parse_sizes(arg: str):
    sizes = []
    for part in arg.split(";"):
        lq, ld, d = (int(v) for v in part.split(","))
        sizes.append((lq, ld, d))
    return sizes


def run_bench(args) -> dict:
    threads = _resolve_threads(args.threads)
    seed = args.seed
    repeats = args.repeats
    rows = []
    ok = True

    if args.suite == "forward" or args.suite == "traffic":
        sizes = _parse_sizes(args.sizes) if args.sizes else [(32, 128, 32), (64, 256, 32), (128, 128, 32)]
        for lq, ld, d in sizes:
            query = make_queries(1, lq, d, seed)[0]
            docs = padded_batch(make_corpus(args.docs, np.full(args.docs, ld), d, seed + 1))
            if args.suite == "forward":
                wall, out = _median_time(lambda: fused_score_batch([query], docs, threads=threads), repeats)
                scores, argmax, _ = out
                ref_scores, ref_arg = dense_score(query, docs)
                match = bool(
                    np.array_equal(scores.values[0], ref_scores)
                    and np.array_equal(argmax.indices, ref_arg.indices)
                )
                ok &= match
                rows.append({"shape": [lq, ld, d], "wall_ms": wall, "scores_match_oracle": match})
            else:
                rep = TrafficReport()
                fused_score_batch([query], docs, report=rep)
                model = model_traffic(1, args.docs, lq, ld, d, elem_bytes=4)
                match = rep.bytes_read == model.fused_read
                ok &= match
                rows.append({
                    "shape": [lq, ld, d],
                    "measured_read": rep.bytes_read,
                    "model_read": model.fused_read,
                    "model_matches": match,
                    "s_to_operand_ratio": model.s_to_operand_ratio,
                })

    elif args.suite == "tilesweep":
        lq, ld, d = (128, 128, 32)
        query = make_queries(1, lq, d, seed)[0]
        docs = padded_batch(make_corpus(args.docs, np.full(args.docs, ld), d, seed + 1))
        ref_scores, ref_arg = dense_score(query, docs)
        chunks = [16, 32, 64, 128]
        walls = []
        for chunk in chunks:
            tile = TileConfig(bq=16, bd=64, qchunk=chunk)
            wall, out = _median_time(lambda: fused_score_batch([query], docs, tile=tile), repeats)
            scores, argmax, _ = out
            match = bool(
                np.array_equal(scores.values[0], ref_scores)
                and np.array_equal(argmax.indices, ref_arg.indices)
            )
            ok &= match
            walls.append(wall)
            rows.append({"qchunk": chunk, "wall_ms": wall, "scores_match_oracle": match})
        flatness = (max(walls) - min(walls)) / min(walls) if min(walls) > 0 else 0.0
        rows.append({"flatness_max_over_min_minus_one": flatness})

    elif args.suite == "varlen":
        d, max_len = 32, 128
        query = make_queries(1, 24, d, seed)[0]
        for dist in LENGTH_DISTS:
            lens = doc_lengths(dist, args.docs, max_len, seed + 2)
            corpus = make_corpus(args.docs, lens, d, seed + 3)
            packed = pack(corpus)
            rho = fill_ratio(lens, max_len)
            rep_packed = TrafficReport()
            scores_p, _, _ = fused_score_varlen(query, packed, report=rep_packed)
            rep_padded = TrafficReport()
            batch = padded_batch(corpus, max_len)
            scores_d, _, _ = fused_score_batch([query], batch, report=rep_padded)
            work_ratio = rep_packed.mac_count / rep_padded.mac_count
            match = bool(np.array_equal(scores_p, scores_d.values[0]))
            ok &= match
            rows.append({
                "length_dist": dist,
                "fill_ratio": rho,
                "work_ratio": work_ratio,
                "scores_match_padded": match,
            })

    elif args.suite == "stream":
        d, ld, k, block = 16, 24, 20, 500
        query = make_queries(1, 16, d, seed)[0]
        for n_docs in (2000, args.docs):
            corpus = padded_batch(make_corpus(n_docs, np.full(n_docs, ld), d, seed + 4))
            with tempfile.TemporaryDirectory() as tmp:
                path = os.path.join(tmp, "corpus.mxs")
                write_embeddings(path, corpus)
                ranked, rep = stream_score_topk(query, path, block, k)
            scores, _, _ = fused_score_batch([query], corpus)
            exhaustive = _ranked(scores.values[0], k)
            match = [list(map(float, r)) for r in ranked] == [list(map(float, r)) for r in exhaustive]
            ok &= bool(match)
            rows.append({
                "n_docs": n_docs,
                "peak_aux_bytes": rep.peak_aux_bytes,
                "topk_matches_exhaustive": bool(match),
            })
        if len(rows) == 2:
            a, b = rows[0]["peak_aux_bytes"], rows[1]["peak_aux_bytes"]
            rows.append({"peak_flat_within_1pct": bool(abs(a - b) <= 0.01 * max(a, b))})

    else:
        raise ValueError(f"unknown suite {args.suite!r}")

    config = {
        "suite": args.suite,
        "sizes": args.sizes,
        "docs": args.docs,
        "repeats": repeats,
        "seed": seed,
    }
    return _report("bench", config, {"rows": rows}, ok, threads)


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def run_generate(args) -> dict:
    threads = _resolve_threads(args.threads)
    lens = doc_lengths(args.len_dist, args.docs, args.max_len, args.seed)
    corpus = make_corpus(args.docs, lens, args.dim, args.seed + 1)
    if args.layout == "dense":
        if args.len_dist != "const":
            raise MaxSimError("dense layout stores uniform lengths; use --layout packed for ragged corpora")
        obj = padded_batch(corpus)
    else:
        obj = pack(corpus)
    write_embeddings(args.path, obj, elem=args.elem)
    results = {
        "out": args.path,
        "n_docs": args.docs,
        "dim": args.dim,
        "fill_ratio": fill_ratio(lens, args.max_len),
        "total_tokens": int(np.sum(lens)),
    }
    config = {
        "docs": args.docs,
        "dim": args.dim,
        "len_dist": args.len_dist,
        "max_len": args.max_len,
        "layout": args.layout,
        "elem": args.elem,
        "seed": args.seed,
    }
    return _report("generate", config, results, True, threads)


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maxsim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--threads", type=int, default=None,
                       help="worker cap (default: MXS_THREADS env var or 1)")
        p.add_argument("--out", default=None, help="also write the JSON report here")
        p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("score", help="score queries against a corpus, write rankings")
    p.add_argument("query", help="query embedding file")
    p.add_argument("corpus", help="corpus embedding file")
    p.add_argument("--tile", default=None, help="bq,bd,qchunk")
    p.add_argument("--varlen", action="store_true", help="require the packed padding-free path")
    p.add_argument("--int8", action="store_true", help="quantize and run the two-stage top-K scan")
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--block", type=int, default=None, help="stream the corpus in blocks of this many docs")
    common(p)
    p.set_defaults(fn=run_score)

    p = sub.add_parser("gradcheck", help="dense-vs-streamed gradient comparison and toy training loop")
    p.add_argument("--shape", default="2,3,4,5,8", help="nq,b,lq,ld,d")
    p.add_argument("--steps", type=int, default=200)
    common(p)
    p.set_defaults(fn=run_gradcheck)

    p = sub.add_parser("bench", help="benchmark suites with correctness checks")
    p.add_argument("--suite", choices=["forward", "traffic", "tilesweep", "varlen", "stream"],
                   required=True)
    p.add_argument("--sizes", default=None, help='forward/traffic sizes: "lq,ld,d;lq,ld,d;..."')
    p.add_argument("--docs", type=int, default=None,
                   help="corpus size (default 16; stream suite defaults to 10000)")
    p.add_argument("--repeats", type=int, default=3)
    common(p)
    p.set_defaults(fn=run_bench)

    p = sub.add_parser("generate", help="write a seeded synthetic corpus file")
    p.add_argument("path", help="corpus file to write")
    p.add_argument("--docs", type=int, default=256)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--len-dist", choices=list(LENGTH_DISTS), default="const", dest="len_dist")
    p.add_argument("--max-len", type=int, default=64, dest="max_len")
    p.add_argument("--layout", choices=["dense", "packed"], default="dense")
    p.add_argument("--elem", choices=["f32", "f16"], default="f32")
    common(p)
    p.set_defaults(fn=run_generate)
    return parser


def _summary(report: dict):
    lines = [f"maxsim {report['command']}: {'PASS' if report['passed'] else 'FAIL'}"]
    results = report.get("results", {})
    if "rankings" in results and results["rankings"]:
        first = results["rankings"][0][:5]
        lines.append("top hits (query 0): " + ", ".join(f"doc {i} {s:.4f}" for i, s in first))
    if "grad_max_abs_diff" in results:
        lines.append(
            f"grad max|diff| {results['grad_max_abs_diff']:.3e}, cosines "
            f"({results['grad_cosine_q']:.7f}, {results['grad_cosine_d']:.7f}), "
            f"loop drift {results['training_loop']['max_rel_drift']:.3e}"
        )
    if "rows" in results:
        lines.append(f"{len(results['rows'])} rows")
    return lines


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "bench" and args.docs is None:
            args.docs = 10_000 if args.suite == "stream" else 16
        report = args.fn(args)
    except MaxSimError as exc:
        sys.stderr.write(f"error: {type(exc).__name__}: {exc}\n")
        return 2
    except (ValueError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    _emit(report, _summary(report), args.out)
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
