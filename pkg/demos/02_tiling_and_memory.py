"""
Tiling, working set, and the byte model
---------------------------------------

The kernel streams document tiles through a small working set and folds
them into a running row max.  Scores are identical for every tile shape;
what the tile controls is only how much scratch is in flight.  The
allocation ledger shows the streamed path's working set is flat in
document length while the materialized reference grows with it, and the
measured read bytes land exactly on the analytic model.
"""

from maxsim import TileConfig, TrafficReport, dense_score, fused_score_batch, model_traffic
from maxsim.synth import make_corpus, make_queries, padded_batch

import numpy as np

query = make_queries(1, 64, 32, seed=2)
print("tile sweep, one query vs 8 docs of 256 tokens:")
docs = padded_batch(make_corpus(8, np.full(8, 256), 32, seed=3))
base = None
for tile in (TileConfig(1, 1, 1), TileConfig(8, 16, 32), TileConfig(32, 64, 128), TileConfig(32, 128, 64)):
    scores, _, rep = fused_score_batch(query, docs, tile=tile)
    if base is None:
        base = scores.values
    print(f"  bq={tile.bq:3d} bd={tile.bd:3d} qchunk={tile.qchunk:3d}"
          f"  peak scratch {rep.peak_aux_bytes:6d} B"
          f"  identical: {np.array_equal(scores.values, base)}")

print("\nworking set vs document length (streamed stays flat, dense grows):")
for length in (128, 512, 2048):
    docs = padded_batch(make_corpus(4, np.full(4, length), 32, seed=4))
    rep = TrafficReport()
    fused_score_batch(query, docs, report=rep)
    rep_dense = TrafficReport()
    dense_score(query[0], docs, report=rep_dense)
    print(f"  L_d {length:5d}: streamed {rep.peak_aux_bytes:7d} B   dense {rep_dense.peak_aux_bytes:10d} B")

print("\nmeasured reads vs the analytic model:")
docs = padded_batch(make_corpus(32, np.full(32, 200), 32, seed=5))
rep = TrafficReport()
fused_score_batch(query, docs, report=rep)
model = model_traffic(1, 32, 64, 200, 32)
print("  measured:", rep.bytes_read, " model:", model.fused_read, " equal:", rep.bytes_read == model.fused_read)
print("  naive/fused byte ratio at this shape: %.1fx" % model.naive_over_fused)
print("  similarity-surface vs operand elements at 1024/1024/128: %.1fx"
      % model_traffic(1, 1, 1024, 1024, 128).s_to_operand_ratio)
