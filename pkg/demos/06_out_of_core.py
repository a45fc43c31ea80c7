"""
Out-of-core corpus scoring
--------------------------

A corpus too big for memory is scored by streaming fixed-size blocks from
its file while a bounded heap keeps the best K.  Peak scratch is one
block plus the running state, so it does not move when the corpus grows
tenfold, and the ranking is identical to scoring everything in memory.
"""

import os
import tempfile

import numpy as np

from maxsim import fused_score_batch, read_embeddings, stream_score_topk, write_embeddings
from maxsim.synth import make_corpus, make_queries, padded_batch

query = make_queries(1, 16, 16, seed=11)[0]
workdir = tempfile.mkdtemp(prefix="maxsim_demo_")

peaks = {}
for n_docs in (2_000, 10_000):
    corpus = padded_batch(make_corpus(n_docs, np.full(n_docs, 24), 16, seed=12))
    path = os.path.join(workdir, f"corpus_{n_docs}.mxs")
    write_embeddings(path, corpus)
    size_mb = os.path.getsize(path) / 1e6

    ranked, rep = stream_score_topk(query, path, block_docs=500, k=10)
    peaks[n_docs] = rep.peak_aux_bytes
    print(f"{n_docs:6d} docs ({size_mb:5.1f} MB on disk): "
          f"peak scratch {rep.peak_aux_bytes / 1e3:7.1f} kB, best doc {ranked[0][0]} at {ranked[0][1]:.4f}")

    if n_docs == 2_000:
        scores, _, _ = fused_score_batch([query], read_embeddings(path))
        order = np.lexsort((np.arange(n_docs), -scores.values[0]))[:10]
        in_memory = [(int(b), float(scores.values[0][b])) for b in order]
        print("        streamed top-10 equals in-memory top-10:", ranked == in_memory)

print("\npeak scratch does not grow with the corpus:",
      peaks[2_000] == peaks[10_000])
