"""
Late-interaction scoring basics
-------------------------------

A query and a document are sets of token embeddings; the score is, for
every query token, the best inner product over the document's tokens,
summed.  The streamed kernel computes this without ever building the
token-by-token similarity matrix, and agrees with the brute-force
materialized reference bit for bit.
"""

import numpy as np

from maxsim import DocBatch, EmbeddingMatrix, dense_score, fused_score_batch, fused_score_pair
from maxsim.synth import make_queries, unit_tokens

rng = np.random.default_rng(0)

# a tiny hand-checkable pair: rows are query tokens, columns embedding dims
query = EmbeddingMatrix([[1.0, 0.0], [0.0, 1.0]])
doc = EmbeddingMatrix([[0.5, 0.0], [0.0, 2.0]])

score, winners, traffic = fused_score_pair(query, doc)
print("hand pair:", score, "winning doc tokens per query token:", winners)
print("bytes read:", traffic.bytes_read, "= query", query.nbytes, "+ doc", doc.nbytes)

# a batch: one query against eight documents of mixed length
docs = DocBatch([EmbeddingMatrix(unit_tokens(rng, int(n), 16)) for n in rng.integers(4, 40, size=8)])
q = make_queries(1, 12, 16, seed=1)[0]
scores, argmax, _ = fused_score_batch([q], docs)
print("\nbatch scores:", np.round(scores.values[0], 4))

# the materialized reference computes the same thing the slow, obvious way
ref_scores, ref_argmax = dense_score(q, docs)
print("matches dense reference bit for bit:",
      np.array_equal(scores.values[0], ref_scores),
      "and argmax too:",
      np.array_equal(argmax.indices, ref_argmax.indices))

# equal similarities resolve to the lowest document token, on every path
tie_doc = EmbeddingMatrix([[2.0, 0.0], [2.0, 0.0], [2.0, 0.0]])
_, tie_winners, _ = fused_score_pair(EmbeddingMatrix([[1.0, 0.0]]), tie_doc)
print("\ntie-break picks the lowest index:", tie_winners)
