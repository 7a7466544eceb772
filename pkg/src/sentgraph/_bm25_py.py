"""Pure-Python BM25 accumulation, used when the compiled kernel is unavailable."""

from __future__ import annotations

import numpy as np


def bm25_scores(term_ids, idf, indptr, post_nodes, post_tf, doc_len, avglen, k1, b):
    n = len(doc_len)
    out = [0.0] * n
    lengths = doc_len.tolist()
    inv_avg = 1.0 / avglen if avglen > 0 else 0.0
    starts = indptr.tolist()
    nodes = post_nodes.tolist()
    tfs = post_tf.tolist()
    idfs = idf.tolist()
    for t in term_ids.tolist():
        w = idfs[t] * (k1 + 1.0)
        for p in range(starts[t], starts[t + 1]):
            node = nodes[p]
            tf = tfs[p]
            out[node] += w * tf / (tf + k1 * (1.0 - b + b * lengths[node] * inv_avg))
    return np.asarray(out, dtype=np.float64)
