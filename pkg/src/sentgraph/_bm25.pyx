# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled BM25 accumulation over CSR postings."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def bm25_scores(
    const cnp.int64_t[::1] term_ids,
    const double[::1] idf,
    const cnp.int64_t[::1] indptr,
    const cnp.int32_t[::1] post_nodes,
    const double[::1] post_tf,
    const double[::1] doc_len,
    double avglen,
    double k1,
    double b,
):
    cdef Py_ssize_t n = doc_len.shape[0]
    cdef cnp.ndarray[double, ndim=1] out_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t q, p, t
    cdef double w, tf, norm
    cdef double inv_avg = 1.0 / avglen if avglen > 0 else 0.0
    cdef int node
    for q in range(term_ids.shape[0]):
        t = term_ids[q]
        w = idf[t] * (k1 + 1.0)
        for p in range(indptr[t], indptr[t + 1]):
            node = post_nodes[p]
            tf = post_tf[p]
            norm = k1 * (1.0 - b + b * doc_len[node] * inv_avg)
            out[node] += w * tf / (tf + norm)
    return out_arr
