"""Compare the compiled and pure-Python BM25 kernels on a synthetic index.

    python3 benchmarks/bench_bm25.py --nodes 50000 --queries 200
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from sentgraph import _bm25_py
from sentgraph.retrieval import LexicalIndex

try:
    from sentgraph import _bm25
except ImportError:
    _bm25 = None


def make_index(n_nodes: int, vocab_size: int, seed: int) -> tuple[LexicalIndex, list[str]]:
    rng = random.Random(seed)
    # Zipf-like term distribution so common terms have long postings lists
    vocab = [f"w{i}" for i in range(vocab_size)]
    weights = [1.0 / (i + 1) for i in range(vocab_size)]
    docs = [(f"n{i}", " ".join(rng.choices(vocab, weights, k=rng.randint(8, 30)))) for i in range(n_nodes)]
    return LexicalIndex(docs), vocab


def time_kernel(kernel, index: LexicalIndex, queries: list[str]) -> tuple[float, list[np.ndarray]]:
    args = [
        (index._query_terms(q), index.idf, index.indptr, index.post_nodes, index.post_tf,
         index.doc_len, index.avglen, index.k1, index.b)
        for q in queries
    ]
    start = time.perf_counter()
    out = [kernel(*a) for a in args]
    return time.perf_counter() - start, out


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--nodes", type=int, default=20000)
    parser.add_argument("--vocab", type=int, default=5000)
    parser.add_argument("--queries", type=int, default=100)
    parser.add_argument("--terms", type=int, default=6, help="terms per query")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    t0 = time.perf_counter()
    index, vocab = make_index(args.nodes, args.vocab, args.seed)
    print(f"index: {index.N} nodes, {len(index.vocab)} terms, {len(index.post_nodes)} postings "
          f"(built in {time.perf_counter() - t0:.2f}s)")
    rng = random.Random(args.seed + 1)
    queries = [" ".join(rng.choices(vocab[:200], k=args.terms)) for _ in range(args.queries)]

    py_time, py_out = time_kernel(_bm25_py.bm25_scores, index, queries)
    print(f"python : {py_time * 1000 / len(queries):8.3f} ms/query")
    if _bm25 is None:
        print("cython : not built (pip install --no-build-isolation -e .)")
        return
    cy_time, cy_out = time_kernel(_bm25.bm25_scores, index, queries)
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(py_out, cy_out))
    print(f"cython : {cy_time * 1000 / len(queries):8.3f} ms/query")
    print(f"speedup: {py_time / cy_time:.1f}x   max |diff| = {worst:.2e}")


if __name__ == "__main__":
    main()
