"""Query-to-node relevance: Okapi BM25, dense cosine ranking and embedding cache."""

from __future__ import annotations

import hashlib
import heapq
import json
import logging
import math
import os
import re
import threading
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

import numpy as np

from . import kernels
from .graph import GraphNode, Layer, SentenceGraph

__all__ = [
    "DenseRanker",
    "EmbeddingCache",
    "HTTPEmbeddingProvider",
    "HashingEmbedder",
    "LexicalIndex",
    "LexicalRanker",
    "Ranker",
    "ScoredNode",
    "StaticRanker",
    "build_lexical_index",
    "cosine",
    "lexical_cosine",
    "lexical_score",
    "rank_nodes",
    "tokenize",
]

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class ScoredNode:
    node_id: str
    score: float


class LexicalIndex:
    """Inverted index with BM25 statistics.

    Postings are stored CSR-style (``indptr`` per term id into
    ``post_nodes``/``post_tf``) so a whole query can be scored by one
    kernel call.
    """

    def __init__(self, items: Iterable[tuple[str, str]], k1: float = 1.2, b: float = 0.75):
        self.k1 = float(k1)
        self.b = float(b)
        self.node_ids: list[str] = []
        self.position: dict[str, int] = {}
        self.term_counts: list[Counter] = []
        for node_id, text in items:
            if node_id in self.position:
                raise ValueError(f"duplicate node id {node_id}")
            self.position[node_id] = len(self.node_ids)
            self.node_ids.append(node_id)
            self.term_counts.append(Counter(tokenize(text)))

        self.N = len(self.node_ids)
        self.doc_len = np.array([sum(c.values()) for c in self.term_counts], dtype=np.float64)
        self.avglen = float(self.doc_len.mean()) if self.N else 0.0

        postings: dict[str, list[tuple[int, int]]] = {}
        for pos, counts in enumerate(self.term_counts):
            for term, tf in counts.items():
                postings.setdefault(term, []).append((pos, tf))
        self.vocab = {term: tid for tid, term in enumerate(sorted(postings))}
        self.df = np.array([len(postings[t]) for t in sorted(postings)], dtype=np.int64)
        self.idf = np.log1p((self.N - self.df + 0.5) / (self.df + 0.5))
        indptr = [0]
        nodes: list[int] = []
        tfs: list[float] = []
        for term in sorted(postings):
            for pos, tf in postings[term]:
                nodes.append(pos)
                tfs.append(tf)
            indptr.append(len(nodes))
        self.indptr = np.array(indptr, dtype=np.int64)
        self.post_nodes = np.array(nodes, dtype=np.int32)
        self.post_tf = np.array(tfs, dtype=np.float64)

    def doc_freq(self, term: str) -> int:
        tid = self.vocab.get(term)
        return 0 if tid is None else int(self.df[tid])

    def postings(self, term: str) -> list[tuple[str, int]]:
        tid = self.vocab.get(term)
        if tid is None:
            return []
        lo, hi = self.indptr[tid], self.indptr[tid + 1]
        return [(self.node_ids[p], int(tf)) for p, tf in zip(self.post_nodes[lo:hi], self.post_tf[lo:hi])]

    def _query_terms(self, query: str) -> np.ndarray:
        # each distinct query term counts once
        seen = dict.fromkeys(t for t in tokenize(query) if t in self.vocab)
        return np.array([self.vocab[t] for t in seen], dtype=np.int64)

    def score_all(self, query: str) -> np.ndarray:
        """Scores for every node, aligned with ``node_ids``."""
        terms = self._query_terms(query)
        if not self.N or not len(terms):
            return np.zeros(self.N, dtype=np.float64)
        return kernels.bm25_scores(
            terms, self.idf, self.indptr, self.post_nodes, self.post_tf,
            self.doc_len, self.avglen, self.k1, self.b,
        )

    def score(self, query: str, node_id: str) -> float:
        try:
            pos = self.position[node_id]
        except KeyError:
            raise KeyError(f"node {node_id} is not indexed") from None
        counts = self.term_counts[pos]
        norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[pos] / self.avglen) if self.avglen else self.k1
        total = 0.0
        for term in dict.fromkeys(tokenize(query)):
            tf = counts.get(term, 0)
            if tf:
                total += float(self.idf[self.vocab[term]]) * tf * (self.k1 + 1.0) / (tf + norm)
        return total


def build_lexical_index(
    nodes: Iterable[GraphNode | tuple[str, str]], k1: float = 1.2, b: float = 0.75
) -> LexicalIndex:
    items = [(n.id, n.search_text) if isinstance(n, GraphNode) else n for n in nodes]
    return LexicalIndex(items, k1=k1, b=b)


def lexical_score(index: LexicalIndex, query: str, node_id: str) -> float:
    return index.score(query, node_id)


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    a = np.asarray(u, dtype=np.float64)
    c = np.asarray(v, dtype=np.float64)
    if a.shape != c.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {c.shape}")
    na, nc = np.linalg.norm(a), np.linalg.norm(c)
    if na == 0 or nc == 0:
        raise ValueError("cosine is undefined for a zero vector")
    return float(np.clip(a @ c / (na * nc), -1.0, 1.0))


def lexical_cosine(a: str, b: str) -> float:
    """Cosine of term-frequency vectors; 0 when either text has no tokens."""
    ca, cb = Counter(tokenize(a)), Counter(tokenize(b))
    if not ca or not cb:
        return 0.0
    dot = sum(tf * cb[t] for t, tf in ca.items() if t in cb)
    return dot / (math.sqrt(sum(v * v for v in ca.values())) * math.sqrt(sum(v * v for v in cb.values())))


class Ranker(Protocol):
    name: str

    def score_all(self, query: str) -> Mapping[str, float]: ...

    def score(self, query: str, node_id: str) -> float: ...

    def similarity(self, a: str, b: str) -> float: ...


class LexicalRanker:
    """BM25 over node search texts."""

    name = "lexical"

    def __init__(self, nodes: Iterable[GraphNode | tuple[str, str]], k1: float = 1.2, b: float = 0.75):
        self.index = build_lexical_index(nodes, k1=k1, b=b)

    @classmethod
    def from_graph(cls, graph: SentenceGraph, k1: float = 1.2, b: float = 0.75) -> LexicalRanker:
        return cls((graph.nodes[k] for k in sorted(graph.nodes)), k1=k1, b=b)

    def score_all(self, query: str) -> dict[str, float]:
        return dict(zip(self.index.node_ids, self.index.score_all(query).tolist()))

    def score(self, query: str, node_id: str) -> float:
        return self.index.score(query, node_id)

    def similarity(self, a: str, b: str) -> float:
        return lexical_cosine(a, b)


class StaticRanker:
    """Fixed score table, optionally per query; unknown nodes score 0."""

    name = "static"

    def __init__(self, table: Mapping[str, float] | Callable[[str, str], float]):
        self.table = table

    def score(self, query: str, node_id: str) -> float:
        if callable(self.table):
            return float(self.table(query, node_id))
        return float(self.table.get(node_id, 0.0))

    def score_all(self, query: str) -> dict[str, float]:
        if callable(self.table):
            raise TypeError("score_all needs an explicit node set for a callable table")
        return dict(self.table)

    def similarity(self, a: str, b: str) -> float:
        return lexical_cosine(a, b)


def rank_nodes(
    ranker: Ranker,
    query: str,
    graph: SentenceGraph,
    k: int,
    layer_filter: Iterable[Layer | str] | None = None,
    scores: Mapping[str, float] | None = None,
) -> list[ScoredNode]:
    """Top-``k`` graph nodes by descending score, ties broken by node id."""
    if k < 1:
        raise ValueError("k must be at least 1")
    layers = None if layer_filter is None else {Layer(x) for x in layer_filter}
    if scores is None:
        try:
            scores = ranker.score_all(query)
        except TypeError:
            scores = {nid: ranker.score(query, nid) for nid in graph.nodes}
    candidates = (
        (-float(scores.get(nid, 0.0)), nid)
        for nid, node in graph.nodes.items()
        if layers is None or node.layer in layers
    )
    return [ScoredNode(nid, -neg) for neg, nid in heapq.nsmallest(k, candidates)]


class HashingEmbedder:
    """Deterministic signed feature-hashing embedder over lexical tokens.

    Dependency-free stand-in for a dense model; useful offline and in tests.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim
        self.provider_id = f"hashing-{dim}"

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        out = []
        for text in texts:
            vec = [0.0] * self.dim
            for tok in tokenize(text):
                h = int.from_bytes(hashlib.blake2b(tok.encode(), digest_size=8).digest(), "little")
                vec[h % self.dim] += 1.0 if (h >> 63) & 1 else -1.0
            out.append(vec)
        return out


class HTTPEmbeddingProvider:
    """OpenAI-compatible ``/embeddings`` client."""

    def __init__(self, base_url: str, model: str, api_key: str | None = None, timeout: float = 60.0,
                 client=None):
        import httpx

        self.url = base_url.rstrip("/") + "/embeddings"
        self.model = model
        self.provider_id = f"http:{model}"
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout, headers=headers)

    @classmethod
    def from_env(cls) -> HTTPEmbeddingProvider:
        return cls(
            os.environ["SENTGRAPH_EMBED_BASE_URL"],
            os.environ["SENTGRAPH_EMBED_MODEL"],
            os.environ.get("SENTGRAPH_EMBED_API_KEY"),
        )

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        if not texts:
            return []
        resp = self._client.post(self.url, json={"model": self.model, "input": list(texts)})
        resp.raise_for_status()
        data = sorted(resp.json()["data"], key=lambda d: d["index"])
        vectors = [list(map(float, d["embedding"])) for d in data]
        if len(vectors) != len(texts):
            raise ValueError(f"expected {len(texts)} embeddings, got {len(vectors)}")
        return vectors


def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """JSONL sidecar of ``{provider, text_sha256, dim, vector}`` records."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._vectors: dict[tuple[str, str], list[float]] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with self.path.open(encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._vectors[(rec["provider"], rec["text_sha256"])] = rec["vector"]

    def __len__(self) -> int:
        return len(self._vectors)

    def embed(self, provider, texts: Sequence[str]) -> list[list[float]]:
        with self._lock:
            return self._embed(provider, texts)

    def _embed(self, provider, texts: Sequence[str]) -> list[list[float]]:
        keys = [(provider.provider_id, _sha256(t)) for t in texts]
        missing = sorted({(k, t) for k, t in zip(keys, texts) if k not in self._vectors})
        if missing:
            vectors = provider.embed([t for _, t in missing])
            new = []
            for (key, _), vec in zip(missing, vectors):
                self._vectors[key] = vec
                new.append({"provider": key[0], "text_sha256": key[1], "dim": len(vec), "vector": vec})
            if self.path:
                with self.path.open("a", encoding="utf-8") as fh:
                    for rec in new:
                        fh.write(json.dumps(rec, sort_keys=True) + "\n")
            log.info("embedded %d new texts with %s", len(missing), provider.provider_id)
        return [self._vectors[k] for k in keys]


class DenseRanker:
    """Cosine similarity between the query embedding and cached node embeddings."""

    name = "dense"

    def __init__(self, nodes: Iterable[GraphNode | tuple[str, str]], provider, cache: EmbeddingCache | None = None):
        items = [(n.id, n.search_text) if isinstance(n, GraphNode) else n for n in nodes]
        self.provider = provider
        self.cache = cache if cache is not None else EmbeddingCache()
        self.node_ids = [nid for nid, _ in items]
        self.position = {nid: i for i, nid in enumerate(self.node_ids)}
        matrix = np.asarray(self.cache.embed(provider, [t for _, t in items]), dtype=np.float64)
        if matrix.ndim != 2 or not np.isfinite(matrix).all():
            raise ValueError("embeddings must be finite vectors of one dimension")
        norms = np.linalg.norm(matrix, axis=1, keepdims=True)
        self.matrix = np.divide(matrix, norms, out=np.zeros_like(matrix), where=norms > 0)

    @classmethod
    def from_graph(cls, graph: SentenceGraph, provider, cache: EmbeddingCache | None = None) -> DenseRanker:
        return cls((graph.nodes[k] for k in sorted(graph.nodes)), provider, cache)

    def _query_vector(self, text: str) -> np.ndarray:
        q = np.asarray(self.provider.embed([text])[0], dtype=np.float64)
        n = np.linalg.norm(q)
        return q / n if n > 0 else q

    def score_all(self, query: str) -> dict[str, float]:
        return dict(zip(self.node_ids, (self.matrix @ self._query_vector(query)).tolist()))

    def score(self, query: str, node_id: str) -> float:
        return float(self.matrix[self.position[node_id]] @ self._query_vector(query))

    def similarity(self, a: str, b: str) -> float:
        va, vb = self.provider.embed([a, b])
        try:
            return cosine(va, vb)
        except ValueError:
            return 0.0
