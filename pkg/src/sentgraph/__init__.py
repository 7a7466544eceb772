"""Hierarchical sentence logic graphs for multi-hop retrieval-augmented QA."""

from .builder import BuildConfig, build_graph
from .corpus import Document, QAItem, Sentence, ingest_corpus, load_qa_dataset, segment_sentences
from .graph import EdgeKind, GraphEdge, GraphNode, Layer, SentenceGraph, load, save
from .kernels import BACKEND as KERNEL_BACKEND
from .llm import ChatClient, ScriptedProvider
from .pipeline import Answer, PipelineConfig, answer_query
from .retrieval import DenseRanker, LexicalRanker

__version__ = "0.1.0"

__all__ = [
    "Answer",
    "BuildConfig",
    "ChatClient",
    "DenseRanker",
    "Document",
    "EdgeKind",
    "GraphEdge",
    "GraphNode",
    "KERNEL_BACKEND",
    "Layer",
    "LexicalRanker",
    "PipelineConfig",
    "QAItem",
    "ScriptedProvider",
    "Sentence",
    "SentenceGraph",
    "answer_query",
    "build_graph",
    "ingest_corpus",
    "load",
    "load_qa_dataset",
    "save",
    "segment_sentences",
]
