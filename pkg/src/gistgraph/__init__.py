"""Gist-memory knowledge graph retrieval with fact-anchored entity diffusion."""

from .corpus import Document, Passage, load_corpus, segment
from .diffusion import DiffusionParams, diffuse, initial_activation
from .embedding import HashingEmbedder, VectorIndex, cosine
from .extraction import Extractor, HTTPProvider, MockProvider
from .graph import KnowledgeGraph, build_diffusion_graph, build_graph, graph_stats
from .metrics import evaluate, exact_match, f1, recall_at_k
from .rerank import EvidencePair, RankedPassage, fuse, merge_2_2_1, minmax_normalize

__version__ = "0.1.0"
