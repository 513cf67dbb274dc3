"""Concept-map document retrieval: BM25 candidate generation plus graph re-ranking.

Documents become concept maps (normalized noun/verb phrases linked by
sliding-window co-occurrence), BM25 produces top-K candidates, and a graph
model — GIN, attention-weighted GIN, or one of the permutation-invariant
pooling functions (node, edge, random-walk) — re-ranks them with a
cosine-to-query score trained under a triplet hinge.
"""

from .conceptmap import ConceptMap, Concept, build_concept_map, document_to_map, map_stats
from .corpus import (
    Document,
    DocumentCollection,
    Qrels,
    Query,
    SynthConfig,
    generate_synthetic,
    load_collection,
    load_topics,
    tokenize,
)
from .embedstore import EmbeddingTable, hashed_table, load_embeddings, query_embedding
from .evalkit import MetricReport, build_pairs, eval_run, pair_similarity, t_score
from .graphmodels import (
    GnnConfig,
    WalkSet,
    encode_document,
    encode_epool,
    encode_gnn,
    encode_npool,
    encode_rwpool,
    sample_walks,
)
from .lexindex import InvertedIndex, bm25_score, build_index, retrieve_topk, tfidf_weight
from .trainer import ModelBundle, TrainConfig, Triplet, build_triplets, rerank, train

__version__ = "0.1.0"

__all__ = [
    "Concept",
    "ConceptMap",
    "Document",
    "DocumentCollection",
    "EmbeddingTable",
    "GnnConfig",
    "InvertedIndex",
    "MetricReport",
    "ModelBundle",
    "Qrels",
    "Query",
    "SynthConfig",
    "TrainConfig",
    "Triplet",
    "WalkSet",
    "bm25_score",
    "build_concept_map",
    "build_index",
    "build_pairs",
    "build_triplets",
    "document_to_map",
    "encode_document",
    "encode_epool",
    "encode_gnn",
    "encode_npool",
    "encode_rwpool",
    "eval_run",
    "generate_synthetic",
    "hashed_table",
    "load_collection",
    "load_embeddings",
    "load_topics",
    "map_stats",
    "pair_similarity",
    "query_embedding",
    "rerank",
    "retrieve_topk",
    "sample_walks",
    "t_score",
    "tfidf_weight",
    "tokenize",
    "train",
]
