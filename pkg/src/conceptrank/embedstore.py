"""Word-vector tables with a deterministic hashed fallback for unknown tokens."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conceptmap import Concept, ConceptMap
from .corpus import Query

log = logging.getLogger(__name__)

DEFAULT_DIM = 50


class EmbeddingFormatError(ValueError):
    """Malformed word2vec-text input."""


@dataclass
class EmbeddingTable:
    dim: int
    vectors: dict[str, np.ndarray] = field(default_factory=dict)
    fallback_seed: int = 0
    duplicate_count: int = 0


def hashed_table(dim: int = DEFAULT_DIM, fallback_seed: int = 0) -> EmbeddingTable:
    """A table with no stored vectors; every lookup uses the hashed fallback."""
    if dim < 1:
        raise ValueError(f"dimension must be >= 1, got {dim}")
    return EmbeddingTable(dim=dim, fallback_seed=fallback_seed)


def load_embeddings(path: str | Path, fallback_seed: int = 0) -> EmbeddingTable:
    """Load word2vec text format: header "count dim", then "token v1 ... v_dim" rows."""
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise EmbeddingFormatError(f"{path}:1: expected header 'count dim'")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise EmbeddingFormatError(f"{path}:1: header values must be integers") from None
        if count < 0 or dim < 1:
            raise EmbeddingFormatError(f"{path}:1: invalid header ({count} {dim})")
        vectors: dict[str, np.ndarray] = {}
        duplicates = 0
        rows = 0
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split()
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise EmbeddingFormatError(
                    f"{path}:{lineno}: expected {dim} values, got {len(values)}"
                )
            try:
                vec = np.array([float(v) for v in values], dtype=np.float64)
            except ValueError:
                raise EmbeddingFormatError(f"{path}:{lineno}: non-numeric value") from None
            if token in vectors:
                duplicates += 1
            vectors[token] = vec
            rows += 1
        if rows != count:
            raise EmbeddingFormatError(f"{path}: header declared {count} rows, found {rows}")
    if duplicates:
        log.warning("%s: %d duplicate tokens (last occurrence wins)", path, duplicates)
    return EmbeddingTable(dim=dim, vectors=vectors, fallback_seed=fallback_seed, duplicate_count=duplicates)


def write_embeddings(table: EmbeddingTable, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{len(table.vectors)} {table.dim}\n")
        for token, vec in table.vectors.items():
            fh.write(token + " " + " ".join(repr(float(v)) for v in vec) + "\n")


def _fallback_vector(table: EmbeddingTable, token: str) -> np.ndarray:
    key = (table.fallback_seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=key).digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    vec = rng.standard_normal(table.dim)
    norm = np.linalg.norm(vec)
    while norm == 0.0:
        vec = rng.standard_normal(table.dim)
        norm = np.linalg.norm(vec)
    return vec / norm


def embed_token(table: EmbeddingTable, token: str) -> np.ndarray:
    """Stored vector on a hit; deterministic unit-norm pseudo-random vector on a miss."""
    vec = table.vectors.get(token)
    if vec is not None:
        return vec
    return _fallback_vector(table, token)


def node_features(table: EmbeddingTable, concept: Concept) -> np.ndarray:
    """Mean of the token embeddings of a concept's mention."""
    tokens = concept.mention.split()
    if not tokens:
        raise ValueError(f"concept {concept.node_id} has an empty mention")
    total = np.zeros(table.dim)
    for token in tokens:
        total += embed_token(table, token)
    return total / len(tokens)


def query_embedding(table: EmbeddingTable, query: Query) -> np.ndarray:
    """Mean token embedding; the model projects it to its output space later."""
    if not query.tokens:
        raise ValueError(f"query {query.id!r} has no tokens")
    total = np.zeros(table.dim)
    for token in query.tokens:
        total += embed_token(table, token)
    return total / len(query.tokens)


def attach_features(table: EmbeddingTable, cmap: ConceptMap) -> ConceptMap:
    """Fill every concept's feature vector in place; returns the same map."""
    for concept in cmap.concepts:
        concept.feature = node_features(table, concept)
    return cmap
