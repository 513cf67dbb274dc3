"""Inverted index, Okapi BM25 scoring, top-K retrieval, and tf-idf statistics."""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .conceptmap import ConceptMap
from .corpus import DocumentCollection, Query

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_TOP_K = 100

_INDEX_FORMAT_VERSION = 1


class UnknownDocumentError(KeyError):
    """Scoring was asked for a doc id the index has never seen."""


class InvertedIndex:
    """Term postings plus document-length and concept-frequency statistics."""

    def __init__(
        self,
        postings: dict[str, list[tuple[str, int]]],
        doc_lengths: dict[str, int],
        concept_df: dict[str, int],
    ) -> None:
        self.postings = postings
        self.doc_lengths = doc_lengths
        self.concept_df = concept_df
        self._tf: dict[str, dict[str, int]] = {t: dict(pl) for t, pl in postings.items()}

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    @property
    def avgdl(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def term_freq(self, term: str, doc_id: str) -> int:
        return self._tf.get(term, {}).get(doc_id, 0)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self.doc_lengths


def build_index(
    collection: DocumentCollection, concept_maps: Iterable[ConceptMap] = ()
) -> InvertedIndex:
    """Index every document's tokens; concept df comes from map mention sets."""
    postings: dict[str, list[tuple[str, int]]] = {}
    doc_lengths: dict[str, int] = {}
    for doc in collection:
        doc_lengths[doc.id] = len(doc.tokens)
        for term, tf in Counter(doc.tokens).items():
            postings.setdefault(term, []).append((doc.id, tf))
    for term in postings:
        postings[term].sort(key=lambda pair: pair[0])
    concept_df: dict[str, int] = {}
    for cmap in concept_maps:
        for mention in cmap.mention_freqs():
            concept_df[mention] = concept_df.get(mention, 0) + 1
    return InvertedIndex(postings, doc_lengths, concept_df)


def idf(index: InvertedIndex, term: str) -> float:
    n = index.doc_count
    df = index.df(term)
    return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def bm25_score(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    doc_id: str,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> float:
    """Okapi BM25 with Lucene-style idf; absent query terms contribute 0."""
    if doc_id not in index.doc_lengths:
        raise UnknownDocumentError(doc_id)
    length = index.doc_lengths[doc_id]
    norm = k1 * (1.0 - b + b * length / index.avgdl) if index.avgdl else k1
    score = 0.0
    for term in query_tokens:
        tf = index.term_freq(term, doc_id)
        if tf == 0:
            continue
        score += idf(index, term) * tf * (k1 + 1.0) / (tf + norm)
    return score


def bm25_all_scores(
    index: InvertedIndex,
    query_tokens: Sequence[str],
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> dict[str, float]:
    """Scores for every document matching at least one query term.

    Accumulates per-token in query order so results are bitwise identical to
    calling bm25_score per document.
    """
    avgdl = index.avgdl
    scores: dict[str, float] = {}
    for term in query_tokens:
        plist = index.postings.get(term)
        if not plist:
            continue
        term_idf = idf(index, term)
        for doc_id, tf in plist:
            norm = k1 * (1.0 - b + b * index.doc_lengths[doc_id] / avgdl) if avgdl else k1
            contribution = term_idf * tf * (k1 + 1.0) / (tf + norm)
            scores[doc_id] = scores.get(doc_id, 0.0) + contribution
    return scores


@dataclass
class CandidateList:
    """Per-query candidates in strictly descending (score, then ascending id) order."""

    query_id: str
    items: list[tuple[str, float]]

    @property
    def doc_ids(self) -> list[str]:
        return [doc_id for doc_id, _ in self.items]

    def __len__(self) -> int:
        return len(self.items)


def retrieve_topk(
    index: InvertedIndex,
    query: Query | Sequence[str],
    k: int = DEFAULT_TOP_K,
    k1: float = DEFAULT_K1,
    b: float = DEFAULT_B,
) -> CandidateList:
    """Top-K documents by BM25; zero-score documents are never candidates."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if isinstance(query, Query):
        query_id, tokens = query.id, query.tokens
    else:
        query_id, tokens = "", list(query)
    scores = bm25_all_scores(index, tokens, k1=k1, b=b)
    ranked = sorted(
        ((doc_id, s) for doc_id, s in scores.items() if s > 0.0),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return CandidateList(query_id, ranked[:k])


def concept_idf(index: InvertedIndex, mention: str) -> float:
    """Concept idf over map mentions, floored at zero; shared by tf-idf weights."""
    n = index.doc_count
    if n == 0:
        return 0.0
    return max(0.0, math.log(n / (1.0 + index.concept_df.get(mention, 0))))


def tfidf_weight(index: InvertedIndex, mention: str, freq: int) -> float:
    """Node weight freq * ln(N / (1 + concept df)), floored at zero."""
    if freq < 1:
        raise ValueError(f"concept frequency must be >= 1, got {freq}")
    n = index.doc_count
    if n == 0:
        return 0.0
    return max(0.0, freq * math.log(n / (1.0 + index.concept_df.get(mention, 0))))


def tfidf_node_weights(index: InvertedIndex, cmap: ConceptMap) -> list[float]:
    return [tfidf_weight(index, c.mention, c.freq) for c in cmap.concepts]


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def save_index(index: InvertedIndex, path: str | Path) -> None:
    obj = {
        "version": _INDEX_FORMAT_VERSION,
        "postings": {t: [[d, tf] for d, tf in pl] for t, pl in index.postings.items()},
        "doc_lengths": index.doc_lengths,
        "concept_df": index.concept_df,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True)


def load_index(path: str | Path) -> InvertedIndex:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("version") != _INDEX_FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported index format version {obj.get('version')!r}")
    postings = {t: [(d, int(tf)) for d, tf in pl] for t, pl in obj["postings"].items()}
    doc_lengths = {d: int(n) for d, n in obj["doc_lengths"].items()}
    concept_df = {m: int(n) for m, n in obj["concept_df"].items()}
    return InvertedIndex(postings, doc_lengths, concept_df)


# ---------------------------------------------------------------------------
# TREC run files: "qid Q0 docid rank score tag"
# ---------------------------------------------------------------------------


def write_run(path: str | Path, run: Mapping[str, Sequence[tuple[str, float]]], tag: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for qid in sorted(run):
            for rank, (doc_id, score) in enumerate(run[qid], start=1):
                fh.write(f"{qid} Q0 {doc_id} {rank} {float(score)!r} {tag}\n")


def read_run(path: str | Path) -> dict[str, list[tuple[str, float]]]:
    run: dict[str, list[tuple[str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ValueError(f"{path}:{lineno}: expected 6 run-file fields, got {len(parts)}")
            qid, _q0, doc_id, _rank, score, _tag = parts
            run.setdefault(qid, []).append((doc_id, float(score)))
    return run
