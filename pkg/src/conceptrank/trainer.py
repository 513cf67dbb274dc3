"""Triplet construction, the ranking training loop, and candidate re-ranking."""

from __future__ import annotations

import hashlib
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, NamedTuple, Sequence

import numpy as np

from . import evalkit
from .conceptmap import ConceptMap
from .corpus import Qrels, Query
from .embedstore import EmbeddingTable, attach_features, query_embedding
from .graphmodels import (
    EmptyGraphError,
    GnnConfig,
    encode_document,
    init_model_params,
    trainable_names,
    walk_seed_for,
)
from .lexindex import InvertedIndex, tfidf_node_weights
from .tensorcore import (
    AdamState,
    Tensor,
    ZeroNormError,
    adam_step,
    collect_grads,
    cosine,
    matmul,
    triplet_loss,
    zero_grads,
)

log = logging.getLogger(__name__)

RunRanking = dict[str, list[tuple[str, float]]]

# synthetic scores for candidates the model cannot score; always below any cosine
_EMPTY_MAP_BASE = -2.0
_DEGENERATE_BASE = -3.0


class Triplet(NamedTuple):
    query_id: str
    positive: str
    negative: str


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    triplets_per_query: int = 8
    margin: float = 1.0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    patience: int = 5
    val_fraction: float = 0.2

    def __post_init__(self) -> None:
        if self.epochs < 1 or self.triplets_per_query < 1:
            raise ValueError("epochs and triplets_per_query must be positive")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


def _stream_seed(base: int, salt: str) -> int:
    key = (base & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(salt.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def build_triplets(
    qrels: Qrels,
    candidates: Mapping[str, Sequence[str]],
    scorable_docs: set[str],
    per_query: int,
    seed: int,
) -> list[Triplet]:
    """Up to `per_query` (positive, negative) pairs per query, seeded uniformly.

    Negatives come from judged-irrelevant documents first; unjudged candidates
    only pad out the pool when those cannot fill the request.  Queries with no
    scorable positive are skipped with a warning.
    """
    rng = random.Random(seed)
    triplets: list[Triplet] = []
    for qid in sorted(candidates):
        positives = [d for d in qrels.positives(qid) if d in scorable_docs]
        if not positives:
            log.warning("query %s has no scorable positive document; skipped", qid)
            continue
        judged_neg = [d for d in qrels.judged_negatives(qid) if d in scorable_docs]
        pairs = [(p, n) for p in positives for n in judged_neg]
        if len(pairs) < per_query:
            unjudged = [
                d
                for d in candidates[qid]
                if d in scorable_docs and not qrels.is_judged(qid, d)
            ]
            pairs.extend((p, n) for p in positives for n in unjudged)
        if len(pairs) > per_query:
            pairs = rng.sample(pairs, per_query)
        triplets.extend(Triplet(qid, p, n) for p, n in pairs)
    return triplets


@dataclass
class ModelBundle:
    """A graph encoder plus its named parameters and walk seeding."""

    config: GnnConfig
    params: dict[str, Tensor]
    feature_dim: int
    walk_seed: int = 0

    @classmethod
    def create(cls, config: GnnConfig, feature_dim: int, seed: int) -> "ModelBundle":
        return cls(config, init_model_params(config, feature_dim, seed), feature_dim, walk_seed=seed)


def relevance_score(
    bundle: ModelBundle,
    cmap: ConceptMap,
    query_vec: np.ndarray,
    tfidf_weights: Sequence[float] | None = None,
) -> Tensor:
    """cosine(h_G, W_q h_Q) as a differentiable scalar in [-1, 1]."""
    graph_vec = encode_document(
        cmap,
        bundle.config,
        bundle.params,
        walk_seed=bundle.walk_seed,
        tfidf_weights=tfidf_weights,
    )
    projected_query = matmul(bundle.params["query_proj"], Tensor(query_vec))
    return cosine(graph_vec, projected_query)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    val_ndcg20: float | None


@dataclass
class TrainResult:
    bundle: ModelBundle
    history: list[EpochStats]
    best_epoch: int | None


def _ensure_features(table: EmbeddingTable, maps: Mapping[str, ConceptMap]) -> None:
    for cmap in maps.values():
        if any(c.feature is None for c in cmap.concepts):
            attach_features(table, cmap)


def _tfidf_weight_map(
    config: GnnConfig,
    index: InvertedIndex | None,
    maps: Mapping[str, ConceptMap],
) -> dict[str, list[float]] | None:
    if config.readout != "tfidf":
        return None
    if index is None:
        raise ValueError("tfidf readout needs the inverted index")
    return {doc_id: tfidf_node_weights(index, cmap) for doc_id, cmap in maps.items()}


def train(
    model_config: GnnConfig,
    train_config: TrainConfig,
    table: EmbeddingTable,
    maps: Mapping[str, ConceptMap],
    queries: Sequence[Query],
    qrels: Qrels,
    candidates: Mapping[str, Sequence[str]],
    index: InvertedIndex | None = None,
    bundle: ModelBundle | None = None,
) -> TrainResult:
    """Minimize the triplet hinge over per-epoch resampled triplets.

    Deterministic for a fixed seed: identical loss histories bit for bit.
    20% of queries (when there are at least five) are held out; the best
    validation-NDCG@20 parameters are restored at the end.  A caller-supplied
    `bundle` (e.g. a loaded checkpoint) is trained in place of a fresh one.
    """
    _ensure_features(table, maps)
    query_vecs = {q.id: query_embedding(table, q) for q in queries if q.id in candidates}
    if bundle is None:
        bundle = ModelBundle.create(model_config, table.dim, train_config.seed)
    weight_map = _tfidf_weight_map(model_config, index, maps)

    qids = sorted(q for q in candidates if q in query_vecs)
    split_rng = random.Random(_stream_seed(train_config.seed, "val-split"))
    shuffled = list(qids)
    split_rng.shuffle(shuffled)
    n_val = round(train_config.val_fraction * len(shuffled)) if len(shuffled) >= 5 else 0
    val_qids = sorted(shuffled[:n_val])
    train_qids = sorted(shuffled[n_val:])

    scorable = {doc_id for doc_id, cmap in maps.items() if not cmap.is_empty}
    optimizer = AdamState(
        lr=train_config.lr,
        beta1=train_config.beta1,
        beta2=train_config.beta2,
        eps=train_config.adam_eps,
    )
    trainable = {name: bundle.params[name] for name in trainable_names(model_config, bundle.params)}

    history: list[EpochStats] = []
    best_score = -np.inf
    best_epoch: int | None = None
    best_snapshot: dict[str, np.ndarray] | None = None
    epochs_since_best = 0

    for epoch in range(1, train_config.epochs + 1):
        triplets = build_triplets(
            qrels,
            {qid: candidates[qid] for qid in train_qids},
            scorable,
            train_config.triplets_per_query,
            seed=_stream_seed(train_config.seed, f"epoch{epoch}"),
        )
        losses: list[float] = []
        for triplet in triplets:
            query_vec = query_vecs[triplet.query_id]
            zero_grads(bundle.params.values())
            try:
                pos = relevance_score(
                    bundle, maps[triplet.positive], query_vec,
                    weight_map[triplet.positive] if weight_map else None,
                )
                neg = relevance_score(
                    bundle, maps[triplet.negative], query_vec,
                    weight_map[triplet.negative] if weight_map else None,
                )
            except ZeroNormError:
                log.warning("skipping triplet %s: zero-norm graph embedding", (triplet,))
                continue
            loss = triplet_loss(pos, neg, train_config.margin)
            value = loss.item()
            if not (np.isfinite(value) and np.isfinite(pos.item()) and np.isfinite(neg.item())):
                raise FloatingPointError(
                    f"non-finite loss at epoch {epoch} on triplet {triplet}: "
                    f"pos={pos.item()!r} neg={neg.item()!r}"
                )
            losses.append(value)
            loss.backward()
            adam_step(trainable, collect_grads(trainable), optimizer)
        mean_loss = sum(losses) / len(losses) if losses else 0.0

        val_ndcg: float | None = None
        if val_qids:
            val_run = rerank(
                bundle,
                {qid: candidates[qid] for qid in val_qids},
                maps,
                query_vecs,
                tfidf_weight_map=weight_map,
            )
            val_ndcg = evalkit.eval_run(val_run, qrels, ks=(20,)).macro["ndcg@20"]
        history.append(EpochStats(epoch, mean_loss, val_ndcg))

        score = val_ndcg if val_ndcg is not None else -mean_loss
        if score > best_score:
            best_score = score
            best_epoch = epoch
            best_snapshot = {name: t.data.copy() for name, t in bundle.params.items()}
            epochs_since_best = 0
        else:
            epochs_since_best += 1
            if epochs_since_best > train_config.patience:
                break

    if best_snapshot is not None:
        for name, data in best_snapshot.items():
            bundle.params[name].data = data
    zero_grads(bundle.params.values())
    return TrainResult(bundle=bundle, history=history, best_epoch=best_epoch)


def rerank_with_scorer(
    scorer: Callable[[str, str], float | None],
    candidates: Mapping[str, Sequence[str]],
) -> RunRanking:
    """Reorder candidates by a scoring callable; None marks an unscorable doc.

    Scored documents sort by descending score, ties keeping their candidate
    (stage-one) order.  Unscorable documents follow, in candidate order, with
    synthetic strictly-descending scores derived from their stage-one rank.
    """
    run: RunRanking = {}
    for qid in sorted(candidates):
        scored: list[tuple[str, float]] = []
        unscored: list[str] = []
        for doc_id in candidates[qid]:
            value = scorer(qid, doc_id)
            if value is None:
                unscored.append(doc_id)
            else:
                scored.append((doc_id, float(value)))
        scored.sort(key=lambda pair: -pair[1])  # stable: ties keep stage-one order
        tail = [(doc_id, _EMPTY_MAP_BASE - i * 1e-6) for i, doc_id in enumerate(unscored)]
        run[qid] = scored + tail
    return run


def rerank(
    bundle: ModelBundle,
    candidates: Mapping[str, Sequence[str]],
    maps: Mapping[str, ConceptMap],
    query_vecs: Mapping[str, np.ndarray],
    tfidf_weight_map: Mapping[str, Sequence[float]] | None = None,
) -> RunRanking:
    """Reorder stage-one candidates by relevance score.

    Documents with empty maps keep a BM25-rank-derived synthetic score after
    all scored documents; zero-norm embeddings drop to the very tail.
    """
    degenerate: dict[str, list[str]] = {}

    def scorer(qid: str, doc_id: str) -> float | None:
        cmap = maps.get(doc_id)
        if cmap is None or cmap.is_empty:
            return None
        weights = tfidf_weight_map.get(doc_id) if tfidf_weight_map else None
        try:
            return relevance_score(bundle, cmap, query_vecs[qid], weights).item()
        except ZeroNormError:
            log.warning("document %s scored a zero-norm embedding for %s", doc_id, qid)
            degenerate.setdefault(qid, []).append(doc_id)
            return None

    run = rerank_with_scorer(scorer, candidates)
    for qid, doc_ids in degenerate.items():
        kept = [(d, s) for d, s in run[qid] if d not in set(doc_ids)]
        tail = [(d, _DEGENERATE_BASE - i * 1e-6) for i, d in enumerate(doc_ids)]
        run[qid] = kept + tail
    return run
