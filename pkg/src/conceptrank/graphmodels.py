"""Graph encoders: GIN, attention-weighted GIN, and the N-/E-/RW-pooling functions.

GIN layer update: state_i <- MLP((1 + eps) * state_i + sum of neighbor states).
The attention variant replaces the plain neighbor sum with softmax-weighted
neighbor states.  The pooling encoders skip message passing entirely and pool
MLP-projected node features per node, per edge-endpoint pair, or per sampled
random walk.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conceptmap import ConceptMap
from .tensorcore import (
    MlpParams,
    Tensor,
    add,
    concat,
    getitem,
    init_mlp,
    leaky_relu,
    matmul,
    max_rows,
    mean_rows,
    mlp_forward,
    mul,
    softmax,
    stack,
    sum_rows,
)

MODEL_KINDS = ("gin", "gat", "npool", "epool", "rwpool")
READOUT_MODES = ("mean", "sum", "max", "tfidf")
ALLOWED_WALK_LENGTHS = (2, 3, 4)


class EmptyGraphError(ValueError):
    """Encoding was requested for a concept map with no nodes."""


@dataclass(frozen=True)
class GnnConfig:
    kind: str = "gin"
    layers: int = 2
    hidden_dim: int = 64
    out_dim: int = 64
    eps_init: float = 0.0
    eps_learnable: bool = True
    readout: str = "mean"
    walk_lengths: tuple[int, ...] = (2, 3, 4)
    walks_per_node: int = 5

    def __post_init__(self) -> None:
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.readout not in READOUT_MODES:
            raise ValueError(f"unknown readout {self.readout!r}")
        if self.kind in ("gin", "gat") and self.layers < 1:
            raise ValueError("message-passing models need at least one layer")
        if self.hidden_dim < 1 or self.out_dim < 1:
            raise ValueError("dimensions must be positive")
        if self.kind == "epool" and self.out_dim % 2 != 0:
            raise ValueError("epool needs an even out_dim (two concatenated halves)")
        if self.kind == "rwpool":
            if not self.walk_lengths:
                raise ValueError("rwpool needs at least one walk length")
            bad = [l for l in self.walk_lengths if l not in ALLOWED_WALK_LENGTHS]
            if bad:
                raise ValueError(f"walk lengths {bad} outside {ALLOWED_WALK_LENGTHS}")
            if self.walks_per_node < 1:
                raise ValueError("walks_per_node must be >= 1")


@dataclass
class AttentionParams:
    """Single-layer score on the concatenation of two states, with LeakyReLU."""

    weight: Tensor  # (2 * state_dim,)
    bias: Tensor  # ()


@dataclass
class WalkSet:
    walks: list[tuple[int, ...]] = field(default_factory=list)
    seed: int = 0

    @property
    def is_empty(self) -> bool:
        return not self.walks


def init_model_params(config: GnnConfig, feature_dim: int, seed: int) -> dict[str, Tensor]:
    """Named parameter tensors for a model, including the query projection."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}

    def put_mlp(prefix: str, dims: Sequence[int]) -> None:
        mlp = init_mlp(dims, rng)
        for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
            params[f"{prefix}.w{i}"] = w
            params[f"{prefix}.b{i}"] = b

    def glorot(shape: tuple[int, int]) -> Tensor:
        limit = np.sqrt(6.0 / sum(shape))
        return Tensor(rng.uniform(-limit, limit, size=shape))

    if config.kind in ("gin", "gat"):
        in_dim = feature_dim
        for k in range(config.layers):
            put_mlp(f"layer{k}.mlp", [in_dim, config.hidden_dim, config.hidden_dim])
            params[f"layer{k}.eps"] = Tensor(config.eps_init)
            if config.kind == "gat":
                limit = np.sqrt(6.0 / (2 * in_dim + 1))
                params[f"layer{k}.att.w"] = Tensor(rng.uniform(-limit, limit, size=2 * in_dim))
                params[f"layer{k}.att.b"] = Tensor(0.0)
            in_dim = config.hidden_dim
        concat_dim = feature_dim + config.layers * config.hidden_dim
        params["proj.w"] = glorot((config.out_dim, concat_dim))
        params["proj.b"] = Tensor(np.zeros(config.out_dim))
    elif config.kind == "npool" or config.kind == "rwpool":
        put_mlp("node_mlp", [feature_dim, config.hidden_dim, config.out_dim])
    elif config.kind == "epool":
        put_mlp("node_mlp", [feature_dim, config.hidden_dim, config.out_dim // 2])
    params["query_proj"] = glorot((config.out_dim, feature_dim))
    return params


def trainable_names(config: GnnConfig, params: dict[str, Tensor]) -> list[str]:
    if config.kind in ("gin", "gat") and not config.eps_learnable:
        return [n for n in params if not n.endswith(".eps")]
    return list(params)


def mlp_view(params: dict[str, Tensor], prefix: str) -> MlpParams:
    weights, biases = [], []
    i = 0
    while f"{prefix}.w{i}" in params:
        weights.append(params[f"{prefix}.w{i}"])
        biases.append(params[f"{prefix}.b{i}"])
        i += 1
    if not weights:
        raise KeyError(f"no MLP parameters under prefix {prefix!r}")
    return MlpParams(weights, biases)


def attention_view(params: dict[str, Tensor], layer: int) -> AttentionParams:
    return AttentionParams(params[f"layer{layer}.att.w"], params[f"layer{layer}.att.b"])


def node_feature_tensors(cmap: ConceptMap) -> list[Tensor]:
    if cmap.is_empty:
        raise EmptyGraphError(f"concept map for {cmap.doc_id!r} has no nodes")
    states = []
    for concept in cmap.concepts:
        if concept.feature is None:
            raise ValueError(
                f"{cmap.doc_id}: concept {concept.node_id} has no feature vector attached"
            )
        states.append(Tensor(concept.feature))
    return states


# ---------------------------------------------------------------------------
# Message-passing layers
# ---------------------------------------------------------------------------


def gin_layer(
    adjacency: dict[int, list[int]],
    states: Sequence[Tensor],
    mlp: MlpParams,
    eps: Tensor,
) -> list[Tensor]:
    """(1 + eps) * self plus plain neighbor sum, then the layer MLP.

    Accumulates self term first and neighbors in ascending id order so results
    are reproducible bit for bit.  Isolated nodes keep only the self term.
    """
    scale = add(eps, Tensor(1.0))
    out = []
    for i in range(len(states)):
        acc = mul(states[i], scale)
        for j in adjacency.get(i, ()):
            acc = add(acc, states[j])
        out.append(mlp_forward(mlp, acc))
    return out


def gat_attention(
    state_i: Tensor, neighbor_states: Sequence[Tensor], att: AttentionParams
) -> Tensor | None:
    """Softmax-normalized scores over a node's neighbors; None when it has none."""
    if not neighbor_states:
        return None
    scores = [
        leaky_relu(add(matmul(att.weight, concat([state_i, h_j])), att.bias))
        for h_j in neighbor_states
    ]
    return softmax(stack(scores))


def gat_layer(
    adjacency: dict[int, list[int]],
    states: Sequence[Tensor],
    mlp: MlpParams,
    eps: Tensor,
    att: AttentionParams,
) -> list[Tensor]:
    """GIN update with the neighbor sum replaced by attention-weighted states."""
    scale = add(eps, Tensor(1.0))
    out = []
    for i in range(len(states)):
        acc = mul(states[i], scale)
        neighbors = adjacency.get(i, ())
        if neighbors:
            alpha = gat_attention(states[i], [states[j] for j in neighbors], att)
            for pos, j in enumerate(neighbors):
                acc = add(acc, mul(states[j], getitem(alpha, pos)))
        out.append(mlp_forward(mlp, acc))
    return out


def readout(
    vectors: Sequence[Tensor], mode: str, weights: Sequence[float] | None = None
) -> Tensor:
    """Aggregate a set of vectors into one: mean, sum, elementwise max, or
    tf-idf weighted sum."""
    if not vectors:
        raise EmptyGraphError("readout over an empty vector set")
    if mode not in READOUT_MODES:
        raise ValueError(f"unknown readout {mode!r}")
    stacked = stack(vectors)
    if mode == "mean":
        return mean_rows(stacked)
    if mode == "sum":
        return sum_rows(stacked)
    if mode == "max":
        return max_rows(stacked)
    if weights is None:
        raise ValueError("tfidf readout needs node weights")
    if len(weights) != len(vectors):
        raise ValueError(f"{len(weights)} weights for {len(vectors)} vectors")
    return matmul(Tensor(np.asarray(weights, dtype=np.float64)), stacked)


# ---------------------------------------------------------------------------
# Whole-graph encoders
# ---------------------------------------------------------------------------


def encode_gnn(
    cmap: ConceptMap,
    config: GnnConfig,
    params: dict[str, Tensor],
    tfidf_weights: Sequence[float] | None = None,
) -> Tensor:
    """Run K message-passing layers, concatenate per-layer readouts (layer 0
    included), then project to the output dimension."""
    states = node_feature_tensors(cmap)
    adjacency = cmap.adjacency()
    layer_readouts = [readout(states, config.readout, tfidf_weights)]
    for k in range(config.layers):
        mlp = mlp_view(params, f"layer{k}.mlp")
        eps = params[f"layer{k}.eps"]
        if config.kind == "gat":
            states = gat_layer(adjacency, states, mlp, eps, attention_view(params, k))
        else:
            states = gin_layer(adjacency, states, mlp, eps)
        layer_readouts.append(readout(states, config.readout, tfidf_weights))
    joined = concat(layer_readouts)
    return add(matmul(params["proj.w"], joined), params["proj.b"])


def _pool_projected_nodes(
    cmap: ConceptMap,
    params: dict[str, Tensor],
    readout_mode: str,
    tfidf_weights: Sequence[float] | None,
) -> Tensor:
    mlp = mlp_view(params, "node_mlp")
    projected = [mlp_forward(mlp, t) for t in node_feature_tensors(cmap)]
    return readout(projected, readout_mode, tfidf_weights)


def encode_npool(
    cmap: ConceptMap,
    params: dict[str, Tensor],
    readout_mode: str = "mean",
    tfidf_weights: Sequence[float] | None = None,
) -> Tensor:
    """Pool each node's MLP projection independently."""
    return _pool_projected_nodes(cmap, params, readout_mode, tfidf_weights)


def encode_epool(
    cmap: ConceptMap,
    params: dict[str, Tensor],
    readout_mode: str = "mean",
    tfidf_weights: Sequence[float] | None = None,
) -> Tensor:
    """Pool per-edge concatenations of the endpoints' MLP projections.

    Undirected edges are symmetrized by averaging both concatenation orders.
    An edgeless graph falls back to pooling per-node self-pairs, which keeps
    the output dimension identical.
    """
    mlp = mlp_view(params, "node_mlp")
    projected = [mlp_forward(mlp, t) for t in node_feature_tensors(cmap)]
    half = Tensor(0.5)
    if cmap.edges:
        edge_vectors = []
        edge_weights = [] if tfidf_weights is not None else None
        for i, j in sorted(cmap.edges):
            both = add(concat([projected[i], projected[j]]), concat([projected[j], projected[i]]))
            edge_vectors.append(mul(both, half))
            if edge_weights is not None:
                edge_weights.append((tfidf_weights[i] + tfidf_weights[j]) / 2.0)
        return readout(edge_vectors, readout_mode, edge_weights)
    self_pairs = [concat([p, p]) for p in projected]
    return readout(self_pairs, readout_mode, tfidf_weights)


def walk_seed_for(base_seed: int, doc_id: str) -> int:
    """Stable per-document walk seed derived from a base seed."""
    key = (base_seed & 0xFFFFFFFFFFFFFFFF).to_bytes(8, "little")
    digest = hashlib.blake2b(doc_id.encode("utf-8"), digest_size=8, key=key).digest()
    return int.from_bytes(digest, "little")


def sample_walks(
    cmap: ConceptMap,
    lengths: Sequence[int] = ALLOWED_WALK_LENGTHS,
    walks_per_node: int = 5,
    seed: int = 0,
) -> WalkSet:
    """Uniform random walks per node and length; deterministic for a seed.

    Nodes with no neighbors start no walks, so an edgeless graph yields an
    empty WalkSet.
    """
    bad = [l for l in lengths if l not in ALLOWED_WALK_LENGTHS]
    if bad:
        raise ValueError(f"walk lengths {bad} outside {ALLOWED_WALK_LENGTHS}")
    adjacency = cmap.adjacency()
    rng = random.Random(seed)
    walks: list[tuple[int, ...]] = []
    for length in sorted(set(lengths)):
        for start in sorted(adjacency):
            if not adjacency[start]:
                continue
            for _ in range(walks_per_node):
                walk = [start]
                current = start
                for _ in range(length - 1):
                    options = adjacency[current]
                    current = options[rng.randrange(len(options))]
                    walk.append(current)
                walks.append(tuple(walk))
    return WalkSet(walks=walks, seed=seed)


def encode_rwpool(
    cmap: ConceptMap,
    walkset: WalkSet | None,
    params: dict[str, Tensor],
    readout_mode: str = "mean",
    tfidf_weights: Sequence[float] | None = None,
) -> Tensor:
    """Pool per-walk sums of MLP-projected node features.

    An empty WalkSet (edgeless graph) falls back to plain node pooling, which
    is exactly the node-pool encoder with this model's MLP.
    """
    if walkset is None or walkset.is_empty:
        return _pool_projected_nodes(cmap, params, readout_mode, tfidf_weights)
    mlp = mlp_view(params, "node_mlp")
    projected = [mlp_forward(mlp, t) for t in node_feature_tensors(cmap)]
    walk_vectors = []
    walk_weights = [] if tfidf_weights is not None else None
    for walk in walkset.walks:
        acc = projected[walk[0]]
        for node in walk[1:]:
            acc = add(acc, projected[node])
        walk_vectors.append(acc)
        if walk_weights is not None:
            walk_weights.append(sum(tfidf_weights[n] for n in walk) / len(walk))
    return readout(walk_vectors, readout_mode, walk_weights)


def encode_document(
    cmap: ConceptMap,
    config: GnnConfig,
    params: dict[str, Tensor],
    walk_seed: int = 0,
    tfidf_weights: Sequence[float] | None = None,
) -> Tensor:
    """Dispatch to the configured encoder; raises EmptyGraphError on empty maps."""
    if cmap.is_empty:
        raise EmptyGraphError(f"concept map for {cmap.doc_id!r} has no nodes")
    if config.readout == "tfidf" and tfidf_weights is None:
        raise ValueError("tfidf readout needs per-node weights")
    if config.kind in ("gin", "gat"):
        return encode_gnn(cmap, config, params, tfidf_weights)
    if config.kind == "npool":
        return encode_npool(cmap, params, config.readout, tfidf_weights)
    if config.kind == "epool":
        return encode_epool(cmap, params, config.readout, tfidf_weights)
    walkset = sample_walks(
        cmap, config.walk_lengths, config.walks_per_node, walk_seed_for(walk_seed, cmap.doc_id)
    )
    return encode_rwpool(cmap, walkset, params, config.readout, tfidf_weights)
