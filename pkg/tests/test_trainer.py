"""Triplet sampling, training-loop, and re-ranking tests."""

import numpy as np
import pytest

from synthutil import build_fixture

from conceptrank.conceptmap import Concept, ConceptMap
from conceptrank.corpus import Qrels, SynthConfig
from conceptrank.graphmodels import GnnConfig
from conceptrank.tensorcore import Tensor
from conceptrank.trainer import (
    ModelBundle,
    TrainConfig,
    Triplet,
    build_triplets,
    relevance_score,
    rerank,
    rerank_with_scorer,
    train,
)


def _qrels(judgments):
    qrels = Qrels()
    for (qid, doc), grade in judgments.items():
        qrels.add(qid, doc, grade)
    return qrels


class TestBuildTriplets:
    def test_exhaustive_when_fewer_than_requested(self):
        qrels = _qrels({("q1", "p"): 1, ("q1", "n"): 0})
        triplets = build_triplets(qrels, {"q1": ["p", "n"]}, {"p", "n"}, per_query=3, seed=0)
        assert triplets == [Triplet("q1", "p", "n")]

    def test_full_cross_product(self):
        qrels = _qrels({("q1", "p1"): 1, ("q1", "p2"): 2, ("q1", "n1"): 0, ("q1", "n2"): 0})
        docs = {"p1", "p2", "n1", "n2"}
        triplets = build_triplets(qrels, {"q1": sorted(docs)}, docs, per_query=4, seed=0)
        assert sorted(triplets) == [
            Triplet("q1", "p1", "n1"),
            Triplet("q1", "p1", "n2"),
            Triplet("q1", "p2", "n1"),
            Triplet("q1", "p2", "n2"),
        ]

    def test_seed_determinism(self):
        qrels = _qrels({("q1", f"p{i}"): 1 for i in range(4)} | {("q1", f"n{i}"): 0 for i in range(4)})
        docs = {f"p{i}" for i in range(4)} | {f"n{i}" for i in range(4)}
        args = (qrels, {"q1": sorted(docs)}, docs, 5)
        assert build_triplets(*args, seed=9) == build_triplets(*args, seed=9)
        assert build_triplets(*args, seed=9) != build_triplets(*args, seed=10)

    def test_judged_negatives_preferred(self):
        qrels = _qrels({("q1", "p"): 1, ("q1", "n"): 0})
        candidates = {"q1": ["p", "n", "u1", "u2"]}
        docs = {"p", "n", "u1", "u2"}
        triplets = build_triplets(qrels, candidates, docs, per_query=1, seed=3)
        assert triplets == [Triplet("q1", "p", "n")]

    def test_unjudged_fill_when_exhausted(self):
        qrels = _qrels({("q1", "p"): 1})
        candidates = {"q1": ["p", "u1", "u2"]}
        triplets = build_triplets(qrels, candidates, {"p", "u1", "u2"}, per_query=2, seed=0)
        assert sorted(t.negative for t in triplets) == ["u1", "u2"]

    def test_query_without_positive_skipped(self, caplog):
        qrels = _qrels({("q1", "n"): 0})
        triplets = build_triplets(qrels, {"q1": ["n"]}, {"n"}, per_query=2, seed=0)
        assert triplets == []


def _identity_bundle(dim=2):
    """npool model whose encoder and query projection are identity maps."""
    config = GnnConfig(kind="npool", hidden_dim=dim, out_dim=dim)
    params = {
        "node_mlp.w0": Tensor(np.eye(dim)),
        "node_mlp.b0": Tensor(np.zeros(dim)),
        "query_proj": Tensor(np.eye(dim)),
    }
    return ModelBundle(config, params, feature_dim=dim)


def _single_node_map(doc_id, feature):
    return ConceptMap(doc_id, [Concept(0, "m", 1, feature=np.asarray(feature, dtype=float))])


class TestRelevanceScore:
    def test_aligned_embedding_scores_one(self):
        bundle = _identity_bundle()
        cmap = _single_node_map("d", [0.6, 0.8])
        assert relevance_score(bundle, cmap, np.array([0.6, 0.8])).item() == pytest.approx(1.0)

    def test_orthogonal_scores_zero(self):
        bundle = _identity_bundle()
        cmap = _single_node_map("d", [1.0, 0.0])
        assert relevance_score(bundle, cmap, np.array([0.0, 1.0])).item() == pytest.approx(0.0)

    def test_scale_invariance(self):
        bundle = _identity_bundle()
        base = relevance_score(bundle, _single_node_map("d", [0.4, 0.9]), np.array([1.0, 0.3])).item()
        scaled = relevance_score(bundle, _single_node_map("d", [1.2, 2.7]), np.array([1.0, 0.3])).item()
        assert scaled == pytest.approx(base, abs=1e-12)


@pytest.fixture(scope="module")
def planted():
    return build_fixture(SynthConfig(n_docs=100, n_queries=5), seed=11, dim=16)


class TestTrain:
    def test_zero_margin_identical_graphs_leave_params(self, planted):
        # two documents with byte-identical maps: hinge is exactly zero
        feature = [0.3, 0.7]
        maps = {
            "a": _single_node_map("a", feature),
            "b": _single_node_map("b", feature),
        }
        qrels = _qrels({("q1", "a"): 1, ("q1", "b"): 0})
        config = GnnConfig(kind="npool", hidden_dim=4, out_dim=4)
        tc = TrainConfig(epochs=1, triplets_per_query=1, margin=0.0, lr=0.1, seed=0)
        queries = planted.queries[:1]
        qid = queries[0].id
        qrels = _qrels({(qid, "a"): 1, (qid, "b"): 0})
        before = ModelBundle.create(config, planted.table.dim, seed=0)
        snapshot = {n: t.data.copy() for n, t in before.params.items()}
        # train builds its own bundle from the same seed
        maps = {
            "a": _single_node_map("a", np.ones(planted.table.dim)),
            "b": _single_node_map("b", np.ones(planted.table.dim)),
        }
        result = train(config, tc, planted.table, maps, queries, qrels, {qid: ["a", "b"]})
        assert result.history[0].mean_loss == 0.0
        for name, data in snapshot.items():
            assert np.array_equal(result.bundle.params[name].data, data)

    def test_loss_decreases_on_planted_fixture(self, planted):
        config = GnnConfig(kind="epool", hidden_dim=16, out_dim=16)
        tc = TrainConfig(epochs=10, triplets_per_query=8, margin=0.5, lr=0.01, seed=2, patience=20)
        result = train(
            config, tc, planted.table, planted.maps, planted.queries, planted.qrels, planted.candidates
        )
        losses = [h.mean_loss for h in result.history]
        assert losses[0] > losses[1] > losses[2]
        assert losses[-1] < losses[0]

    def test_bitwise_deterministic_history(self, planted):
        config = GnnConfig(kind="npool", hidden_dim=8, out_dim=8)
        tc = TrainConfig(epochs=3, triplets_per_query=4, margin=0.5, lr=0.01, seed=7)

        def run():
            result = train(
                config, tc, planted.table, planted.maps, planted.queries, planted.qrels,
                planted.candidates,
            )
            return [(h.mean_loss, h.val_ndcg20) for h in result.history]

        assert run() == run()

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_aborts(self, planted):
        config = GnnConfig(kind="npool", hidden_dim=4, out_dim=4)
        tc = TrainConfig(epochs=1, triplets_per_query=1, margin=0.5, lr=1.0, seed=0)
        maps = {
            "a": _single_node_map("a", np.ones(planted.table.dim)),
            "b": _single_node_map("b", 2 * np.ones(planted.table.dim)),
        }
        qid = planted.queries[0].id
        qrels = _qrels({(qid, "a"): 1, (qid, "b"): 0})
        poisoned = ModelBundle.create(config, planted.table.dim, seed=0)
        poisoned.params["query_proj"].data[0, 0] = np.inf
        with pytest.raises(FloatingPointError, match="non-finite"):
            train(
                config, tc, planted.table, maps, planted.queries[:1], qrels,
                {qid: ["a", "b"]}, bundle=poisoned,
            )


class TestRerank:
    def test_constant_scorer_preserves_candidate_order(self):
        candidates = {"q1": ["d3", "d1", "d2"]}
        run = rerank_with_scorer(lambda qid, doc: 0.5, candidates)
        assert [d for d, _ in run["q1"]] == ["d3", "d1", "d2"]

    def test_oracle_scorer_separates(self):
        positives = {"d2", "d4"}
        candidates = {"q1": ["d1", "d2", "d3", "d4"]}
        run = rerank_with_scorer(
            lambda qid, doc: 1.0 if doc in positives else -1.0, candidates
        )
        assert [d for d, _ in run["q1"]][:2] == ["d2", "d4"]

    def test_singleton(self):
        run = rerank_with_scorer(lambda qid, doc: 0.1, {"q1": ["only"]})
        assert [d for d, _ in run["q1"]] == ["only"]

    def test_output_is_permutation_of_input(self, planted):
        bundle = ModelBundle.create(GnnConfig(kind="npool", hidden_dim=8, out_dim=8), planted.table.dim, seed=1)
        run = rerank(bundle, planted.candidates, planted.maps, planted.query_vecs())
        for qid, items in run.items():
            assert sorted(d for d, _ in items) == sorted(planted.candidates[qid])

    def test_empty_map_docs_placed_after_scored(self):
        bundle = _identity_bundle()
        maps = {
            "full": _single_node_map("full", [1.0, 0.0]),
            "empty": ConceptMap("empty", []),
        }
        run = rerank(bundle, {"q1": ["empty", "full"]}, maps, {"q1": np.array([1.0, 0.0])})
        assert [d for d, _ in run["q1"]] == ["full", "empty"]
        scores = dict(run["q1"])
        assert scores["empty"] < scores["full"]

    def test_scores_strictly_descending(self, planted):
        bundle = ModelBundle.create(GnnConfig(kind="epool", hidden_dim=8, out_dim=8), planted.table.dim, seed=4)
        run = rerank(bundle, planted.candidates, planted.maps, planted.query_vecs())
        for items in run.values():
            values = [s for _, s in items]
            assert all(a >= b for a, b in zip(values, values[1:]))

    def test_zero_embedding_doc_drops_to_tail(self):
        bundle = _identity_bundle()
        maps = {
            "good": _single_node_map("good", [1.0, 0.0]),
            "zero": _single_node_map("zero", [0.0, 0.0]),
        }
        run = rerank(bundle, {"q1": ["zero", "good"]}, maps, {"q1": np.array([1.0, 0.0])})
        assert [d for d, _ in run["q1"]] == ["good", "zero"]

    def test_oracle_scorer_zero_loss_at_small_margin(self):
        # score gap of an oracle scorer is 2; any margin <= 2 keeps the hinge flat
        from conceptrank.tensorcore import Tensor, triplet_loss

        for margin in (0.0, 0.5, 2.0):
            assert triplet_loss(Tensor(1.0), Tensor(-1.0), margin).item() == 0.0

    def test_end_to_end_determinism(self):
        def full_run():
            fixture = build_fixture(SynthConfig(n_docs=60, n_queries=5, vocab_size=100), seed=3, dim=8)
            config = GnnConfig(kind="rwpool", hidden_dim=8, out_dim=8, walks_per_node=2)
            tc = TrainConfig(epochs=2, triplets_per_query=4, margin=0.5, lr=0.01, seed=5)
            result = train(
                config, tc, fixture.table, fixture.maps, fixture.queries, fixture.qrels,
                fixture.candidates,
            )
            return rerank(result.bundle, fixture.candidates, fixture.maps, fixture.query_vecs())

        assert full_run() == full_run()
