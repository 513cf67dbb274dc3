"""Inverted index and BM25 tests against hand-computed and brute-force oracles."""

import math
import random

import pytest

from conceptrank.conceptmap import build_concept_map
from conceptrank.corpus import Document, DocumentCollection
from conceptrank.lexindex import (
    UnknownDocumentError,
    bm25_score,
    build_index,
    load_index,
    read_run,
    retrieve_topk,
    save_index,
    tfidf_weight,
    write_run,
)


def _collection(bodies: dict[str, str]) -> DocumentCollection:
    return DocumentCollection([Document(doc_id, "", body) for doc_id, body in bodies.items()])


def _reference_bm25(docs: dict[str, list[str]], query: list[str], doc_id: str, k1=1.2, b=0.75):
    """Independent scorer written from the formula, no shared code with the index."""
    n = len(docs)
    avgdl = sum(len(t) for t in docs.values()) / n
    tokens = docs[doc_id]
    score = 0.0
    for term in query:
        tf = tokens.count(term)
        if tf == 0:
            continue
        df = sum(1 for t in docs.values() if term in t)
        term_idf = math.log(1 + (n - df + 0.5) / (df + 0.5))
        score += term_idf * tf * (k1 + 1) / (tf + k1 * (1 - b + b * len(tokens) / avgdl))
    return score


class TestBuildIndex:
    def test_hand_counts(self):
        index = build_index(_collection({"d1": "a b a"}))
        assert index.term_freq("a", "d1") == 2
        assert index.term_freq("b", "d1") == 1
        assert index.doc_count == 1
        assert index.avgdl == 3.0

    def test_absent_term(self):
        index = build_index(_collection({"d1": "a"}))
        assert index.postings.get("zzz") is None
        assert index.df("zzz") == 0

    def test_concept_df(self):
        maps = [
            build_concept_map("d1", ["crime", "mask"]),
            build_concept_map("d2", ["crime", "crime"]),
        ]
        index = build_index(_collection({"d1": "x", "d2": "y"}), maps)
        assert index.concept_df["crime"] == 2
        assert index.concept_df["mask"] == 1

    def test_postings_sorted_by_doc_id(self):
        index = build_index(_collection({"d2": "a", "d1": "a"}))
        assert [d for d, _ in index.postings["a"]] == ["d1", "d2"]


class TestBm25:
    def test_no_shared_terms(self):
        index = build_index(_collection({"d1": "alpha beta"}))
        assert bm25_score(index, ["gamma"], "d1") == 0.0

    def test_single_doc_single_term(self):
        index = build_index(_collection({"d1": "crime"}))
        assert bm25_score(index, ["crime"], "d1") == pytest.approx(math.log(4 / 3), abs=1e-9)

    def test_unknown_doc_raises(self):
        index = build_index(_collection({"d1": "a"}))
        with pytest.raises(UnknownDocumentError):
            bm25_score(index, ["a"], "ghost")

    def test_matches_reference_scorer(self):
        rng = random.Random(0)
        vocab = [f"w{i}" for i in range(12)]
        docs = {
            f"d{i}": " ".join(rng.choices(vocab, k=rng.randint(3, 15))) for i in range(20)
        }
        index = build_index(_collection(docs))
        token_docs = {d: text.split() for d, text in docs.items()}
        for _ in range(30):
            query = rng.choices(vocab, k=rng.randint(1, 4))
            doc_id = rng.choice(list(docs))
            assert bm25_score(index, query, doc_id) == pytest.approx(
                _reference_bm25(token_docs, query, doc_id), abs=1e-12
            )

    def test_duplicated_corpus_preserves_ranking_order(self):
        bodies = {"d1": "crime wave", "d2": "crime crime mask", "d3": "mask vaccine shot"}
        single = build_index(_collection(bodies))
        doubled = dict(bodies)
        doubled.update({f"{k}x": v for k, v in bodies.items()})
        double = build_index(_collection(doubled))
        query = ["crime", "mask"]
        order_single = sorted(bodies, key=lambda d: (-bm25_score(single, query, d), d))
        order_double = sorted(bodies, key=lambda d: (-bm25_score(double, query, d), d))
        assert order_single == order_double

    def test_monotone_in_tf(self):
        scores = []
        for tf in range(1, 6):
            bodies = {"d1": " ".join(["crime"] * tf + ["pad"] * (6 - tf)), "d2": "other words"}
            index = build_index(_collection(bodies))
            scores.append(bm25_score(index, ["crime"], "d1"))
        assert scores == sorted(scores)


class TestRetrieveTopK:
    def test_only_matching_doc_returned(self):
        index = build_index(_collection({"d1": "alpha", "d2": "crime", "d3": "beta"}))
        result = retrieve_topk(index, ["crime"], k=10)
        assert result.doc_ids == ["d2"]
        assert result.items[0][1] > 0

    def test_k_larger_than_corpus(self):
        index = build_index(_collection({"d1": "crime", "d2": "crime wave"}))
        assert len(retrieve_topk(index, ["crime"], k=50)) == 2

    def test_tie_broken_by_ascending_doc_id(self):
        index = build_index(_collection({"db": "crime", "da": "crime"}))
        assert retrieve_topk(index, ["crime"], k=2).doc_ids == ["da", "db"]

    def test_equals_brute_force_sort(self):
        rng = random.Random(7)
        vocab = [f"w{i}" for i in range(25)]
        bodies = {
            f"d{i:03d}": " ".join(rng.choices(vocab, k=rng.randint(2, 30))) for i in range(200)
        }
        index = build_index(_collection(bodies))
        for _ in range(10):
            query = rng.choices(vocab, k=rng.randint(1, 5))
            brute = sorted(
                ((d, bm25_score(index, query, d)) for d in bodies),
                key=lambda pair: (-pair[1], pair[0]),
            )
            brute = [(d, s) for d, s in brute if s > 0]
            for k in (1, 10, 100, 500):
                assert retrieve_topk(index, query, k=k).items == brute[:k]


class TestTfidfWeight:
    def test_concept_in_nearly_every_doc(self):
        maps = [build_concept_map(f"d{i}", ["common"]) for i in range(9)]
        coll = _collection({f"d{i}": "x" for i in range(10)})
        index = build_index(coll, maps)
        assert tfidf_weight(index, "common", 5) == 0.0  # ln(10/10) = 0

    def test_linear_in_frequency(self):
        coll = _collection({f"d{i}": "x" for i in range(10)})
        index = build_index(coll, [build_concept_map("d0", ["rare"])])
        assert tfidf_weight(index, "rare", 2) == pytest.approx(2 * tfidf_weight(index, "rare", 1))

    def test_unseen_concept(self):
        coll = _collection({f"d{i}": "x" for i in range(10)})
        index = build_index(coll)
        assert tfidf_weight(index, "ghost", 1) == pytest.approx(math.log(10), abs=1e-12)

    def test_frequency_below_one_rejected(self):
        index = build_index(_collection({"d1": "x"}))
        with pytest.raises(ValueError):
            tfidf_weight(index, "a", 0)


class TestPersistence:
    def test_round_trip_scores_identical(self, tmp_path):
        rng = random.Random(3)
        vocab = [f"w{i}" for i in range(15)]
        bodies = {f"d{i}": " ".join(rng.choices(vocab, k=8)) for i in range(30)}
        maps = [build_concept_map(d, rng.choices(vocab, k=4)) for d in bodies]
        index = build_index(_collection(bodies), maps)
        path = tmp_path / "index.json"
        save_index(index, path)
        loaded = load_index(path)
        for _ in range(20):
            query = rng.choices(vocab, k=3)
            doc_id = rng.choice(list(bodies))
            assert abs(bm25_score(index, query, doc_id) - bm25_score(loaded, query, doc_id)) <= 1e-12
        assert loaded.concept_df == index.concept_df

    def test_run_file_round_trip(self, tmp_path):
        run = {"q2": [("d1", 2.5), ("d9", 1.25)], "q1": [("d3", 0.75)]}
        path = tmp_path / "run.txt"
        write_run(path, run, tag="bm25")
        lines = path.read_text().splitlines()
        assert lines[0] == "q1 Q0 d3 1 0.75 bm25"
        assert lines[1] == "q2 Q0 d1 1 2.5 bm25"
        assert lines[2] == "q2 Q0 d9 2 1.25 bm25"
        assert read_run(path) == {"q1": [("d3", 0.75)], "q2": [("d1", 2.5), ("d9", 1.25)]}
