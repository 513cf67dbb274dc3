"""Documents, queries, relevance judgments, and deterministic synthetic fixtures."""

from __future__ import annotations

import json
import logging
import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

log = logging.getLogger(__name__)

_WORD_RE = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*")
SENTENCE_PUNCT = frozenset(".!?;")


class CorpusError(ValueError):
    """Malformed corpus, query, or qrels input."""


class TokenizedText(NamedTuple):
    tokens: list[str]
    boundaries: list[int]


def tokenize(text: str) -> TokenizedText:
    """Lowercase `text` into tokens plus sentence-boundary positions.

    Tokens are maximal runs of alphanumeric characters, with hyphens and
    apostrophes kept when they sit between alphanumerics.  Sentence-ending
    punctuation (``. ! ? ;``) is never emitted as a token; instead the index of
    the token it follows is recorded in ``boundaries``.
    """
    lowered = text.lower()
    tokens: list[str] = []
    ends: list[int] = []
    for m in _WORD_RE.finditer(lowered):
        tokens.append(m.group())
        ends.append(m.end())
    boundaries: list[int] = []
    tok_i = 0
    for pos, ch in enumerate(lowered):
        while tok_i < len(ends) and ends[tok_i] <= pos:
            tok_i += 1
        if ch in SENTENCE_PUNCT:
            last = tok_i - 1
            if last >= 0 and (not boundaries or boundaries[-1] != last):
                boundaries.append(last)
    return TokenizedText(tokens, boundaries)


@dataclass
class Document:
    """A corpus document; tokens are derived from title + body at construction."""

    id: str
    title: str
    body: str
    tokens: list[str] = field(init=False, repr=False, compare=False)
    boundaries: list[int] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("document id must be non-empty")
        toks = tokenize(self.text)
        self.tokens = toks.tokens
        self.boundaries = toks.boundaries

    @property
    def text(self) -> str:
        if self.title and self.body:
            return f"{self.title}. {self.body}"
        return self.title or self.body


@dataclass
class Query:
    id: str
    text: str
    tokens: list[str] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusError("query id must be non-empty")
        self.tokens = tokenize(self.text).tokens
        if not self.tokens:
            raise CorpusError(f"query {self.id!r} has no tokens after tokenization")


class Qrels:
    """Relevance judgments keyed by (query id, doc id); grades are ints >= 0."""

    def __init__(self) -> None:
        self._grades: dict[tuple[str, str], int] = {}
        self.unknown_doc_count = 0

    def add(self, query_id: str, doc_id: str, grade: int) -> None:
        if grade < 0:
            raise CorpusError(f"negative grade {grade} for ({query_id}, {doc_id})")
        key = (query_id, doc_id)
        if key in self._grades:
            raise CorpusError(f"duplicate judgment for ({query_id}, {doc_id})")
        self._grades[key] = int(grade)

    def grade(self, query_id: str, doc_id: str, default: int = 0) -> int:
        return self._grades.get((query_id, doc_id), default)

    def is_judged(self, query_id: str, doc_id: str) -> bool:
        return (query_id, doc_id) in self._grades

    def grades_for(self, query_id: str) -> dict[str, int]:
        return {d: g for (q, d), g in self._grades.items() if q == query_id}

    def positives(self, query_id: str) -> list[str]:
        return sorted(d for d, g in self.grades_for(query_id).items() if g > 0)

    def judged_negatives(self, query_id: str) -> list[str]:
        return sorted(d for d, g in self.grades_for(query_id).items() if g == 0)

    def query_ids(self) -> list[str]:
        return sorted({q for q, _ in self._grades})

    def items(self) -> Iterator[tuple[tuple[str, str], int]]:
        return iter(self._grades.items())

    def __len__(self) -> int:
        return len(self._grades)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Qrels) and self._grades == other._grades


class DocumentCollection:
    """Immutable id-indexed set of documents with corpus-level token statistics."""

    def __init__(self, documents: Iterable[Document]) -> None:
        self._docs: dict[str, Document] = {}
        total = 0
        for doc in documents:
            if doc.id in self._docs:
                raise CorpusError(f"duplicate document id: {doc.id}")
            self._docs[doc.id] = doc
            total += len(doc.tokens)
        self._total_tokens = total

    @property
    def doc_count(self) -> int:
        return len(self._docs)

    @property
    def total_tokens(self) -> int:
        return self._total_tokens

    @property
    def avg_doc_len(self) -> float:
        if not self._docs:
            return 0.0
        return self._total_tokens / len(self._docs)

    def get(self, doc_id: str) -> Document:
        try:
            return self._docs[doc_id]
        except KeyError:
            raise KeyError(f"unknown document id: {doc_id}") from None

    def doc_ids(self) -> list[str]:
        return list(self._docs)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._docs

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs.values())

    def __len__(self) -> int:
        return len(self._docs)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DocumentCollection):
            return NotImplemented
        return self._docs == other._docs


def load_collection(path: str | Path) -> DocumentCollection:
    """Load a JSON-lines corpus ({"id", "title", "text"} per line)."""
    docs: list[Document] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj:
                raise CorpusError(f"{path}:{lineno}: expected an object with an 'id' field")
            docs.append(
                Document(str(obj["id"]), str(obj.get("title", "")), str(obj.get("text", "")))
            )
    return DocumentCollection(docs)


def write_collection(collection: DocumentCollection, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in collection:
            fh.write(json.dumps({"id": doc.id, "title": doc.title, "text": doc.body}))
            fh.write("\n")


def load_queries(path: str | Path) -> list[Query]:
    queries: list[Query] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            if not isinstance(obj, dict) or "id" not in obj or "text" not in obj:
                raise CorpusError(f"{path}:{lineno}: expected an object with 'id' and 'text'")
            qid = str(obj["id"])
            if qid in seen:
                raise CorpusError(f"{path}:{lineno}: duplicate query id {qid!r}")
            seen.add(qid)
            queries.append(Query(qid, str(obj["text"])))
    return queries


def write_queries(queries: Iterable[Query], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for q in queries:
            fh.write(json.dumps({"id": q.id, "text": q.text}))
            fh.write("\n")


def load_topics(
    queries_path: str | Path,
    qrels_path: str | Path,
    collection: DocumentCollection | None = None,
) -> tuple[list[Query], Qrels]:
    """Load queries (JSON-lines) and TREC qrels rows ``qid iteration docid grade``.

    Every qrels row must reference a loaded query.  Doc ids absent from
    `collection` (when one is given) are tolerated but counted and logged.
    """
    queries = load_queries(queries_path)
    known_qids = {q.id for q in queries}
    qrels = Qrels()
    unknown_docs = 0
    with open(qrels_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise CorpusError(
                    f"{qrels_path}:{lineno}: expected 'qid iteration docid grade', got {len(parts)} fields"
                )
            qid, _iteration, doc_id, grade_str = parts
            try:
                grade = int(grade_str)
            except ValueError:
                raise CorpusError(f"{qrels_path}:{lineno}: grade {grade_str!r} is not an integer") from None
            if grade < 0:
                raise CorpusError(f"{qrels_path}:{lineno}: negative grade {grade}")
            if qid not in known_qids:
                raise CorpusError(f"{qrels_path}:{lineno}: unknown query id {qid!r}")
            try:
                qrels.add(qid, doc_id, grade)
            except CorpusError as exc:
                raise CorpusError(f"{qrels_path}:{lineno}: {exc}") from None
            if collection is not None and doc_id not in collection:
                unknown_docs += 1
    qrels.unknown_doc_count = unknown_docs
    if unknown_docs:
        log.warning("%d qrels rows reference documents missing from the collection", unknown_docs)
    return queries, qrels


def write_qrels(qrels: Qrels, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for (qid, doc_id), grade in qrels.items():
            fh.write(f"{qid} 0 {doc_id} {grade}\n")


# ---------------------------------------------------------------------------
# Synthetic fixtures with planted concept phrases
# ---------------------------------------------------------------------------

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"
_SYLLABLES = [c + v for c in _CONSONANTS for v in _VOWELS]


def _pseudoword(index: int) -> str:
    n = len(_SYLLABLES)
    return _SYLLABLES[index % n] + _SYLLABLES[(index // n) % n] + _SYLLABLES[(index // (n * n)) % n]


@dataclass(frozen=True)
class SynthConfig:
    """Shape of a generated fixture.

    Each query gets `concepts_per_query` planted two-word phrases.  Relevant
    documents contain all of them as adjacent bigrams; hard negatives contain
    exactly one.  With `adversarial` set, negatives additionally contain the
    remaining planted words scattered so they share tokens with the query but
    never a planted bigram pair.
    """

    n_docs: int = 200
    n_queries: int = 10
    vocab_size: int = 160
    concepts_per_query: int = 3
    noise_rate: float = 0.3
    adversarial: bool = False

    def validate(self) -> None:
        if self.n_queries < 1:
            raise CorpusError("n_queries must be >= 1")
        if self.n_docs < 2 * self.n_queries:
            raise CorpusError(f"n_docs ({self.n_docs}) must be >= 2 * n_queries ({self.n_queries})")
        if self.concepts_per_query < 2:
            raise CorpusError("concepts_per_query must be >= 2")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise CorpusError("noise_rate must be in [0, 1]")
        planted = self.n_queries * self.concepts_per_query * 2
        if self.vocab_size < planted + 20:
            raise CorpusError(
                f"vocab_size ({self.vocab_size}) too small for {planted} planted words plus noise"
            )


# phrase connectors; all tagged OTHER by the default lexicon so they split
# chunks without forming concepts of their own
_CONNECTORS = ("of", "and", "with", "in", "from")


def _noise_phrase(rng: random.Random, pool: list[str]) -> list[str]:
    return rng.sample(pool, rng.randint(2, 3))


def _noise_sentence(rng: random.Random, pool: list[str]) -> list[list[str]]:
    return [_noise_phrase(rng, pool) for _ in range(rng.randint(1, 2))]


def _doc_sentences(
    rng: random.Random,
    grade: int | None,
    phrases: list[tuple[str, str]] | None,
    pool: list[str],
    noise_rate: float,
    adversarial: bool,
) -> list[list[list[str]]]:
    """Sentences as lists of phrases; phrases in one sentence end up linked by
    co-occurrence windows, so planted pairs sharing a sentence become edges."""
    sentences: list[list[list[str]]] = []
    if grade == 2:
        assert phrases is not None
        n = len(phrases)
        # ring of planted pairs: every phrase occurs twice and co-occurs with
        # its neighbors; noise padding matches the negatives' sentence count
        for i in range(n):
            sentences.append([list(phrases[i]), list(phrases[(i + 1) % n])])
        sentences.extend(_noise_sentence(rng, pool) for _ in range(n - 1))
    elif grade == 1:
        assert phrases is not None
        a, b = rng.sample(phrases, 2)
        sentences.append([list(a), list(b)])
        sentences.extend(_noise_sentence(rng, pool) for _ in range(3))
    elif grade == 0:
        assert phrases is not None
        kept = rng.choice(phrases)
        if adversarial:
            # same token-frequency and length profile as a relevant document,
            # but every phrase except one is broken: its words hide behind
            # noise words in separate chunks, so the planted bigrams and their
            # concept pairs never appear
            units: list[list[str]] = [list(kept), list(kept)]
            for word_a, word_b in (p for p in phrases if p != kept):
                for word in (word_a, word_b):
                    for _ in range(2):
                        units.append([rng.choice(pool), word])
            rng.shuffle(units)
            sentences.extend(units[i : i + 2] for i in range(0, len(units), 2))
        else:
            sentences.append([list(kept), _noise_phrase(rng, pool)])
            sentences.extend(_noise_sentence(rng, pool) for _ in range(4))
    else:
        sentences.extend(_noise_sentence(rng, pool) for _ in range(rng.randint(3, 5)))
    extra = round(noise_rate * len(sentences))
    sentences.extend(_noise_sentence(rng, pool) for _ in range(extra))
    rng.shuffle(sentences)
    return sentences


def _render_sentence(rng: random.Random, sentence: list[list[str]]) -> str:
    parts: list[str] = []
    for i, phrase in enumerate(sentence):
        if i > 0:
            parts.append(rng.choice(_CONNECTORS))
        parts.extend(phrase)
    return " ".join(parts) + "."


def generate_synthetic(
    config: SynthConfig, seed: int
) -> tuple[DocumentCollection, list[Query], Qrels]:
    """Generate a planted-concept corpus; a pure function of (config, seed)."""
    config.validate()
    rng = random.Random(seed)
    words = [_pseudoword(i) for i in range(config.vocab_size)]
    n_planted = config.n_queries * config.concepts_per_query * 2
    noise_pool = words[n_planted:]

    query_phrases: list[list[tuple[str, str]]] = []
    queries: list[Query] = []
    for qi in range(config.n_queries):
        base = qi * config.concepts_per_query * 2
        phrases = [
            (words[base + 2 * c], words[base + 2 * c + 1])
            for c in range(config.concepts_per_query)
        ]
        query_phrases.append(phrases)
        text = " ".join(w for pair in phrases for w in pair)
        queries.append(Query(f"q{qi + 1:02d}", text))

    block = config.n_docs // config.n_queries
    n_rel2 = max(1, block // 10)
    n_rel1 = block // 10 if block >= 4 else 0
    n_neg = max(1, (block - n_rel2 - n_rel1) // 2)
    n_bg = block - n_rel2 - n_rel1 - n_neg
    specs: list[tuple[int | None, int | None]] = []
    for qi in range(config.n_queries):
        specs.extend([(qi, 2)] * n_rel2)
        specs.extend([(qi, 1)] * n_rel1)
        specs.extend([(qi, 0)] * n_neg)
        specs.extend([(None, None)] * n_bg)
    specs.extend([(None, None)] * (config.n_docs - len(specs)))
    rng.shuffle(specs)

    docs: list[Document] = []
    qrels = Qrels()
    for idx, (qi, grade) in enumerate(specs):
        doc_id = f"d{idx + 1:04d}"
        phrases = query_phrases[qi] if qi is not None else None
        sentences = _doc_sentences(rng, grade, phrases, noise_pool, config.noise_rate, config.adversarial)
        body = " ".join(_render_sentence(rng, s) for s in sentences)
        docs.append(Document(doc_id, "", body))
        if qi is not None and grade is not None:
            qrels.add(queries[qi].id, doc_id, grade)
    return DocumentCollection(docs), queries, qrels
