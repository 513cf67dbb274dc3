"""Concept maps: tag tokens, chunk noun/verb phrases, and link co-occurring concepts."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple

import numpy as np

from .corpus import Document

TAGS = ("NOUN", "VERB", "ADJ", "DET", "OTHER")
_TAG_PRIORITY = {tag: i for i, tag in enumerate(TAGS)}

DEFAULT_WINDOW = 3


class ConceptMapError(ValueError):
    """Malformed concept-map input or store record."""


class TaggedToken(NamedTuple):
    token: str
    tag: str
    sentence: int


class Lexicon:
    """token -> coarse tag table; duplicate entries resolve by NOUN > VERB > ADJ."""

    def __init__(self, entries: Iterable[tuple[str, str]] = ()) -> None:
        self._tags: dict[str, str] = {}
        for token, tag in entries:
            self.add(token, tag)

    def add(self, token: str, tag: str) -> None:
        if tag not in TAGS:
            raise ConceptMapError(f"unknown tag {tag!r}")
        key = token.lower()
        current = self._tags.get(key)
        if current is None or _TAG_PRIORITY[tag] < _TAG_PRIORITY[current]:
            self._tags[key] = tag

    def get(self, token: str) -> str | None:
        return self._tags.get(token.lower())

    def __contains__(self, token: str) -> bool:
        return token.lower() in self._tags

    def __len__(self) -> int:
        return len(self._tags)


_DETERMINERS = "a an the this that these those each every either neither some any no such"
_PRONOUNS = (
    "i you he she it we they me him her us them my your his its our their mine yours hers "
    "ours theirs myself yourself himself herself itself ourselves themselves who whom whose "
    "which what something anything nothing everything someone anyone everyone"
)
_AUXILIARIES = (
    "be am is are was were been being have has had having do does did done doing will would "
    "shall should can could may might must ought"
)
_FUNCTION_WORDS = (
    "and or but nor so yet if then than because while although though when where why how not "
    "only also very too more most less least much many few there here now again once however "
    "of in on at by for with from to into onto over under between among during before after "
    "above below up down out off about against through across per as via"
)

DEFAULT_LEXICON = Lexicon(
    [(w, "DET") for w in _DETERMINERS.split()]
    + [(w, "OTHER") for w in (_PRONOUNS + " " + _AUXILIARIES + " " + _FUNCTION_WORDS).split()]
)

# phrases made only of these words are degenerate hubs and get dropped
STOP_PHRASE_WORDS = frozenset((_PRONOUNS + " " + _AUXILIARIES).split())

# ordered; first match wins, requiring at least 3 characters before the suffix
_SUFFIX_RULES = [
    ("tion", "NOUN"),
    ("sion", "NOUN"),
    ("ment", "NOUN"),
    ("ness", "NOUN"),
    ("ance", "NOUN"),
    ("ence", "NOUN"),
    ("ship", "NOUN"),
    ("less", "ADJ"),
    ("ical", "ADJ"),
    ("able", "ADJ"),
    ("ible", "ADJ"),
    ("ism", "NOUN"),
    ("ist", "NOUN"),
    ("ity", "NOUN"),
    ("age", "NOUN"),
    ("ous", "ADJ"),
    ("ful", "ADJ"),
    ("ive", "ADJ"),
    ("ish", "ADJ"),
    ("ize", "VERB"),
    ("ise", "VERB"),
    ("ify", "VERB"),
    ("ing", "VERB"),
    ("ed", "VERB"),
    ("ly", "OTHER"),
    ("al", "ADJ"),
    ("ic", "ADJ"),
    ("s", "NOUN"),
]


def _suffix_tag(token: str) -> str:
    for suffix, tag in _SUFFIX_RULES:
        if len(token) >= len(suffix) + 3 and token.endswith(suffix):
            return tag
    return "NOUN"


def tag_tokens(
    tokens: list[str], boundaries: list[int], lexicon: Lexicon | None = None
) -> list[TaggedToken]:
    """Assign one coarse tag per token; lexicon hits win, suffix rules cover the rest."""
    lex = DEFAULT_LEXICON if lexicon is None else lexicon
    boundary_set = set(boundaries)
    tagged: list[TaggedToken] = []
    sentence = 0
    for i, token in enumerate(tokens):
        tag = lex.get(token) or _suffix_tag(token)
        tagged.append(TaggedToken(token, tag, sentence))
        if i in boundary_set:
            sentence += 1
    return tagged


_LEMMA_VOWELS = frozenset("aeiou")


def _undouble(stem: str) -> str:
    if (
        len(stem) >= 4
        and stem[-1] == stem[-2]
        and stem[-1] not in _LEMMA_VOWELS
        and stem[-1] not in "slz"
    ):
        return stem[:-1]
    return stem


def lemmatize(token: str, tag: str) -> str:
    """Suffix-strip lemmatization: plural rules for nouns, ing/ed for verbs."""
    if tag == "NOUN":
        if token.endswith("ies") and len(token) > 4:
            return token[:-3] + "y"
        if token.endswith("ses") and len(token) > 4:
            return token[:-2]
        if token.endswith("s") and not token.endswith("ss") and len(token) > 3:
            return token[:-1]
    elif tag == "VERB":
        if token.endswith("ing") and len(token) > 5:
            return _undouble(token[:-3])
        if token.endswith("ed") and len(token) > 4:
            return _undouble(token[:-2])
    return token


def _sentence_phrases(sent: list[TaggedToken]) -> list[str]:
    phrases: list[str] = []
    i = 0
    n = len(sent)
    while i < n:
        tag = sent[i].tag
        if tag in ("ADJ", "NOUN"):
            j = i
            last_noun = -1
            while j < n and sent[j].tag in ("ADJ", "NOUN"):
                if sent[j].tag == "NOUN":
                    last_noun = j
                j += 1
            if last_noun >= 0:
                chunk = sent[i : last_noun + 1]
                if not all(t.token in STOP_PHRASE_WORDS for t in chunk):
                    phrases.append(" ".join(lemmatize(t.token, t.tag) for t in chunk))
            i = j
        elif tag == "VERB":
            j = i
            while j < n and sent[j].tag == "VERB":
                j += 1
            chunk = sent[i:j]
            if not all(t.token in STOP_PHRASE_WORDS for t in chunk):
                phrases.append(" ".join(lemmatize(t.token, t.tag) for t in chunk))
            i = j
        else:
            i += 1
    return phrases


def extract_phrases_with_breaks(tagged: list[TaggedToken]) -> tuple[list[str], list[int]]:
    """Document-ordered normalized phrases plus sentence-break positions.

    A break at index ``i`` means a sentence ends right after phrase ``i``.
    """
    phrases: list[str] = []
    breaks: list[int] = []
    start = 0
    while start < len(tagged):
        end = start
        sent_idx = tagged[start].sentence
        while end < len(tagged) and tagged[end].sentence == sent_idx:
            end += 1
        found = _sentence_phrases(tagged[start:end])
        if found:
            phrases.extend(found)
            breaks.append(len(phrases) - 1)
        start = end
    if breaks and breaks[-1] == len(phrases) - 1:
        breaks.pop()
    return phrases, breaks


def extract_phrases(tagged: list[TaggedToken]) -> list[str]:
    """Noun phrases ((ADJ|NOUN)* NOUN) and verb phrases (VERB+), lemmatized."""
    return extract_phrases_with_breaks(tagged)[0]


@dataclass
class Concept:
    node_id: int
    mention: str
    freq: int = 0
    feature: np.ndarray | None = field(default=None, compare=False, repr=False)


@dataclass
class ConceptMap:
    """Per-document graph: concept nodes plus weighted co-occurrence edges."""

    doc_id: str
    concepts: list[Concept]
    edges: dict[tuple[int, int], int] = field(default_factory=dict)
    phrase_sequence: list[int] | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        n = len(self.concepts)
        for (i, j), w in self.edges.items():
            if i == j:
                raise ConceptMapError(f"{self.doc_id}: self-loop on node {i}")
            if not (0 <= i < j < n):
                raise ConceptMapError(f"{self.doc_id}: bad edge ({i}, {j}) for {n} nodes")
            if w < 1:
                raise ConceptMapError(f"{self.doc_id}: edge ({i}, {j}) has weight {w}")

    @property
    def node_count(self) -> int:
        return len(self.concepts)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    @property
    def is_empty(self) -> bool:
        return not self.concepts

    def adjacency(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {c.node_id: [] for c in self.concepts}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return {k: sorted(v) for k, v in adj.items()}

    def mention_freqs(self) -> dict[str, int]:
        return {c.mention: c.freq for c in self.concepts}

    def edge_mention_pairs(self) -> set[tuple[str, str]]:
        pairs = set()
        for i, j in self.edges:
            a, b = self.concepts[i].mention, self.concepts[j].mention
            pairs.add((a, b) if a <= b else (b, a))
        return pairs


def build_concept_map(
    doc_id: str,
    phrases: list[str],
    window: int = DEFAULT_WINDOW,
    breaks: list[int] | None = None,
) -> ConceptMap:
    """Merge repeated mentions into nodes and add +1 edge weight per window pair.

    Windows slide over the phrase sequence one position at a time; within a
    window each unordered pair of distinct concepts counts once.  Sequences
    shorter than `window` form a single whole-sequence window.  When `breaks`
    is given, windows never span a break position.
    """
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    node_ids: dict[str, int] = {}
    concepts: list[Concept] = []
    sequence: list[int] = []
    for phrase in phrases:
        if not phrase:
            raise ConceptMapError(f"{doc_id}: empty phrase in sequence")
        if phrase not in node_ids:
            node_ids[phrase] = len(concepts)
            concepts.append(Concept(node_ids[phrase], phrase))
        nid = node_ids[phrase]
        concepts[nid].freq += 1
        sequence.append(nid)

    segments: list[list[int]] = []
    if breaks:
        prev = 0
        for b in sorted(set(breaks)):
            segments.append(sequence[prev : b + 1])
            prev = b + 1
        segments.append(sequence[prev:])
    else:
        segments.append(sequence)

    edges: dict[tuple[int, int], int] = {}
    for segment in segments:
        length = len(segment)
        if length < 2:
            continue
        w = min(window, length)
        for start in range(length - w + 1):
            distinct = sorted(set(segment[start : start + w]))
            for a_i in range(len(distinct)):
                for b_i in range(a_i + 1, len(distinct)):
                    key = (distinct[a_i], distinct[b_i])
                    edges[key] = edges.get(key, 0) + 1
    return ConceptMap(doc_id, concepts, edges, phrase_sequence=sequence)


def document_to_map(
    doc: Document, window: int = DEFAULT_WINDOW, lexicon: Lexicon | None = None
) -> ConceptMap:
    tagged = tag_tokens(doc.tokens, doc.boundaries, lexicon)
    phrases, breaks = extract_phrases_with_breaks(tagged)
    return build_concept_map(doc.id, phrases, window=window, breaks=breaks)


def tagged_to_map(doc_id: str, tagged: list[TaggedToken], window: int = DEFAULT_WINDOW) -> ConceptMap:
    phrases, breaks = extract_phrases_with_breaks(tagged)
    return build_concept_map(doc_id, phrases, window=window, breaks=breaks)


def map_stats(cmap: ConceptMap) -> dict[str, float]:
    n = cmap.node_count
    e = cmap.edge_count
    density = 2.0 * e / (n * (n - 1)) if n >= 2 else 0.0
    connected = {i for edge in cmap.edges for i in edge}
    isolated = n - len(connected)
    return {
        "node_count": n,
        "edge_count": e,
        "density": density,
        "isolated_nodes": isolated,
    }


# ---------------------------------------------------------------------------
# JSON-lines store
# ---------------------------------------------------------------------------


def map_to_record(cmap: ConceptMap) -> dict:
    return {
        "doc_id": cmap.doc_id,
        "nodes": [
            {"id": c.node_id, "mention": c.mention, "freq": c.freq} for c in cmap.concepts
        ],
        "edges": [[i, j, w] for (i, j), w in sorted(cmap.edges.items())],
    }


def map_from_record(obj: dict) -> ConceptMap:
    try:
        doc_id = obj["doc_id"]
        nodes = obj["nodes"]
        edges = obj["edges"]
    except (KeyError, TypeError):
        raise ConceptMapError("record must carry doc_id, nodes, and edges") from None
    concepts = []
    for k, node in enumerate(nodes):
        if node["id"] != k:
            raise ConceptMapError(f"{doc_id}: node ids must be dense, got {node['id']} at {k}")
        if not node["mention"] or node["freq"] < 1:
            raise ConceptMapError(f"{doc_id}: invalid node {node}")
        concepts.append(Concept(k, node["mention"], int(node["freq"])))
    edge_map: dict[tuple[int, int], int] = {}
    for i, j, w in edges:
        if (i, j) in edge_map:
            raise ConceptMapError(f"{doc_id}: duplicate edge ({i}, {j})")
        edge_map[(int(i), int(j))] = int(w)
    return ConceptMap(doc_id, concepts, edge_map)


def write_map_store(maps: Iterable[ConceptMap], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cmap in maps:
            fh.write(json.dumps(map_to_record(cmap), sort_keys=True))
            fh.write("\n")


def iter_map_store(path: str | Path) -> Iterator[ConceptMap]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConceptMapError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            yield map_from_record(obj)


def read_map_store(path: str | Path) -> dict[str, ConceptMap]:
    maps: dict[str, ConceptMap] = {}
    for cmap in iter_map_store(path):
        if cmap.doc_id in maps:
            raise ConceptMapError(f"duplicate concept map for document {cmap.doc_id}")
        maps[cmap.doc_id] = cmap
    return maps


def iter_pretagged(path: str | Path) -> Iterator[tuple[str, list[TaggedToken]]]:
    """Read pre-tagged records {"doc_id", "tagged": [[token, tag, sentence], ...]}."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ConceptMapError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            try:
                doc_id = obj["doc_id"]
                rows = obj["tagged"]
            except (KeyError, TypeError):
                raise ConceptMapError(f"{path}:{lineno}: expected doc_id and tagged") from None
            tagged = []
            for token, tag, sentence in rows:
                if tag not in TAGS:
                    raise ConceptMapError(f"{path}:{lineno}: unknown tag {tag!r}")
                tagged.append(TaggedToken(str(token).lower(), tag, int(sentence)))
            yield doc_id, tagged
