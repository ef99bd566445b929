"""Per-dialogue knowledge triples.

Two sources feed a dialogue's triple store: commonsense triples from a
concept lexicon filtered against the vocabulary, and named-entity triples
built after rewriting the dialogue with resolved coreference mentions.
Entity/coreference annotation is pluggable: a deterministic rule-based
annotator works offline, and a file-based annotator reads precomputed
annotations.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Dialogue, Turn, Vocabulary, tokenize

RELATED_TO = "RelatedTo"

SOURCE_CONCEPTNET = "conceptnet"
SOURCE_ENTITY_PAIR = "entity_pair"
SOURCE_ENTITY_CONCEPT = "entity_concept"

# Priority used when capping a dialogue's store.
_SOURCE_RANK = {SOURCE_ENTITY_PAIR: 0, SOURCE_ENTITY_CONCEPT: 1,
                SOURCE_CONCEPTNET: 2}

TRIPLE_CAP = 400


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class Triple:
    head: str
    relation: str
    tail: str
    source: str = field(default=SOURCE_CONCEPTNET, compare=False)


@dataclass
class TripleStore:
    triples: list[Triple] = field(default_factory=list)

    def __post_init__(self):
        # Deduplicate on (head, relation, tail) and keep deterministic order.
        seen = {}
        for t in self.triples:
            seen.setdefault((t.head, t.relation, t.tail), t)
        self.triples = sorted(seen.values())

    def __len__(self):
        return len(self.triples)

    def __iter__(self):
        return iter(self.triples)

    @property
    def entities(self) -> set[str]:
        return {t.head for t in self.triples} | {t.tail for t in self.triples}

    @property
    def relations(self) -> set[str]:
        return {t.relation for t in self.triples}


@dataclass
class CorefCluster:
    representative: str
    mentions: list[tuple[int, int, int]]  # (turn_index, char_start, char_end)


@dataclass
class CorefAnnotation:
    clusters: list[CorefCluster] = field(default_factory=list)


@dataclass
class EntityAnnotation:
    spans: list[tuple[int, int, int, str]]  # (turn, start, end, surface)

    @property
    def surfaces(self) -> set[str]:
        return {s for _, _, _, s in self.spans}


@dataclass
class ConceptLexicon:
    raw_triples: list[Triple]
    concept_words: set[str] = field(default_factory=set)

    def __post_init__(self):
        for t in self.raw_triples:
            self.concept_words.add(t.head.lower())
            self.concept_words.add(t.tail.lower())

    @classmethod
    def load_tsv(cls, path) -> "ConceptLexicon":
        triples = []
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 3:
                    raise AnnotationError(
                        f"{path} line {lineno}: expected 3 tab-separated "
                        f"fields, got {len(parts)}")
                head, rel, tail = parts
                triples.append(Triple(head, rel, tail, SOURCE_CONCEPTNET))
        return cls(triples)


# --- coreference rewrite ------------------------------------------------------

def resolve_and_rewrite(dialogue: Dialogue, coref: CorefAnnotation) -> Dialogue:
    """Replace every non-representative mention with its cluster's
    representative string. Replacements are applied right-to-left within each
    turn so earlier offsets stay valid."""
    texts = [t.text for t in dialogue.turns]
    by_turn: dict[int, list[tuple[int, int, str, str]]] = {}
    for ci, cluster in enumerate(coref.clusters):
        for (turn, start, end) in cluster.mentions:
            if not (0 <= turn < len(texts)):
                raise AnnotationError(
                    f"cluster {ci} ({cluster.representative!r}): turn {turn} "
                    "out of range")
            if not (0 <= start < end <= len(texts[turn])):
                raise AnnotationError(
                    f"cluster {ci} ({cluster.representative!r}): span "
                    f"({turn}, {start}, {end}) outside turn text")
            by_turn.setdefault(turn, []).append(
                (start, end, cluster.representative, f"cluster {ci}"))
    for turn, spans in by_turn.items():
        text = texts[turn]
        for start, end, rep, _ in sorted(spans, reverse=True):
            if text[start:end] != rep:
                text = text[:start] + rep + text[end:]
        texts[turn] = text
    new_turns = [Turn(t.speaker, txt, list(t.knowledge_sentences))
                 for t, txt in zip(dialogue.turns, texts)]
    return Dialogue(dialogue.dialogue_id, new_turns, dialogue.topic)


# --- annotators ---------------------------------------------------------------

_CASED_TOKEN_RE = re.compile(r"[\w']+")
_CONNECTORS = {"of", "the", "and", "a", "an", "for", "in", "on", "de", "la"}
_PRONOUNS = {"I", "I'm", "I've", "I'll", "I'd"}
_SENTENCE_BREAK = re.compile(r"[.!?;:]")


class RuleBasedAnnotator:
    """Deterministic fallback annotator.

    Entities are maximal spans holding at least two capitalized tokens,
    optionally joined by runs of lowercase connector words, never crossing
    sentence punctuation. Pronoun linking is disabled, so coreference
    clusters are always empty.
    """

    def coref(self, dialogue: Dialogue) -> CorefAnnotation:
        return CorefAnnotation([])

    def entities(self, dialogue: Dialogue) -> EntityAnnotation:
        spans = []
        for ti, turn in enumerate(dialogue.turns):
            spans.extend(self._turn_entities(ti, turn.text))
        return EntityAnnotation(spans)

    @staticmethod
    def _is_candidate(word: str) -> bool:
        return word[0].isupper() and word not in _PRONOUNS

    def _turn_entities(self, turn_index: int, text: str):
        tokens = [(m.group(), m.start(), m.end())
                  for m in _CASED_TOKEN_RE.finditer(text)]

        def breaks_between(a: int, b: int) -> bool:
            return bool(_SENTENCE_BREAK.search(text[tokens[a][2]:
                                                    tokens[b][1]]))

        spans = []
        i = 0
        while i < len(tokens):
            if not self._is_candidate(tokens[i][0]):
                i += 1
                continue
            j = i
            n_caps = 1
            while True:
                k = j + 1
                while k < len(tokens) and tokens[k][0] in _CONNECTORS:
                    k += 1
                if k >= len(tokens) or not self._is_candidate(tokens[k][0]) \
                        or breaks_between(j, k):
                    break
                j = k
                n_caps += 1
            if n_caps >= 2:
                start, end = tokens[i][1], tokens[j][2]
                spans.append((turn_index, start, end, text[start:end]))
            i = j + 1
        return spans


class FileAnnotator:
    """Reads precomputed per-dialogue annotations.

    Layout: one ``<dialogue_id>.json`` per dialogue in a directory, matching

        {"dialogue_id": str,
         "clusters": [{"representative": str, "mentions": [[turn, start, end], ...]}],
         "entities": [[turn, start, end, surface], ...]}
    """

    def __init__(self, directory):
        self.directory = Path(directory)

    def _load(self, dialogue_id: str) -> dict:
        path = self.directory / f"{dialogue_id}.json"
        if not path.exists():
            raise AnnotationError(f"no annotation file for {dialogue_id!r}")
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)

    def coref(self, dialogue: Dialogue) -> CorefAnnotation:
        obj = self._load(dialogue.dialogue_id)
        clusters = [
            CorefCluster(c["representative"],
                         [tuple(m) for m in c["mentions"]])
            for c in obj.get("clusters", [])
        ]
        return CorefAnnotation(clusters)

    def entities(self, dialogue: Dialogue) -> EntityAnnotation:
        obj = self._load(dialogue.dialogue_id)
        return EntityAnnotation([tuple(e) for e in obj.get("entities", [])])


# --- triple construction ------------------------------------------------------

def build_entity_triples(entities: set[str],
                         concepts: set[str]) -> set[Triple]:
    """RelatedTo edges between every entity pair and every (entity, concept)
    pair. Entity pairs are canonicalized head < tail lexicographically."""
    triples = set()
    ordered = sorted(entities)
    for i, a in enumerate(ordered):
        for b in ordered[i + 1:]:
            triples.add(Triple(a, RELATED_TO, b, SOURCE_ENTITY_PAIR))
    for ent in ordered:
        for concept in sorted(concepts):
            if ent != concept:
                triples.add(Triple(ent, RELATED_TO, concept,
                                   SOURCE_ENTITY_CONCEPT))
    return triples


def filter_conceptnet(lexicon: ConceptLexicon,
                      vocab: Vocabulary) -> TripleStore:
    """Keep lexicon triples whose head and tail are single in-vocabulary
    tokens; multi-word entities are dropped."""
    kept = []
    for t in lexicon.raw_triples:
        head, tail = t.head.lower(), t.tail.lower()
        if " " in head or " " in tail or "_" in t.head or "_" in t.tail:
            continue
        if head == tail:
            continue
        if head in vocab and tail in vocab:
            kept.append(Triple(head, t.relation, tail, SOURCE_CONCEPTNET))
    return TripleStore(kept)


def cap_store(store: TripleStore, cap: int = TRIPLE_CAP) -> TripleStore:
    """Fixed-size attention needs a bounded store: keep up to ``cap`` triples
    by source priority (entity_pair > entity_concept > conceptnet), then
    lexical order."""
    if len(store) <= cap:
        return store
    ranked = sorted(store.triples,
                    key=lambda t: (_SOURCE_RANK[t.source], t.head,
                                   t.relation, t.tail))
    return TripleStore(ranked[:cap])


def collect_dialogue_triples(dialogue: Dialogue,
                             coref: CorefAnnotation,
                             entity_annotator,
                             lexicon: ConceptLexicon,
                             vocab: Vocabulary,
                             use_rewritten_concepts: bool = True,
                             match_tails: bool = False,
                             cap: int = TRIPLE_CAP) -> TripleStore:
    """Union of (a) filtered lexicon triples whose head occurs as a dialogue
    word and (b) entity triples over the coreference-rewritten dialogue."""
    rewritten = resolve_and_rewrite(dialogue, coref)
    concept_source = rewritten if use_rewritten_concepts else dialogue
    words = set()
    for turn in concept_source.turns:
        words.update(turn.tokens)

    filtered = filter_conceptnet(lexicon, vocab)
    conceptnet_part = [
        t for t in filtered
        if t.head in words or (match_tails and t.tail in words)
    ]

    entities = entity_annotator.entities(rewritten).surfaces
    concepts = words & lexicon.concept_words
    entity_part = build_entity_triples(entities, concepts)

    return cap_store(TripleStore(conceptnet_part + list(entity_part)), cap)


# --- per-dialogue store serialization ------------------------------------------

def save_dialogue_stores(stores: dict[str, TripleStore], path) -> None:
    """Four-column TSV: dialogue_id, head, relation, tail."""
    with open(path, "w", encoding="utf-8") as f:
        for did in sorted(stores):
            for t in stores[did]:
                f.write(f"{did}\t{t.head}\t{t.relation}\t{t.tail}\n")


def load_dialogue_stores(path) -> dict[str, TripleStore]:
    by_id: dict[str, list[Triple]] = {}
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise AnnotationError(
                    f"{path} line {lineno}: expected 4 tab-separated fields")
            did, head, rel, tail = parts
            by_id.setdefault(did, []).append(Triple(head, rel, tail))
    return {did: TripleStore(ts) for did, ts in by_id.items()}
