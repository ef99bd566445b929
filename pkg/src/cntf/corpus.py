"""Corpus ingestion: dialogues, knowledge selection, vocabulary, training examples.

A corpus is a JSONL file with one dialogue per line:

    {"dialogue_id": str, "topic": str,
     "turns": [{"speaker": "agent1"|"agent2", "text": str, "knowledge": [str, ...]}]}

Consecutive utterances by the same speaker are merged into a single turn on
load, and dialogues must alternate speakers starting with agent1.
"""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

AGENT1 = "agent1"
AGENT2 = "agent2"

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)

DIALOGUE_BUDGET = 200
KNOWLEDGE_BUDGET = 400

_TOKEN_RE = re.compile(r"[\w']+")


class CorpusError(ValueError):
    pass


def tokenize(text: str) -> list[str]:
    """Lowercase word tokenizer; punctuation acts as a separator."""
    return _TOKEN_RE.findall(text.lower())


def detokenize(tokens: list[str]) -> str:
    return " ".join(tokens)


@dataclass
class Turn:
    speaker: str
    text: str
    knowledge_sentences: list[str] = field(default_factory=list)

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)


@dataclass
class Dialogue:
    dialogue_id: str
    turns: list[Turn]
    topic: str = ""

    def validate(self):
        if not self.turns:
            raise CorpusError(f"dialogue {self.dialogue_id!r} has no turns")
        if self.turns[0].speaker != AGENT1:
            raise CorpusError(
                f"dialogue {self.dialogue_id!r} must start with {AGENT1}")
        for prev, cur in zip(self.turns, self.turns[1:]):
            if prev.speaker == cur.speaker:
                raise CorpusError(
                    f"dialogue {self.dialogue_id!r} has consecutive "
                    f"{cur.speaker} turns")
        for i, t in enumerate(self.turns):
            if not t.tokens:
                raise CorpusError(
                    f"dialogue {self.dialogue_id!r} turn {i} is empty "
                    "after tokenization")


@dataclass
class CorpusSplit:
    name: str
    dialogues: list[Dialogue]


def _parse_dialogue(obj: dict, lineno: int) -> Dialogue:
    try:
        raw_turns = obj["turns"]
        did = obj["dialogue_id"]
    except KeyError as e:
        raise CorpusError(f"line {lineno}: missing field {e.args[0]!r}")
    merged: list[Turn] = []
    for rt in raw_turns:
        speaker = rt.get("speaker")
        if speaker not in (AGENT1, AGENT2):
            raise CorpusError(f"line {lineno}: bad speaker {speaker!r}")
        text = rt.get("text", "")
        knowledge = list(rt.get("knowledge", []))
        if merged and merged[-1].speaker == speaker:
            # Subsequent utterances by the same person count as a single one.
            prev = merged[-1]
            prev.text = prev.text.rstrip() + " " + text.lstrip()
            prev.knowledge_sentences.extend(knowledge)
        else:
            merged.append(Turn(speaker, text, knowledge))
    dlg = Dialogue(did, merged, obj.get("topic", ""))
    dlg.validate()
    return dlg


def load_corpus(path, name: str = "train") -> CorpusSplit:
    path = Path(path)
    dialogues = []
    seen_ids = set()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path.name} line {lineno}: {e.msg}")
            dlg = _parse_dialogue(obj, lineno)
            if dlg.dialogue_id in seen_ids:
                raise CorpusError(
                    f"line {lineno}: duplicate dialogue_id {dlg.dialogue_id!r}")
            seen_ids.add(dlg.dialogue_id)
            dialogues.append(dlg)
    if not dialogues:
        raise CorpusError(f"{path} contains no dialogues")
    return CorpusSplit(name, dialogues)


def serialize_corpus(split: CorpusSplit) -> str:
    lines = []
    for d in split.dialogues:
        obj = {
            "dialogue_id": d.dialogue_id,
            "topic": d.topic,
            "turns": [
                {"speaker": t.speaker, "text": t.text,
                 "knowledge": t.knowledge_sentences}
                for t in d.turns
            ],
        }
        lines.append(json.dumps(obj, ensure_ascii=False))
    return "\n".join(lines) + "\n"


def save_corpus(split: CorpusSplit, path) -> None:
    Path(path).write_text(serialize_corpus(split), encoding="utf-8")


# --- knowledge selection -----------------------------------------------------

def _idf(n_docs: int, df_count: int) -> float:
    # Smoothed only where needed: terms absent from every candidate (df = 0)
    # count as df = 1 so query-only terms stay finite.
    return math.log(n_docs / max(df_count, 1))


def _tfidf_vectors(sentences: list[list[str]]) -> tuple[list[dict], Counter]:
    """TF-IDF with the candidate sentences as the document collection;
    tf = raw count, idf = ln(N / df)."""
    n_docs = len(sentences)
    df = Counter()
    for sent in sentences:
        df.update(set(sent))
    vecs = []
    for sent in sentences:
        counts = Counter(sent)
        vecs.append({t: c * _idf(n_docs, df[t]) for t, c in counts.items()})
    return vecs, df


def _cosine_sparse(a: dict, b: dict) -> float:
    dot = sum(v * b.get(k, 0.0) for k, v in a.items())
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def select_knowledge(utterance: list[str], sentences: list[list[str]],
                     k: int) -> list[list[str]]:
    """Top-k sentences by TF-IDF cosine similarity to the utterance.

    Descending score; ties keep original sentence order. Empty candidate
    list yields an empty result.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if not sentences:
        return []
    vecs, df = _tfidf_vectors(sentences)
    n_docs = len(sentences)
    q_counts = Counter(utterance)
    q_vec = {t: c * _idf(n_docs, df[t]) for t, c in q_counts.items()}
    scored = [(_cosine_sparse(q_vec, v), i) for i, v in enumerate(vecs)]
    scored.sort(key=lambda si: (-si[0], si[1]))
    return [sentences[i] for _, i in scored[:k]]


# --- vocabulary ---------------------------------------------------------------

class Vocabulary:
    def __init__(self, tokens: list[str]):
        self.tokens = list(SPECIALS) + list(tokens)
        if len(set(self.tokens)) != len(self.tokens):
            raise CorpusError("vocabulary contains duplicate tokens")
        self._ids = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id, self.bos_id, self.eos_id, self.unk_id = 0, 1, 2, 3

    @property
    def size(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def lookup(self, token: str) -> int:
        return self._ids.get(token, self.unk_id)

    def token_of(self, idx: int) -> str:
        return self.tokens[idx]

    def encode(self, tokens: list[str]) -> list[int]:
        return [self.lookup(t) for t in tokens]

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for t in self.tokens[len(SPECIALS):]:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])


def build_vocab(split: CorpusSplit, max_size: int) -> Vocabulary:
    """Most frequent tokens across dialogue text and knowledge sentences.

    The cap includes the four specials; ties break lexicographically so the
    result is independent of dialogue order.
    """
    if max_size <= len(SPECIALS):
        raise ValueError(f"max_size must exceed {len(SPECIALS)}")
    counts = Counter()
    for d in split.dialogues:
        for t in d.turns:
            counts.update(t.tokens)
            for sent in t.knowledge_sentences:
                counts.update(tokenize(sent))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    keep = [tok for tok, _ in ranked[: max_size - len(SPECIALS)]]
    return Vocabulary(keep)


# --- training examples --------------------------------------------------------

@dataclass
class TrainingExample:
    dialogue_input: list[str]
    knowledge_input: list[str]
    target: list[str]
    turn_index: int


def _knowledge_tokens(query: list[str], sentences: list[list[str]],
                      selector_k: int, budget: int) -> list[str]:
    total = sum(len(s) for s in sentences)
    chosen = sentences
    if total > budget:
        chosen = select_knowledge(query, sentences, selector_k)
    flat = [tok for sent in chosen for tok in sent]
    return flat[:budget]


def make_training_examples(dialogue: Dialogue, selector_k: int = 2,
                           dialogue_budget: int = DIALOGUE_BUDGET,
                           knowledge_budget: int = KNOWLEDGE_BUDGET,
                           ) -> list[TrainingExample]:
    """One example per agent2 utterance.

    The dialogue input for exchange j>1 concatenates the previous agent2
    reply with the current agent1 utterance; exchange 1 uses the opening
    utterance alone. Knowledge pools the same two turns' sentences, passes
    through select_knowledge when over budget, and is head-truncated; the
    dialogue input keeps its most recent tokens.
    """
    dialogue.validate()
    examples = []
    turns = dialogue.turns
    for i, turn in enumerate(turns):
        if turn.speaker != AGENT2:
            continue
        cur = turns[i - 1]  # agent1 utterance of this exchange
        if i >= 2:
            prev_reply = turns[i - 2]
            dlg_tokens = prev_reply.tokens + cur.tokens
            kb_sents = [tokenize(s) for s in prev_reply.knowledge_sentences]
            kb_sents += [tokenize(s) for s in cur.knowledge_sentences]
        else:
            dlg_tokens = cur.tokens
            kb_sents = [tokenize(s) for s in cur.knowledge_sentences]
        kb_sents = [s for s in kb_sents if s]
        examples.append(TrainingExample(
            dialogue_input=dlg_tokens[-dialogue_budget:],
            knowledge_input=_knowledge_tokens(cur.tokens, kb_sents,
                                              selector_k, knowledge_budget),
            target=turn.tokens,
            turn_index=(i - 1) // 2,
        ))
    return examples
