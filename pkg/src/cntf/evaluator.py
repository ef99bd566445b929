"""Automatic evaluation: perplexity, unigram F1, BLEU-4, and the three
word-embedding metrics (Embedding Average, Vector Extrema, Greedy Matching).

F1 and BLEU normalize tokens to lowercase with punctuation stripped and
compare multisets. Embedding metrics skip out-of-vocabulary tokens; a pair
where either side has no in-vocabulary token is skipped and counted.
"""

from __future__ import annotations

import json
import math
import string
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

BLEU_EPSILON = 0.1

_PUNCT_TABLE = str.maketrans("", "", string.punctuation)


class EvaluationError(ValueError):
    pass


def normalize_tokens(tokens: list[str]) -> list[str]:
    out = []
    for t in tokens:
        t = t.lower().translate(_PUNCT_TABLE)
        if t:
            out.append(t)
    return out


# --- perplexity -----------------------------------------------------------------

def perplexity(per_token_nll: list[float]) -> float:
    """exp of the mean per-token negative log-likelihood."""
    if not per_token_nll:
        raise EvaluationError("perplexity needs at least one token")
    return math.exp(sum(per_token_nll) / len(per_token_nll))


def model_perplexity(model, split, stores, vocab, triple_vocab) -> float:
    """Teacher-forced perplexity of gold targets under the final
    distribution."""
    from .trainer import split_nll
    total, count = split_nll(model, split, stores, vocab, triple_vocab)
    if count == 0:
        raise EvaluationError("no target tokens to score")
    return math.exp(total / count)


# --- unigram F1 -----------------------------------------------------------------

def unigram_f1(hypothesis: list[str], reference: list[str]) -> float:
    hyp = normalize_tokens(hypothesis)
    ref = normalize_tokens(reference)
    if not hyp and not ref:
        return 1.0
    if not hyp or not ref:
        return 0.0
    overlap = sum((Counter(hyp) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(hyp)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


# --- BLEU -----------------------------------------------------------------------

def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def corpus_bleu4(pairs: list[tuple[list[str], list[str]]]) -> float:
    """Corpus-level BLEU with 1..4-gram clipped precisions, brevity penalty,
    and epsilon smoothing on zero numerators."""
    matched = [0] * 4
    total = [0] * 4
    hyp_len = ref_len = 0
    for hypothesis, reference in pairs:
        hyp = normalize_tokens(hypothesis)
        ref = normalize_tokens(reference)
        hyp_len += len(hyp)
        ref_len += len(ref)
        for n in range(1, 5):
            h_counts = _ngram_counts(hyp, n)
            r_counts = _ngram_counts(ref, n)
            matched[n - 1] += sum((h_counts & r_counts).values())
            total[n - 1] += max(0, len(hyp) - n + 1)
    if hyp_len == 0:
        return 0.0
    log_precisions = []
    for m, t in zip(matched, total):
        if t == 0:
            return 0.0
        num = m if m > 0 else BLEU_EPSILON
        log_precisions.append(math.log(num / t))
    bp = 1.0 if hyp_len > ref_len else math.exp(1.0 - ref_len / hyp_len)
    return bp * math.exp(sum(log_precisions) / 4.0)


def bleu4(hypothesis: list[str], reference: list[str]) -> float:
    return corpus_bleu4([(hypothesis, reference)])


# --- embedding metrics ----------------------------------------------------------

@dataclass
class WordVectors:
    vectors: dict[str, np.ndarray]
    dim: int

    def __contains__(self, token: str) -> bool:
        return token in self.vectors

    def get(self, token: str) -> np.ndarray:
        return self.vectors[token]

    @classmethod
    def load(cls, path) -> "WordVectors":
        vectors = {}
        dim = None
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                parts = line.rstrip("\n").split(" ")
                if len(parts) < 2:
                    continue
                vec = np.array([float(x) for x in parts[1:]])
                if dim is None:
                    dim = len(vec)
                elif len(vec) != dim:
                    raise EvaluationError(
                        f"{path} line {lineno}: vector of length {len(vec)}, "
                        f"expected {dim}")
                vectors[parts[0]] = vec
        if not vectors:
            raise EvaluationError(f"{path} holds no vectors")
        return cls(vectors, dim)


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _extrema_vector(rows: np.ndarray) -> np.ndarray:
    top = rows.max(axis=0)
    bottom = rows.min(axis=0)
    return np.where(np.abs(bottom) > top, bottom, top)


def embedding_metrics(hypothesis: list[str], reference: list[str],
                      vectors: WordVectors
                      ) -> tuple[float, float, float] | None:
    """(Embedding Average, Vector Extrema, Greedy Matching) for one pair, or
    None when either side has no in-vocabulary token."""
    h_rows = np.array([vectors.get(t) for t in hypothesis if t in vectors])
    r_rows = np.array([vectors.get(t) for t in reference if t in vectors])
    if h_rows.size == 0 or r_rows.size == 0:
        return None
    avg = _cosine(h_rows.mean(axis=0), r_rows.mean(axis=0))
    extrema = _cosine(_extrema_vector(h_rows), _extrema_vector(r_rows))

    def directed(a: np.ndarray, b: np.ndarray) -> float:
        an = a / np.linalg.norm(a, axis=1, keepdims=True).clip(min=1e-12)
        bn = b / np.linalg.norm(b, axis=1, keepdims=True).clip(min=1e-12)
        return float((an @ bn.T).max(axis=1).mean())

    greedy = (directed(h_rows, r_rows) + directed(r_rows, h_rows)) / 2.0
    return avg, extrema, greedy


# --- report ----------------------------------------------------------------------

@dataclass
class MetricReport:
    ppl: float | None
    f1: float
    bleu4: float
    emb_avg: float | None
    extrema: float | None
    greedy: float | None
    pairs_scored: int = 0
    pairs_skipped_embedding: int = 0

    def to_json(self) -> dict:
        def clamp(x):
            return None if x is None else min(1.0, max(0.0, x))
        return {
            "ppl": self.ppl,
            "f1": clamp(self.f1),
            "bleu4": clamp(self.bleu4),
            "emb_avg": clamp(self.emb_avg),
            "extrema": clamp(self.extrema),
            "greedy": clamp(self.greedy),
            "pairs_scored": self.pairs_scored,
            "pairs_skipped_embedding": self.pairs_skipped_embedding,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2)


def evaluate_pairs(pairs: list[tuple[list[str], list[str]]],
                   vectors: WordVectors | None = None,
                   ppl: float | None = None) -> MetricReport:
    if not pairs:
        raise EvaluationError("no hypothesis/reference pairs")
    f1 = sum(unigram_f1(h, r) for h, r in pairs) / len(pairs)
    bleu = corpus_bleu4(pairs)
    avg = ext = gre = None
    skipped = 0
    if vectors is not None:
        scores = []
        for h, r in pairs:
            res = embedding_metrics(h, r, vectors)
            if res is None:
                skipped += 1
            else:
                scores.append(res)
        if scores:
            avg = sum(s[0] for s in scores) / len(scores)
            ext = sum(s[1] for s in scores) / len(scores)
            gre = sum(s[2] for s in scores) / len(scores)
    return MetricReport(ppl, f1, bleu, avg, ext, gre,
                        pairs_scored=len(pairs),
                        pairs_skipped_embedding=skipped)
