"""Response decoding: per-step attention reads, fusion, the three-gate copy
cascade, teacher-forced loss, and greedy/beam search.

The final distribution lives on an extended vocabulary: the word vocabulary
plus any out-of-vocabulary surface words present in the dialogue bank, the
knowledge states, or the triple copy words. Vocabulary words and identical
surface words share one key (lowercased exact match), so copy mass and
generation mass for the same word accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .config import ModelConfig
from .corpus import PAD, Vocabulary
from .encoder import (HiddenStates, KnowledgeStates, StateBank, push_turn,
                      set_knowledge)
from .memory_attention import (AttentionTrace, TripleEmbedding,
                               interactive_context, knowledge_hop, multi_hop,
                               triple_attention)
from .model import CNTFModel, TripleVocab, encode_tokens
from .triple_builder import TripleStore


class DecoderError(RuntimeError):
    pass


class ExtendedVocab:
    """Vocabulary ids followed by first-occurrence ids for out-of-vocabulary
    copy-source words. Copy sources keep their surface form; keys are
    lowercased."""

    def __init__(self, vocab: Vocabulary, dialogue_tokens: list[str],
                 kb_tokens: list[str], triple_words: list[str]):
        self.vocab = vocab
        self.oov_words: list[str] = []
        self._oov_ids: dict[str, int] = {}

        def intern(word: str) -> int:
            key = word.lower()
            if key in vocab:
                return vocab.lookup(key)
            if key not in self._oov_ids:
                self._oov_ids[key] = vocab.size + len(self.oov_words)
                self.oov_words.append(word)
            return self._oov_ids[key]

        self.dialogue_ids = torch.tensor(
            [intern(w) for w in dialogue_tokens], dtype=torch.long)
        self.kb_ids = torch.tensor(
            [intern(w) for w in kb_tokens], dtype=torch.long)
        self.triple_ids = torch.tensor(
            [intern(w) for w in triple_words], dtype=torch.long)

    @property
    def size(self) -> int:
        return self.vocab.size + len(self.oov_words)

    def ext_id(self, word: str) -> int:
        key = word.lower()
        if key in self.vocab:
            return self.vocab.lookup(key)
        return self._oov_ids.get(key, self.vocab.unk_id)

    def word_of(self, ext_id: int) -> str:
        if ext_id < self.vocab.size:
            return self.vocab.token_of(ext_id)
        return self.oov_words[ext_id - self.vocab.size]

    def decoder_input_id(self, ext_id: int) -> int:
        """Copy-emitted OOV words feed back into the GRU as unk."""
        return ext_id if ext_id < self.vocab.size else self.vocab.unk_id


# --- distribution algebra -----------------------------------------------------

def fuse(s_t: torch.Tensor, c_d: torch.Tensor, c_k: torch.Tensor,
         c_t: torch.Tensor, fuse_layer) -> torch.Tensor:
    """Generation distribution over the vocabulary from the fused decoder
    state and the three context reads."""
    return torch.softmax(fuse_layer(torch.cat([s_t, c_d, c_k, c_t])), dim=0)


def copy_distribution(alpha: torch.Tensor, ext_ids: torch.Tensor,
                      ext_size: int) -> torch.Tensor:
    """Aggregate attention mass by surface word: P(w) = sum of alpha over
    positions whose word maps to w."""
    dist = torch.zeros(ext_size, dtype=alpha.dtype)
    return dist.index_add(0, ext_ids, alpha)


def gate_cascade(p_g: torch.Tensor, p_d: torch.Tensor, p_kb: torch.Tensor,
                 p_t: torch.Tensor | None, g1: torch.Tensor,
                 g2: torch.Tensor, g3: torch.Tensor) -> torch.Tensor:
    """P_kn = g1 P_g + (1-g1) P_D; P_tp = g2 P_Kb + (1-g2) P_kn;
    P_final = g3 P_T + (1-g3) P_tp. With no triples the last mixture
    degenerates to P_tp."""
    p_kn = g1 * p_g + (1.0 - g1) * p_d
    p_tp = g2 * p_kb + (1.0 - g2) * p_kn
    if p_t is None:
        return p_tp
    return g3 * p_t + (1.0 - g3) * p_tp


@dataclass
class StepDistribution:
    p_final: torch.Tensor  # over the extended vocabulary
    p_g: torch.Tensor  # over the vocabulary
    p_d: torch.Tensor  # over the extended vocabulary (dialogue copy)
    p_kb: torch.Tensor
    p_t: torch.Tensor | None
    g1: torch.Tensor
    g2: torch.Tensor
    g3: torch.Tensor
    ext: ExtendedVocab

    def words(self, dist: torch.Tensor) -> dict[str, float]:
        return {self.ext.word_of(i): float(v)
                for i, v in enumerate(dist.tolist()) if v > 0.0}


@dataclass
class TraceRecord:
    token: str
    g1: float
    g2: float
    g3: float
    source: str
    alpha_d: list[float]
    alpha_kb: list[float]
    alpha_t: list[list]

    def to_json(self) -> dict:
        return {"token": self.token, "g1": self.g1, "g2": self.g2,
                "g3": self.g3, "source": self.source,
                "alpha_d": self.alpha_d, "alpha_kb": self.alpha_kb,
                "alpha_t": self.alpha_t}

    @classmethod
    def from_json(cls, d: dict) -> "TraceRecord":
        return cls(d["token"], d["g1"], d["g2"], d["g3"], d["source"],
                   d["alpha_d"], d["alpha_kb"], d["alpha_t"])


# --- conversation state --------------------------------------------------------

@dataclass
class StepOutput:
    dist: StepDistribution
    alpha_d: torch.Tensor
    alpha_kb: torch.Tensor
    alpha_t: torch.Tensor
    triple_trace: AttentionTrace


class ConversationState:
    """Owns the banks of one conversation and advances them turn by turn.

    Single-writer: one session drives one instance. ``fork`` supports beam
    hypotheses; bank updates reassign tensors, so forks never alias each
    other's mutable state.
    """

    def __init__(self, model: CNTFModel, vocab: Vocabulary,
                 triple_vocab: TripleVocab, store: TripleStore,
                 config: ModelConfig | None = None):
        self.model = model
        self.vocab = vocab
        self.triple_vocab = triple_vocab
        self.store = store
        self.config = config or model.config
        self.bank = StateBank()
        self.kb = KnowledgeStates()
        self.triple_emb: TripleEmbedding | None = None
        self.ext: ExtendedVocab | None = None
        self.s: torch.Tensor | None = None

    def start_turn(self, dialogue_tokens: list[str],
                   knowledge_tokens: list[str]) -> AttentionTrace:
        """Encode the turn inputs, slide the dialogue window, reset the
        knowledge states, and initialize the decoder state with the weighted
        dialogue context."""
        if not dialogue_tokens:
            raise DecoderError("dialogue input must be non-empty")
        kb_tokens = knowledge_tokens or [PAD]
        m = self.model
        h_d = HiddenStates(
            m.encode_dialogue(encode_tokens(self.vocab, dialogue_tokens)),
            dialogue_tokens)
        push_turn(self.bank, h_d, self.config.window)
        h_kb = HiddenStates(
            m.encode_knowledge(encode_tokens(self.vocab, kb_tokens)),
            kb_tokens)
        set_knowledge(self.kb, h_kb)
        self.triple_emb = m.embed_triples(self.store, self.triple_vocab)
        copy_attr = self.config.triple_copy
        triple_words = [getattr(t, copy_attr) for t in self.triple_emb.provenance]
        self.ext = ExtendedVocab(self.vocab, self.bank.tokens,
                                 self.kb.tokens, triple_words)
        wh_d, trace = interactive_context(self.bank, h_kb, m.dialogue_hops)
        self.s = wh_d
        return trace

    def step(self, y_prev_id: int) -> StepOutput:
        """One decode step: advance the GRU, read the three memories, fuse,
        and cascade the copy gates."""
        if self.s is None:
            raise DecoderError("decoder not initialized; call start_turn")
        m = self.model
        emb = m.embedding(torch.tensor(y_prev_id, dtype=torch.long))
        s_t = m.decoder_cell(emb.unsqueeze(0), self.s.unsqueeze(0)).squeeze(0)
        c_d, alpha_d, _, _ = multi_hop(s_t, self.bank, m.dialogue_hops)
        c_k, alpha_kb, _, _ = knowledge_hop(s_t, self.kb, m.knowledge_hops)
        c_t, alpha_t, _, ttrace = triple_attention(
            s_t, self.triple_emb, self.config.triple_hops,
            self.config.triple_topk)

        p_g = fuse(s_t, c_d, c_k, c_t, m.fuse_layer)
        ext = self.ext
        pad = torch.zeros(len(ext.oov_words), dtype=p_g.dtype)
        p_g_ext = torch.cat([p_g, pad])
        p_d = copy_distribution(alpha_d, ext.dialogue_ids, ext.size)
        p_kb = copy_distribution(alpha_kb, ext.kb_ids, ext.size)
        has_triples = len(self.triple_emb) > 0
        p_t = (copy_distribution(alpha_t, ext.triple_ids, ext.size)
               if has_triples else None)

        g1 = torch.sigmoid(m.gate_dialogue(torch.cat([s_t, c_d])))[0]
        g2 = torch.sigmoid(m.gate_knowledge(torch.cat([s_t, c_k])))[0]
        g3 = torch.sigmoid(m.gate_triple(torch.cat([s_t, c_t])))[0]
        p_final = gate_cascade(p_g_ext, p_d, p_kb, p_t, g1, g2, g3)

        self.s = s_t
        dist = StepDistribution(p_final, p_g, p_d, p_kb, p_t, g1, g2, g3, ext)
        return StepOutput(dist, alpha_d, alpha_kb, alpha_t, ttrace)

    def fork(self) -> "ConversationState":
        clone = ConversationState(self.model, self.vocab, self.triple_vocab,
                                  self.store, self.config)
        clone.bank = StateBank(self.bank.d_s, self.bank.d_h,
                               list(self.bank.tokens),
                               list(self.bank.segment_lengths),
                               list(self.bank.turn_ids),
                               self.bank._next_turn)
        clone.kb = KnowledgeStates(self.kb.kb_s, self.kb.kb_h,
                                   list(self.kb.tokens))
        clone.triple_emb = self.triple_emb
        clone.ext = self.ext
        clone.s = self.s
        return clone

    def adopt(self, other: "ConversationState") -> None:
        """Take over another fork's banks and decoder state (the winning
        beam hypothesis carries the session forward)."""
        self.bank = other.bank
        self.kb = other.kb
        self.s = other.s


def make_trace_record(out: StepOutput, emitted_ext_id: int) -> TraceRecord:
    dist = out.dist
    ext = dist.ext
    g1 = dist.g1.detach().item()
    g2 = dist.g2.detach().item()
    g3 = dist.g3.detach().item()
    y = emitted_ext_id
    def val(t):
        return t[y].detach().item()
    contrib = {
        "vocab": (1 - g3) * (1 - g2) * g1 * val(dist.p_g) if y < ext.vocab.size else 0.0,
        "dialogue": (1 - g3) * (1 - g2) * (1 - g1) * val(dist.p_d),
        "knowledge": (1 - g3) * g2 * val(dist.p_kb),
        "triple": g3 * val(dist.p_t) if dist.p_t is not None else 0.0,
    }
    source = max(contrib, key=contrib.get)
    alpha_t = (out.triple_trace.hops[-1].top_triples
               if out.triple_trace.hops else [])
    return TraceRecord(ext.word_of(y), g1, g2, g3, source,
                       out.alpha_d.detach().tolist(),
                       out.alpha_kb.detach().tolist(),
                       alpha_t or [])


# --- loss ----------------------------------------------------------------------

def sequence_loss(p_finals: list[torch.Tensor],
                  target_ext_ids: list[int]) -> torch.Tensor:
    """Mean negative log-likelihood of the target under the final
    distributions; one distribution per target position."""
    if not target_ext_ids:
        raise DecoderError("target must be non-empty")
    if len(p_finals) != len(target_ext_ids):
        raise DecoderError("one distribution per target token required")
    nll = [-torch.log(p[y]) for p, y in zip(p_finals, target_ext_ids)]
    return torch.stack(nll).mean()


def teacher_force(conv: ConversationState, target_tokens: list[str]
                  ) -> tuple[torch.Tensor, int]:
    """Run the decoder over the gold target (terminated by eos) and return
    the summed NLL and token count."""
    vocab = conv.vocab
    ext = conv.ext
    inputs = [vocab.bos_id] + [vocab.lookup(t.lower()) for t in target_tokens]
    targets = [ext.ext_id(t) for t in target_tokens] + [vocab.eos_id]
    nll_sum = None
    for y_prev, y_gold in zip(inputs, targets):
        out = conv.step(y_prev)
        term = -torch.log(out.dist.p_final[y_gold])
        nll_sum = term if nll_sum is None else nll_sum + term
    return nll_sum, len(targets)


# --- decoding -------------------------------------------------------------------

def greedy_decode(conv: ConversationState, max_len: int = 30
                  ) -> tuple[list[str], list[TraceRecord]]:
    tokens: list[str] = []
    records: list[TraceRecord] = []
    y_prev = conv.vocab.bos_id
    for _ in range(max_len):
        out = conv.step(y_prev)
        y = int(torch.argmax(out.dist.p_final).item())
        if y == conv.vocab.eos_id:
            break
        tokens.append(conv.ext.word_of(y))
        records.append(make_trace_record(out, y))
        y_prev = conv.ext.decoder_input_id(y)
    return tokens, records


@dataclass
class BeamHypothesis:
    ext_ids: list[int] = field(default_factory=list)
    log_prob: float = 0.0
    finished: bool = False
    conv: ConversationState | None = None
    records: list[TraceRecord] = field(default_factory=list)
    _post_step_conv: ConversationState | None = None

    @property
    def normalized(self) -> float:
        return self.log_prob / max(1, len(self.ext_ids))


def beam_decode(conv: ConversationState, width: int = 4, max_len: int = 30
                ) -> tuple[list[str], list[TraceRecord]]:
    """Length-normalized beam search over the final distribution. Search
    stops once no live hypothesis can normalize above the best finished one
    (log-probs only decrease, so log_prob / max_len bounds any extension).
    The winning hypothesis's banks carry the session forward."""
    if width < 1:
        raise DecoderError("beam width must be >= 1")
    eos = conv.vocab.eos_id
    beam = [BeamHypothesis(conv=conv.fork())]
    finished: list[BeamHypothesis] = []
    for _ in range(max_len):
        candidates: list[BeamHypothesis] = []
        for hyp in beam:
            y_prev = (conv.ext.decoder_input_id(hyp.ext_ids[-1])
                      if hyp.ext_ids else conv.vocab.bos_id)
            out = hyp.conv.step(y_prev)
            log_p = torch.log(out.dist.p_final)
            top = torch.topk(log_p, min(width, log_p.shape[0]))
            for lp, y in zip(top.values.tolist(), top.indices.tolist()):
                records = (list(hyp.records) if y == eos
                           else hyp.records + [make_trace_record(out, y)])
                cand = BeamHypothesis(
                    hyp.ext_ids + [y], hyp.log_prob + lp,
                    finished=(y == eos), records=records,
                    _post_step_conv=hyp.conv)
                candidates.append(cand)
        candidates.sort(key=lambda h: h.log_prob, reverse=True)
        beam = []
        for cand in candidates:
            if cand.finished:
                cand.conv = cand._post_step_conv
                finished.append(cand)
            elif len(beam) < width:
                cand.conv = cand._post_step_conv.fork()
                beam.append(cand)
        if not beam:
            break
        if finished:
            best_finished = max(h.normalized for h in finished)
            live_bound = max(h.log_prob for h in beam) / max_len
            if live_bound <= best_finished:
                break
    pool = finished if finished else beam
    best = max(pool, key=lambda h: h.normalized)
    conv.adopt(best.conv)
    words = [conv.ext.word_of(y) for y in best.ext_ids if y != eos]
    return words, best.records
