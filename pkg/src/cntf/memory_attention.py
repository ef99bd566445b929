"""Multi-hop attention over state banks and triple embeddings.

Each hop over a bank scores positions with a tanh-bilinear form on the
mutable state D_S, reads the context from the fixed state D_H, and then
applies forget/add updates to D_S driven by an update GRU. The triple module
attends by plain dot product and adds the weighted context back into its
query between hops. The query stays fixed across bank hops; only the triple
module updates it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import torch
from torch import nn

from .encoder import HiddenStates, KnowledgeStates, StateBank


class AttentionError(ValueError):
    pass


class HopParams(nn.Module):
    """Learnable parameters of one attention hop (distinct per hop)."""

    def __init__(self, hidden_dim: int, dtype=torch.float32):
        super().__init__()
        self.v1 = nn.Parameter(torch.empty(hidden_dim, dtype=dtype))
        self.w1 = nn.Parameter(torch.empty(hidden_dim, hidden_dim, dtype=dtype))
        self.w2 = nn.Parameter(torch.empty(hidden_dim, hidden_dim, dtype=dtype))
        self.w3 = nn.Parameter(torch.empty(hidden_dim, hidden_dim, dtype=dtype))
        self.w4 = nn.Parameter(torch.empty(hidden_dim, hidden_dim, dtype=dtype))
        self.update_gru = nn.GRUCell(hidden_dim, hidden_dim, dtype=dtype)
        for p in (self.v1, self.w1, self.w2, self.w3, self.w4):
            nn.init.uniform_(p, -0.1, 0.1)


def make_hop_stack(hidden_dim: int, hops: int,
                   dtype=torch.float32) -> nn.ModuleList:
    return nn.ModuleList(HopParams(hidden_dim, dtype=dtype)
                         for _ in range(hops))


@dataclass
class HopTrace:
    alpha: list[float]
    context_norm: float
    query_norm: float | None = None
    top_triples: list[list] | None = None

    def to_json(self) -> dict:
        d = {"alpha": self.alpha, "context_norm": self.context_norm}
        if self.query_norm is not None:
            d["query_norm"] = self.query_norm
        if self.top_triples is not None:
            d["top_triples"] = self.top_triples
        return d


@dataclass
class AttentionTrace:
    hops: list[HopTrace] = field(default_factory=list)

    def to_json(self) -> list[dict]:
        return [h.to_json() for h in self.hops]

    def dumps(self) -> str:
        return json.dumps(self.to_json())

    @property
    def last_alpha(self) -> list[float]:
        return self.hops[-1].alpha if self.hops else []


def attend_hop(q: torch.Tensor, d_s: torch.Tensor, d_h: torch.Tensor,
               hop: HopParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Score positions e_j = v1' tanh(W1 q + W2 D_S[j]), softmax to alpha,
    read context c = sum_j alpha_j D_H[j]."""
    if d_s.shape[0] == 0:
        raise AttentionError("cannot attend over an empty bank")
    scores = torch.tanh(q @ hop.w1.T + d_s @ hop.w2.T) @ hop.v1
    alpha = torch.softmax(scores, dim=0)
    c = alpha @ d_h
    return alpha, c


def update_state(d_s: torch.Tensor, c: torch.Tensor, q: torch.Tensor,
                 alpha: torch.Tensor, hop: HopParams) -> torch.Tensor:
    """Forget/add update: an update GRU emulates the decoder to produce an
    intermediate state, whose sigmoid projections gate what each attended
    position forgets and adds."""
    s_tilde = hop.update_gru(c.unsqueeze(0), q.unsqueeze(0)).squeeze(0)
    forget = torch.sigmoid(s_tilde @ hop.w3.T)
    add = torch.sigmoid(s_tilde @ hop.w4.T)
    a = alpha.unsqueeze(1)
    return d_s * (1.0 - a * forget) + a * add


def multi_hop(q: torch.Tensor, bank: StateBank, hops,
              mutate: bool = True
              ) -> tuple[torch.Tensor, torch.Tensor, AttentionTrace,
                         StateBank]:
    """Iterate attend + update over the bank with a fixed query; returns the
    last hop's context and attention, the full trace, and the (optionally)
    mutated bank."""
    if bank.d_s is None or bank.size == 0:
        raise AttentionError("cannot attend over an empty bank")
    d_s = bank.d_s
    trace = AttentionTrace()
    alpha = c = None
    for hop in hops:
        alpha, c = attend_hop(q, d_s, bank.d_h, hop)
        d_s = update_state(d_s, c, q, alpha, hop)
        trace.hops.append(HopTrace(alpha.detach().tolist(),
                                   float(torch.linalg.norm(c).item())))
    if mutate:
        bank.d_s = d_s
    return c, alpha, trace, bank


def knowledge_hop(q: torch.Tensor, states: KnowledgeStates, hops,
                  mutate: bool = True
                  ) -> tuple[torch.Tensor, torch.Tensor, AttentionTrace,
                             KnowledgeStates]:
    """Same dual-state multi-hop, over the per-turn knowledge states."""
    if states.kb_s is None or states.kb_s.shape[0] == 0:
        raise AttentionError("cannot attend over empty knowledge states")
    kb_s = states.kb_s
    trace = AttentionTrace()
    alpha = c = None
    for hop in hops:
        alpha, c = attend_hop(q, kb_s, states.kb_h, hop)
        kb_s = update_state(kb_s, c, q, alpha, hop)
        trace.hops.append(HopTrace(alpha.detach().tolist(),
                                   float(torch.linalg.norm(c).item())))
    if mutate:
        states.kb_s = kb_s
    return c, alpha, trace, states


@dataclass
class TripleEmbedding:
    matrix: torch.Tensor  # (num_triples, hidden_dim)
    provenance: list  # aligned list of Triple

    def __len__(self):
        return self.matrix.shape[0]


def triple_attention(q0: torch.Tensor, emb: TripleEmbedding, hops: int,
                     topk: int | None = None
                     ) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor,
                                AttentionTrace]:
    """Dot-product attention over triple rows with a query update between
    hops: alpha = softmax(q . E'), c = alpha E, q' = q + c.

    An empty store is signalled with a zero context and empty alpha rather
    than an error; soft attention only unless ``topk`` masks low-weight
    triples between hops.
    """
    if hops < 1:
        raise AttentionError("triple hops must be >= 1")
    trace = AttentionTrace()
    if len(emb) == 0:
        zero = torch.zeros_like(q0)
        empty = torch.zeros(0, dtype=q0.dtype)
        return zero, empty, q0, trace
    q = q0
    alpha = None
    c = None
    mask = torch.zeros(len(emb), dtype=q0.dtype)
    for _ in range(hops):
        scores = emb.matrix @ q + mask
        alpha = torch.softmax(scores, dim=0)
        c = alpha @ emb.matrix
        q = q + c
        if topk is not None and topk < len(emb):
            keep = torch.topk(alpha, topk).indices
            mask = torch.full((len(emb),), -math.inf, dtype=q0.dtype)
            mask[keep] = 0.0
        trace.hops.append(HopTrace(
            alpha.detach().tolist(),
            float(torch.linalg.norm(c).item()),
            query_norm=float(torch.linalg.norm(q).item()),
            top_triples=_top_triples(alpha, emb),
        ))
    return c, alpha, q, trace


def _top_triples(alpha: torch.Tensor, emb: TripleEmbedding,
                 k: int = 5) -> list[list]:
    k = min(k, len(emb))
    weights, idx = torch.topk(alpha, k)
    out = []
    for w, i in zip(weights.tolist(), idx.tolist()):
        t = emb.provenance[i]
        out.append([t.head, t.relation, t.tail, w])
    return out


def interactive_context(bank: StateBank, h_kb: HiddenStates, hops
                        ) -> tuple[torch.Tensor, AttentionTrace]:
    """Weighted dialogue context: mean-pool the knowledge encodings into the
    initial query and run the bank hops with it."""
    if h_kb.states.shape[0] == 0:
        raise AttentionError("knowledge states are empty")
    q0 = h_kb.states.mean(dim=0)
    c, _, trace, _ = multi_hop(q0, bank, hops)
    return c, trace
