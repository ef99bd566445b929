"""Token encoding and the paired mutable/fixed state banks.

The contextual encoder is a small trainable pre-norm transformer (sinusoidal
positions, affine-free layer norms) over the shared vocabulary; it stands in
for a large pretrained encoder so that every parameter stays finite-difference
checkable. ``load_hidden_states`` accepts externally produced encodings for
setups that keep the original encoder.

The dialogue bank holds two aligned matrices per retained turn-input: D_S,
which attention hops mutate, and D_H, which stays fixed at the encoder
outputs. A sliding window keeps the current turn-input plus ``window - 1``
previous ones. Knowledge states are reset every turn.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn


class EncoderError(ValueError):
    pass


@dataclass
class HiddenStates:
    states: torch.Tensor  # (num_tokens, hidden_dim)
    tokens: list[str]

    def __post_init__(self):
        if self.states.shape[0] != len(self.tokens):
            raise EncoderError("hidden state rows must match token count")


def sinusoidal_positions(length: int, dim: int,
                         dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=dtype)
    angles = pos / torch.pow(torch.tensor(10000.0, dtype=dtype), idx / dim)
    enc = torch.zeros(length, dim, dtype=dtype)
    enc[:, 0::2] = torch.sin(angles)
    enc[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return enc


class SelfAttention(nn.Module):
    def __init__(self, hidden_dim: int, heads: int, dtype=torch.float32):
        super().__init__()
        if hidden_dim % heads != 0:
            raise EncoderError("hidden_dim must be divisible by heads")
        self.heads = heads
        self.head_dim = hidden_dim // heads
        self.q = nn.Linear(hidden_dim, hidden_dim, dtype=dtype)
        self.k = nn.Linear(hidden_dim, hidden_dim, dtype=dtype)
        self.v = nn.Linear(hidden_dim, hidden_dim, dtype=dtype)
        self.out = nn.Linear(hidden_dim, hidden_dim, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        n, h = x.shape
        def split(t):
            return t.reshape(n, self.heads, self.head_dim).transpose(0, 1)
        q, k, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        scores = q @ k.transpose(1, 2) / math.sqrt(self.head_dim)
        attn = torch.softmax(scores, dim=-1)
        mixed = (attn @ v).transpose(0, 1).reshape(n, h)
        return self.out(mixed)


class EncoderLayer(nn.Module):
    def __init__(self, hidden_dim: int, heads: int, dtype=torch.float32):
        super().__init__()
        self.attn = SelfAttention(hidden_dim, heads, dtype=dtype)
        self.norm1 = nn.LayerNorm(hidden_dim, elementwise_affine=False,
                                  dtype=dtype)
        self.norm2 = nn.LayerNorm(hidden_dim, elementwise_affine=False,
                                  dtype=dtype)
        self.ff1 = nn.Linear(hidden_dim, 2 * hidden_dim, dtype=dtype)
        self.ff2 = nn.Linear(2 * hidden_dim, hidden_dim, dtype=dtype)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.norm1(x))
        x = x + self.ff2(torch.relu(self.ff1(self.norm2(x))))
        return x


class TokenEncoder(nn.Module):
    """Pre-norm transformer encoder producing one hidden state per token."""

    def __init__(self, embedding: nn.Embedding, hidden_dim: int,
                 layers: int, heads: int, dtype=torch.float32):
        super().__init__()
        self.embedding = embedding
        self.input_proj = nn.Linear(embedding.embedding_dim, hidden_dim,
                                    dtype=dtype)
        self.layers = nn.ModuleList(
            EncoderLayer(hidden_dim, heads, dtype=dtype)
            for _ in range(layers))
        self.hidden_dim = hidden_dim
        self.dtype = dtype

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.numel() == 0:
            raise EncoderError("cannot encode an empty token sequence")
        x = self.input_proj(self.embedding(ids))
        x = x + sinusoidal_positions(len(ids), self.hidden_dim,
                                     dtype=self.dtype)
        for layer in self.layers:
            x = layer(x)
        return x


def load_hidden_states(path, tokens: list[str],
                       dtype=torch.float32) -> HiddenStates:
    """Hook for externally produced encodings (``.npy``, tokens × hidden)."""
    arr = np.load(path)
    return HiddenStates(torch.as_tensor(arr, dtype=dtype), tokens)


# --- state banks ---------------------------------------------------------------

@dataclass
class StateBank:
    d_s: torch.Tensor | None = None
    d_h: torch.Tensor | None = None
    tokens: list[str] = field(default_factory=list)
    segment_lengths: list[int] = field(default_factory=list)
    turn_ids: list[int] = field(default_factory=list)
    _next_turn: int = 0

    @property
    def size(self) -> int:
        return 0 if self.d_s is None else self.d_s.shape[0]

    def covered_turns(self) -> list[int]:
        return list(self.turn_ids)


def push_turn(bank: StateBank, hidden: HiddenStates,
              window: int) -> StateBank:
    """Slide the window: retain the previous ``window - 1`` turn-inputs and
    append the new one. Retained D_S rows keep their current (possibly
    updated) values; D_H rows stay at the encoder outputs that produced
    them."""
    if window < 1:
        raise EncoderError("window must be >= 1")
    keep = window - 1
    if keep == 0 or bank.d_s is None:
        retained_s = retained_h = None
        bank.tokens = []
        bank.segment_lengths = []
        bank.turn_ids = []
    else:
        drop = max(0, len(bank.segment_lengths) - keep)
        offset = sum(bank.segment_lengths[:drop])
        retained_s = bank.d_s[offset:]
        retained_h = bank.d_h[offset:]
        bank.tokens = bank.tokens[offset:]
        bank.segment_lengths = bank.segment_lengths[drop:]
        bank.turn_ids = bank.turn_ids[drop:]
    new_h = hidden.states
    if retained_s is None or retained_s.shape[0] == 0:
        bank.d_s = new_h.clone()
        bank.d_h = new_h.clone()
    else:
        bank.d_s = torch.cat([retained_s, new_h])
        bank.d_h = torch.cat([retained_h, new_h])
    bank.tokens = bank.tokens + list(hidden.tokens)
    bank.segment_lengths.append(len(hidden.tokens))
    bank.turn_ids.append(bank._next_turn)
    bank._next_turn += 1
    return bank


@dataclass
class KnowledgeStates:
    kb_s: torch.Tensor | None = None
    kb_h: torch.Tensor | None = None
    tokens: list[str] = field(default_factory=list)


def set_knowledge(states: KnowledgeStates,
                  hidden: HiddenStates) -> KnowledgeStates:
    """Replace both knowledge states with the current turn's encodings.
    Fresh copies: later Kb_S mutations never alias Kb_H."""
    if hidden.states.shape[0] == 0:
        raise EncoderError("knowledge hidden states must be non-empty")
    states.kb_s = hidden.states.clone()
    states.kb_h = hidden.states.clone()
    states.tokens = list(hidden.tokens)
    return states
