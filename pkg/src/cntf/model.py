"""The assembled network: shared embeddings, twin encoders, hop stacks,
triple embedder, decoder cell, fusion and gate layers."""

from __future__ import annotations

import torch
from torch import nn

from .config import ModelConfig
from .corpus import Vocabulary
from .encoder import TokenEncoder
from .memory_attention import TripleEmbedding, make_hop_stack
from .triple_builder import TripleStore

TRIPLE_UNK = "<unk>"


class TripleVocab:
    """Entity-surface vocabulary for the triple embedding table; kept
    separate from the word vocabulary."""

    def __init__(self, entities: list[str]):
        self.entities = [TRIPLE_UNK] + sorted({e.lower() for e in entities})
        self._ids = {e: i for i, e in enumerate(self.entities)}
        self.unk_id = 0

    @property
    def size(self) -> int:
        return len(self.entities)

    def lookup(self, entity: str) -> int:
        return self._ids.get(entity.lower(), self.unk_id)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for e in self.entities[1:]:
                f.write(e + "\n")

    @classmethod
    def load(cls, path) -> "TripleVocab":
        with open(path, "r", encoding="utf-8") as f:
            return cls([line.rstrip("\n") for line in f if line.rstrip("\n")])

    @classmethod
    def from_stores(cls, stores) -> "TripleVocab":
        ents = set()
        for store in stores:
            ents |= store.entities
        return cls(sorted(ents))


class CNTFModel(nn.Module):
    def __init__(self, config: ModelConfig, dtype=torch.float32):
        super().__init__()
        self.config = config
        self.dtype = dtype
        h = config.hidden_dim
        self.embedding = nn.Embedding(config.vocab_size, config.embed_dim,
                                      dtype=dtype)
        self.dialogue_encoder = TokenEncoder(
            self.embedding, h, config.encoder_layers, config.encoder_heads,
            dtype=dtype)
        self.knowledge_encoder = TokenEncoder(
            self.embedding, h, config.encoder_layers, config.encoder_heads,
            dtype=dtype)
        self.dialogue_hops = make_hop_stack(h, config.hops, dtype=dtype)
        self.knowledge_hops = make_hop_stack(h, config.hops, dtype=dtype)
        self.triple_embedding = nn.Embedding(config.triple_vocab_size, h,
                                             dtype=dtype)
        if config.triple_combine == "proj":
            self.triple_proj = nn.Linear(2 * h, h, dtype=dtype)
        self.decoder_cell = nn.GRUCell(config.embed_dim, h, dtype=dtype)
        self.fuse_layer = nn.Linear(4 * h, config.vocab_size, dtype=dtype)
        self.gate_dialogue = nn.Linear(2 * h, 1, dtype=dtype)
        self.gate_knowledge = nn.Linear(2 * h, 1, dtype=dtype)
        self.gate_triple = nn.Linear(2 * h, 1, dtype=dtype)

    def encode_dialogue(self, ids: torch.Tensor) -> torch.Tensor:
        return self.dialogue_encoder(ids)

    def encode_knowledge(self, ids: torch.Tensor) -> torch.Tensor:
        return self.knowledge_encoder(ids)

    def embed_triples(self, store: TripleStore,
                      triple_vocab: TripleVocab) -> TripleEmbedding:
        triples = list(store)
        if not triples:
            return TripleEmbedding(
                torch.zeros(0, self.config.hidden_dim, dtype=self.dtype), [])
        head_ids = torch.tensor([triple_vocab.lookup(t.head) for t in triples])
        tail_ids = torch.tensor([triple_vocab.lookup(t.tail) for t in triples])
        heads = self.triple_embedding(head_ids)
        tails = self.triple_embedding(tail_ids)
        mode = self.config.triple_combine
        if mode == "mean":
            rows = (heads + tails) / 2.0
        elif mode == "sum":
            rows = heads + tails
        else:
            rows = self.triple_proj(torch.cat([heads, tails], dim=1))
        return TripleEmbedding(rows, triples)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Uniform [-0.1, 0.1] everywhere, update-gate biases of GRU cells at 0."""
    gen = torch.Generator().manual_seed(seed)
    for p in model.parameters():
        with torch.no_grad():
            p.uniform_(-0.1, 0.1, generator=gen)
    for module in model.modules():
        if isinstance(module, nn.GRUCell):
            h = module.hidden_size
            with torch.no_grad():
                module.bias_ih[h:2 * h].zero_()
                module.bias_hh[h:2 * h].zero_()


def build_model(config: ModelConfig, seed: int = 13,
                dtype=torch.float32) -> CNTFModel:
    model = CNTFModel(config, dtype=dtype)
    init_parameters(model, seed)
    return model


def load_pretrained_embeddings(model: CNTFModel, vocab: Vocabulary,
                               vectors) -> int:
    """Overwrite word-embedding rows for vocabulary tokens present in a
    pretrained vector table (token match); returns the number of rows set.
    Optional — randomly initialized embeddings train fine at desk scale."""
    if vectors.dim != model.config.embed_dim:
        raise ValueError(
            f"vector dimension {vectors.dim} does not match embed_dim "
            f"{model.config.embed_dim}")
    hits = 0
    with torch.no_grad():
        for idx, token in enumerate(vocab.tokens):
            if token in vectors:
                model.embedding.weight[idx] = torch.as_tensor(
                    vectors.get(token), dtype=model.dtype)
                hits += 1
    return hits


def encode_tokens(vocab: Vocabulary, tokens: list[str]) -> torch.Tensor:
    return torch.tensor(vocab.encode(tokens), dtype=torch.long)
