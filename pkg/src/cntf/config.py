"""Model and training configuration objects, JSON round-trippable."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field


@dataclass
class ModelConfig:
    """Hyperparameters of the dialogue model.

    ``hops`` is the number of attention rounds over the dialogue and knowledge
    banks, ``triple_hops`` the number of rounds over the triple embeddings,
    ``window`` the number of turn-inputs retained in the dialogue bank
    (current turn plus ``window - 1`` previous ones).
    """

    vocab_size: int
    triple_vocab_size: int
    embed_dim: int = 300
    hidden_dim: int = 128
    hops: int = 2
    triple_hops: int = 2
    window: int = 2
    encoder_layers: int = 2
    encoder_heads: int = 4
    dialogue_budget: int = 200
    knowledge_budget: int = 400
    beam_width: int = 4
    max_decode_len: int = 30
    # How a triple row combines its head/tail entity embeddings.
    triple_combine: str = "mean"  # mean | sum | proj
    # Which entity surface a triple contributes to the copy distribution.
    triple_copy: str = "tail"  # tail | head
    # Optional top-k masking of triples between hops (None = soft attention only).
    triple_topk: int | None = None
    # Treat a dialogue word as matching a lexicon triple by tail as well as head.
    match_triple_tails: bool = False

    def __post_init__(self):
        if min(self.vocab_size, self.triple_vocab_size, self.embed_dim,
               self.hidden_dim, self.hops, self.triple_hops, self.window,
               self.encoder_layers, self.encoder_heads) < 1:
            raise ValueError("all ModelConfig dimensions must be positive")
        if self.hidden_dim % self.encoder_heads != 0:
            raise ValueError("hidden_dim must be divisible by encoder_heads")
        if self.triple_combine not in ("mean", "sum", "proj"):
            raise ValueError(f"unknown triple_combine {self.triple_combine!r}")
        if self.triple_copy not in ("tail", "head"):
            raise ValueError(f"unknown triple_copy {self.triple_copy!r}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    batch_size: int = 4
    epochs: int = 10
    seed: int = 13
    grad_clip: float = 5.0
    device: str = "cpu"
    # Adam moments; only the learning rate is externally pinned.
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    log_path: str | None = None
    # Optional early stop once the epoch train loss drops below this.
    stop_below_train_loss: float | None = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def load_config(path, cls=ModelConfig):
    with open(path, "r", encoding="utf-8") as f:
        return cls.from_dict(json.load(f))
