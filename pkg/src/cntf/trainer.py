"""Training loop, checkpointing, and validation-driven model selection."""

from __future__ import annotations

import hashlib
import json
import math
import random
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig, TrainConfig
from .corpus import CorpusSplit, Dialogue, Vocabulary, make_training_examples
from .decoder import ConversationState, teacher_force
from .model import CNTFModel, TripleVocab, build_model
from .triple_builder import TripleStore

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.npz"
VOCAB_NAME = "vocab.txt"
TRIPLE_VOCAB_NAME = "triple_vocab.txt"


class TrainingError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict  # tensor name -> torch.Tensor
    vocab: Vocabulary
    triple_vocab: TripleVocab
    epoch: int = 0
    valid_loss: float = math.inf
    history: list = field(default_factory=list)

    def build(self, dtype=torch.float32) -> CNTFModel:
        model = CNTFModel(self.config, dtype=dtype)
        model.load_state_dict({k: v.to(dtype) for k, v in self.state.items()})
        return model


def dialogue_nll(model: CNTFModel, dialogue: Dialogue, store: TripleStore,
                 vocab: Vocabulary, triple_vocab: TripleVocab,
                 selector_k: int = 2) -> tuple[torch.Tensor, int]:
    """Teacher-forced NLL summed over all of a dialogue's target turns.
    Banks carry across turns within the dialogue."""
    conv = ConversationState(model, vocab, triple_vocab, store)
    total = None
    count = 0
    for ex in make_training_examples(
            dialogue, selector_k,
            dialogue_budget=model.config.dialogue_budget,
            knowledge_budget=model.config.knowledge_budget):
        conv.start_turn(ex.dialogue_input, ex.knowledge_input)
        nll, n = teacher_force(conv, ex.target)
        total = nll if total is None else total + nll
        count += n
    if total is None:
        total = torch.zeros((), dtype=model.dtype)
    return total, count


def split_nll(model: CNTFModel, split: CorpusSplit,
              stores: dict[str, TripleStore], vocab: Vocabulary,
              triple_vocab: TripleVocab) -> tuple[float, int]:
    total, count = 0.0, 0
    with torch.no_grad():
        for d in split.dialogues:
            nll, n = dialogue_nll(model, d, stores.get(d.dialogue_id,
                                                       TripleStore()),
                                  vocab, triple_vocab)
            total += float(nll)
            count += n
    return total, count


def clip_gradients(parameters, max_norm: float) -> float:
    """Global-norm clipping: rescales, never re-orients."""
    return float(torch.nn.utils.clip_grad_norm_(parameters, max_norm))


def train(train_split: CorpusSplit, valid_split: CorpusSplit,
          stores: dict[str, TripleStore], vocab: Vocabulary,
          model_config: ModelConfig, train_config: TrainConfig,
          triple_vocab: TripleVocab | None = None,
          log=None, selector_k: int = 2) -> Checkpoint:
    """Adam optimization of the sequence loss with per-epoch validation;
    returns the checkpoint with minimal validation loss. Deterministic for
    a fixed seed on a single device."""
    tcfg = train_config
    torch.manual_seed(tcfg.seed)
    if triple_vocab is None:
        triple_vocab = TripleVocab.from_stores(stores.values())
    mcfg = _replace_tv(model_config, triple_vocab.size)
    model = build_model(mcfg, seed=tcfg.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=tcfg.learning_rate,
                                 betas=(tcfg.beta1, tcfg.beta2), eps=tcfg.eps)
    rng = random.Random(tcfg.seed)
    best = Checkpoint(mcfg, _snapshot(model), vocab, triple_vocab)
    history = []
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.monotonic()
        order = list(train_split.dialogues)
        rng.shuffle(order)
        train_total, train_count = 0.0, 0
        for b0 in range(0, len(order), tcfg.batch_size):
            batch = order[b0:b0 + tcfg.batch_size]
            optimizer.zero_grad()
            batch_nll = None
            batch_count = 0
            for d in batch:
                nll, n = dialogue_nll(
                    model, d, stores.get(d.dialogue_id, TripleStore()),
                    vocab, triple_vocab, selector_k=selector_k)
                batch_nll = nll if batch_nll is None else batch_nll + nll
                batch_count += n
            if batch_count == 0:
                continue
            loss = batch_nll / batch_count
            if torch.isnan(loss) or torch.isinf(loss):
                ids = ", ".join(d.dialogue_id for d in batch)
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch "
                    f"{b0 // tcfg.batch_size} (dialogues: {ids})")
            loss.backward()
            clip_gradients(model.parameters(), tcfg.grad_clip)
            optimizer.step()
            train_total += float(batch_nll.detach())
            train_count += batch_count
        valid_total, valid_count = split_nll(model, valid_split, stores,
                                             vocab, triple_vocab)
        train_loss = train_total / max(1, train_count)
        valid_loss = valid_total / max(1, valid_count)
        entry = {"epoch": epoch, "train_loss": train_loss,
                 "valid_loss": valid_loss,
                 "seconds": time.monotonic() - t0}
        history.append(entry)
        if log is not None:
            log(entry)
        if valid_loss < best.valid_loss:
            best = Checkpoint(mcfg, _snapshot(model), vocab, triple_vocab,
                              epoch, valid_loss)
        if tcfg.stop_below_train_loss is not None and \
                train_loss < tcfg.stop_below_train_loss:
            break
    best.history = list(history)
    return best


def _replace_tv(cfg: ModelConfig, size: int) -> ModelConfig:
    d = cfg.to_dict()
    d["triple_vocab_size"] = size
    return ModelConfig.from_dict(d)


def _snapshot(model: CNTFModel) -> dict:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


# --- checkpoint files ------------------------------------------------------------

def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    tensors = {k: v.numpy() for k, v in ckpt.state.items()}
    np.savez(path / PARAMS_NAME, **tensors)
    manifest = {
        "format": "cntf-checkpoint-v1",
        "config": ckpt.config.to_dict(),
        "config_hash": ckpt.config.hash(),
        "epoch": ckpt.epoch,
        "valid_loss": ckpt.valid_loss,
        "tensors": [
            {"name": k, "shape": list(v.shape), "dtype": str(v.dtype)}
            for k, v in tensors.items()
        ],
    }
    (path / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2),
                                      encoding="utf-8")
    ckpt.vocab.save(path / VOCAB_NAME)
    ckpt.triple_vocab.save(path / TRIPLE_VOCAB_NAME)
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    manifest_path = path / MANIFEST_NAME
    if not manifest_path.exists():
        raise CheckpointError(f"no {MANIFEST_NAME} in {path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    raw_config = json.dumps(manifest["config"], sort_keys=True)
    digest = hashlib.sha256(raw_config.encode("utf-8")).hexdigest()
    if digest != manifest["config_hash"]:
        raise CheckpointError("config hash mismatch: manifest was modified "
                              "or written by an incompatible version")
    config = ModelConfig.from_dict(manifest["config"])
    blob = np.load(path / PARAMS_NAME)
    state = {}
    for spec in manifest["tensors"]:
        name, shape = spec["name"], tuple(spec["shape"])
        if name not in blob.files:
            raise CheckpointError(f"tensor {name!r} missing from blob")
        arr = blob[name]
        if arr.shape != shape:
            raise CheckpointError(
                f"tensor {name!r} has shape {list(arr.shape)}, manifest "
                f"says {list(shape)}")
        state[name] = torch.from_numpy(arr.copy())
    vocab = Vocabulary.load(path / VOCAB_NAME)
    triple_vocab = TripleVocab.load(path / TRIPLE_VOCAB_NAME)
    return Checkpoint(config, state, vocab, triple_vocab,
                      manifest["epoch"], manifest["valid_loss"])
