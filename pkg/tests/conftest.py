import pytest

from cntf.config import ModelConfig, TrainConfig
from cntf.corpus import build_vocab
from cntf.trainer import train
from synthetic import grounded_corpus


@pytest.fixture(scope="session")
def tiny_checkpoint():
    """A small checkpoint trained briefly on the synthetic corpus; shared by
    service and CLI tests that need a loadable model."""
    split, stores = grounded_corpus(4)
    vocab = build_vocab(split, 200)
    mcfg = ModelConfig(vocab_size=vocab.size, triple_vocab_size=1,
                       embed_dim=8, hidden_dim=8, hops=1, triple_hops=1,
                       window=2, encoder_layers=1, encoder_heads=2,
                       beam_width=2, max_decode_len=8)
    tcfg = TrainConfig(learning_rate=0.005, epochs=4, batch_size=2, seed=21)
    return train(split, split, stores, vocab, mcfg, tcfg)
