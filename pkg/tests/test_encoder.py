import math

import pytest
import torch
from torch import nn

from cntf.encoder import (EncoderError, HiddenStates, KnowledgeStates,
                          StateBank, TokenEncoder, push_turn, set_knowledge,
                          sinusoidal_positions)
from gradcheck import check_gradients


def make_encoder(vocab=10, embed=6, hidden=4, layers=1, heads=2,
                 dtype=torch.float64, seed=0):
    torch.manual_seed(seed)
    emb = nn.Embedding(vocab, embed, dtype=dtype)
    enc = TokenEncoder(emb, hidden, layers, heads, dtype=dtype)
    for p in enc.parameters():
        nn.init.uniform_(p, -0.1, 0.1)
    return enc


def hidden_of(matrix, n):
    return HiddenStates(matrix, [f"t{i}" for i in range(n)])


class TestTokenEncoder:
    def test_output_shape(self):
        enc = make_encoder()
        out = enc(torch.tensor([1, 2, 3, 4, 5]))
        assert out.shape == (5, 4)
        assert torch.isfinite(out).all()

    def test_deterministic(self):
        enc = make_encoder()
        ids = torch.tensor([1, 2, 3])
        assert torch.equal(enc(ids), enc(ids))

    def test_empty_input_rejected(self):
        enc = make_encoder()
        with pytest.raises(EncoderError):
            enc(torch.tensor([], dtype=torch.long))

    def test_zero_parameters_leave_positions_only(self):
        # Hand trace of the 1-layer encoder with zeroed weights: embeddings
        # and the input projection vanish, pre-norm residual blocks add
        # nothing, so the output is exactly the positional table.
        enc = make_encoder(layers=1, heads=1)
        with torch.no_grad():
            for p in enc.parameters():
                p.zero_()
        out = enc(torch.tensor([1, 2, 3]))
        expected = sinusoidal_positions(3, 4, dtype=torch.float64)
        assert torch.allclose(out, expected, atol=0, rtol=0)

    def test_sinusoid_values(self):
        # independent recomputation of the position table
        enc = sinusoidal_positions(3, 4, dtype=torch.float64)
        for pos in range(3):
            for i in range(2):
                angle = pos / (10000 ** (2 * i / 4))
                assert enc[pos, 2 * i].item() == pytest.approx(
                    math.sin(angle), abs=1e-12)
                assert enc[pos, 2 * i + 1].item() == pytest.approx(
                    math.cos(angle), abs=1e-12)

    def test_gradient_check(self):
        enc = make_encoder(vocab=8, embed=4, hidden=4, layers=1, heads=2)
        ids = torch.tensor([1, 5, 2])
        torch.manual_seed(1)
        weights = torch.randn(3, 4, dtype=torch.float64)

        def loss():
            return (enc(ids) * weights).sum()

        check_gradients(loss, list(enc.parameters()))


class TestStateBank:
    def _hidden(self, n, fill, hidden=4):
        m = torch.full((n, hidden), float(fill), dtype=torch.float64)
        return hidden_of(m, n)

    def test_window_one_keeps_only_current(self):
        bank = StateBank()
        push_turn(bank, self._hidden(3, 1.0), window=1)
        push_turn(bank, self._hidden(2, 2.0), window=1)
        assert bank.size == 2
        assert bank.covered_turns() == [1]
        assert (bank.d_h == 2.0).all()

    def test_window_two_covers_last_two(self):
        bank = StateBank()
        for i, n in enumerate([3, 2, 4]):
            push_turn(bank, self._hidden(n, i + 1), window=2)
        assert bank.covered_turns() == [1, 2]
        assert bank.size == 6
        assert (bank.d_h[:2] == 2.0).all() and (bank.d_h[2:] == 3.0).all()

    def test_mutated_ds_carries_over(self):
        bank = StateBank()
        push_turn(bank, self._hidden(2, 1.0), window=2)
        # an attention update rewrites D_S; D_H must not move
        bank.d_s = bank.d_s * 7.0
        push_turn(bank, self._hidden(1, 2.0), window=2)
        # hand-maintained expectation
        expected_s = torch.cat([
            torch.full((2, 4), 7.0, dtype=torch.float64),
            torch.full((1, 4), 2.0, dtype=torch.float64)])
        expected_h = torch.cat([
            torch.full((2, 4), 1.0, dtype=torch.float64),
            torch.full((1, 4), 2.0, dtype=torch.float64)])
        assert torch.equal(bank.d_s, expected_s)
        assert torch.equal(bank.d_h, expected_h)

    def test_tokens_follow_window(self):
        bank = StateBank()
        push_turn(bank, HiddenStates(torch.zeros(2, 4), ["a", "b"]), 2)
        push_turn(bank, HiddenStates(torch.zeros(1, 4), ["c"]), 2)
        push_turn(bank, HiddenStates(torch.zeros(2, 4), ["d", "e"]), 2)
        assert bank.tokens == ["c", "d", "e"]

    def test_position_budget(self):
        bank = StateBank()
        for i in range(5):
            push_turn(bank, self._hidden(200, i), window=2)
            assert bank.size <= 2 * 200

    def test_dh_bit_identical_to_encoder_output(self):
        enc = make_encoder()
        ids = torch.tensor([1, 2, 3])
        out = enc(ids).detach()
        bank = StateBank()
        push_turn(bank, HiddenStates(out, ["a", "b", "c"]), window=2)
        bank.d_s = bank.d_s + 1.0
        assert torch.equal(bank.d_h, out)


class TestKnowledgeStates:
    def test_reset_replaces_previous(self):
        ks = KnowledgeStates()
        set_knowledge(ks, hidden_of(torch.ones(3, 4), 3))
        set_knowledge(ks, hidden_of(torch.full((2, 4), 5.0), 2))
        assert ks.kb_s.shape == (2, 4)
        assert (ks.kb_h == 5.0).all()

    def test_no_aliasing(self):
        ks = KnowledgeStates()
        set_knowledge(ks, hidden_of(torch.ones(2, 4), 2))
        ks.kb_s = ks.kb_s * 3.0
        assert (ks.kb_h == 1.0).all()
        # in-place mutation must not leak either
        set_knowledge(ks, hidden_of(torch.ones(2, 4), 2))
        with torch.no_grad():
            ks.kb_s += 9.0
        assert (ks.kb_h == 1.0).all()

    def test_shapes_equal_after_set(self):
        ks = KnowledgeStates()
        set_knowledge(ks, hidden_of(torch.randn(4, 4), 4))
        assert ks.kb_s.shape == ks.kb_h.shape
        assert torch.equal(ks.kb_s, ks.kb_h)

    def test_empty_rejected(self):
        ks = KnowledgeStates()
        with pytest.raises(EncoderError):
            set_knowledge(ks, HiddenStates(torch.zeros(0, 4), []))
