import json

import pytest
from fastapi.testclient import TestClient

from cntf.corpus import tokenize
from cntf.service import create_app

KNOWLEDGE = ["the apple is sweet", "the banana is yellow"]


def make_client(ckpt):
    return TestClient(create_app(ckpt))


def new_session(client, knowledge=None, **kwargs):
    body = {"knowledge": KNOWLEDGE if knowledge is None else knowledge}
    body.update(kwargs)
    return client.post("/session", json=body)


class TestSessionCreation:
    def test_created_with_uuid(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        resp = new_session(client)
        assert resp.status_code == 201
        sid = resp.json()["session_id"]
        assert len(sid) == 36 and sid.count("-") == 4

    def test_empty_knowledge_and_triples_rejected(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        resp = new_session(client, knowledge=[])
        assert resp.status_code == 400

    def test_triples_alone_accepted(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        resp = new_session(client, knowledge=[],
                           triples_inline="apple\tRelatedTo\tsweet\n")
        assert resp.status_code == 201

    def test_bad_inline_triples_name_line(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        resp = new_session(client,
                           triples_inline="good\tRelatedTo\tfine\nbad line\n")
        assert resp.status_code == 400
        assert "line 2" in resp.json()["error"]

    def test_no_model_503(self):
        client = TestClient(create_app(None))
        assert new_session(client).status_code == 503


class TestChat:
    def test_unknown_session_404(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        resp = client.post("/session/nope/chat",
                           json={"utterance": "hello"})
        assert resp.status_code == 404

    def test_empty_utterance_400(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        sid = new_session(client).json()["session_id"]
        resp = client.post(f"/session/{sid}/chat", json={"utterance": "  "})
        assert resp.status_code == 400

    def test_chat_round_trip(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        sid = new_session(client).json()["session_id"]
        resp = client.post(f"/session/{sid}/chat",
                           json={"utterance": "tell me about the apple"})
        assert resp.status_code == 200
        body = resp.json()
        assert body["session_id"] == sid
        assert isinstance(body["response"], str)
        assert len(body["trace"]) == len(body["response"].split()) or \
            len(body["trace"]) == 0 or body["response"]
        for record in body["trace"]:
            assert set(record) == {"token", "g1", "g2", "g3", "source",
                                   "alpha_d", "alpha_kb", "alpha_t"}
            assert sum(record["alpha_d"]) == pytest.approx(1.0, abs=1e-6)
            assert sum(record["alpha_kb"]) == pytest.approx(1.0, abs=1e-6)
            assert 0.0 < record["g1"] < 1.0

    def test_first_message_initializes_banks_alone(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        sid = new_session(client).json()["session_id"]
        utt = "tell me about the apple"
        body = client.post(f"/session/{sid}/chat",
                           json={"utterance": utt}).json()
        assert body["trace"], "expected a non-empty reply"
        assert len(body["trace"][0]["alpha_d"]) == len(tokenize(utt))
        assert body["dialogue_tokens"] == tokenize(utt)
        assert len(body["trace"][0]["alpha_kb"]) == \
            len(body["knowledge_tokens"])

    def test_window_one_covers_current_turn_only(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        sid = new_session(client, config={"window": 1}).json()["session_id"]
        first = client.post(f"/session/{sid}/chat",
                            json={"utterance": "tell me about the apple"}
                            ).json()
        reply_tokens = []
        for tok in first["response"].split():
            reply_tokens.extend(tokenize(tok))
        utt2 = "what else about the banana"
        second = client.post(f"/session/{sid}/chat",
                             json={"utterance": utt2}).json()
        assert second["trace"], "expected a non-empty reply"
        expected = len(reply_tokens) + len(tokenize(utt2))
        assert len(second["trace"][0]["alpha_d"]) == expected


class TestTraceEndpoint:
    def test_unknown_trace_404(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        assert client.get("/trace/nope").status_code == 404

    def test_trace_fetch_and_round_trip(self, tiny_checkpoint):
        client = make_client(tiny_checkpoint)
        sid = new_session(client).json()["session_id"]
        chat = client.post(f"/session/{sid}/chat",
                           json={"utterance": "tell me about the apple"}
                           ).json()
        got = client.get(f"/trace/{chat['trace_id']}")
        assert got.status_code == 200
        records = got.json()
        assert records == chat["trace"]
        assert json.loads(json.dumps(records)) == records


class TestReplayDeterminism:
    SCRIPT = [
        ("tell me about the apple", None),
        ("what else about the apple", None),
        ("and the banana", None),
    ]

    def _run(self, ckpt):
        client = make_client(ckpt)
        outputs = []
        resp = new_session(client)
        outputs.append(resp.content)
        sid = resp.json()["session_id"]
        trace_ids = []
        for utt, _ in self.SCRIPT:
            r = client.post(f"/session/{sid}/chat",
                            json={"utterance": utt})
            outputs.append(r.content)
            trace_ids.append(r.json()["trace_id"])
        for tid in trace_ids:
            outputs.append(client.get(f"/trace/{tid}").content)
        return outputs

    def test_byte_identical_replay(self, tiny_checkpoint):
        first = self._run(tiny_checkpoint)
        second = self._run(tiny_checkpoint)
        assert first == second


class TestReadOnlyInference:
    def test_parameters_untouched_by_chats(self, tiny_checkpoint):
        import torch
        client = make_client(tiny_checkpoint)
        model = client.app.state.cntf["bundle"]["model"]
        before = {k: v.clone() for k, v in model.state_dict().items()}
        sid = new_session(client).json()["session_id"]
        for utt in ("tell me about the apple", "what else"):
            client.post(f"/session/{sid}/chat", json={"utterance": utt})
        after = model.state_dict()
        for name, tensor in before.items():
            assert torch.equal(after[name], tensor), name


class TestSessionIsolation:
    def test_interleaved_equals_serial(self, tiny_checkpoint):
        utts = ["tell me about the apple", "what else about the apple"]

        def serial(knowledge):
            client = make_client(tiny_checkpoint)
            sid = new_session(client, knowledge=knowledge).json()["session_id"]
            return [client.post(f"/session/{sid}/chat",
                                json={"utterance": u}).json()["response"]
                    for u in utts]

        base_a = serial(["the apple is sweet"])
        base_b = serial(["the banana is yellow"])

        client = make_client(tiny_checkpoint)
        sa = new_session(client,
                         knowledge=["the apple is sweet"]).json()["session_id"]
        sb = new_session(client,
                         knowledge=["the banana is yellow"]).json()["session_id"]
        inter_a, inter_b = [], []
        for u in utts:
            inter_a.append(client.post(f"/session/{sa}/chat",
                                       json={"utterance": u}).json()["response"])
            inter_b.append(client.post(f"/session/{sb}/chat",
                                       json={"utterance": u}).json()["response"])
        assert inter_a == base_a
        assert inter_b == base_b
