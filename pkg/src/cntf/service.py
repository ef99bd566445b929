"""HTTP facade for chatting with a trained model and inspecting traces.

The server plays agent2; per the turn protocol, each chat input concatenates
the model's previous reply with the new utterance. Knowledge sentences are
fixed per session; each turn re-selects the top-k against the latest
utterance. Responses are serialized deterministically so that identical
request sequences replay byte-identically on a fresh server.
"""

from __future__ import annotations

import json
import logging
import os
import threading
import uuid
from dataclasses import dataclass, field

import torch
from fastapi import FastAPI, Request
from fastapi.responses import Response

from .corpus import Dialogue, Turn, select_knowledge, tokenize, detokenize
from .decoder import ConversationState, TraceRecord, beam_decode
from .triple_builder import (AnnotationError, RuleBasedAnnotator, Triple,
                             TripleStore, build_entity_triples, cap_store)

_NAMESPACE = uuid.UUID("00000000-0000-0000-0000-00000000c47f")

logger = logging.getLogger("cntf.service")

SESSION_OVERRIDES = ("window", "beam_width", "max_decode_len",
                     "knowledge_topk")


@dataclass
class Session:
    session_id: str
    conv: ConversationState
    knowledge_sentences: list[list[str]]
    beam_width: int
    max_decode_len: int
    knowledge_topk: int
    transcript: list[dict] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_reply_tokens: list[str] = field(default_factory=list)


def _json_response(payload, status_code: int = 200) -> Response:
    body = json.dumps(payload, separators=(",", ":"), ensure_ascii=False)
    return Response(content=body, status_code=status_code,
                    media_type="application/json")


def _error(status: int, message: str) -> Response:
    return _json_response({"error": message}, status)


def parse_inline_triples(text: str) -> list[Triple]:
    triples = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise AnnotationError(
                f"inline triples line {lineno}: expected 3 tab-separated "
                f"fields, got {len(parts)}")
        triples.append(Triple(parts[0], parts[1], parts[2]))
    return triples


def build_session_store(knowledge: list[str],
                        inline: list[Triple]) -> TripleStore:
    """Inline triples plus rule-based entity triples over the knowledge
    document."""
    triples = list(inline)
    if knowledge:
        doc = Dialogue("session", [Turn("agent1", " ".join(knowledge))])
        entities = RuleBasedAnnotator().entities(doc).surfaces
        words = set(tok for s in knowledge for tok in tokenize(s))
        concept_words = {t.head.lower() for t in inline} | \
                        {t.tail.lower() for t in inline}
        triples += list(build_entity_triples(entities,
                                             words & concept_words))
    return cap_store(TripleStore(triples))


def create_app(checkpoint=None, seed: int = 13) -> FastAPI:
    """``checkpoint`` is a loaded ``trainer.Checkpoint`` (or None: the
    endpoints answer 503 until a model is available)."""
    app = FastAPI(title="cntf")
    state = {"bundle": None, "sessions": {}, "traces": {},
             "session_count": 0, "trace_count": 0,
             "registry_lock": threading.Lock()}
    if checkpoint is not None:
        torch.manual_seed(seed)
        model = checkpoint.build()
        model.eval()
        state["bundle"] = {
            "model": model,
            "vocab": checkpoint.vocab,
            "triple_vocab": checkpoint.triple_vocab,
            "config": checkpoint.config,
        }
    app.state.cntf = state

    @app.post("/session")
    async def create_session(request: Request):
        bundle = state["bundle"]
        if bundle is None:
            return _error(503, "no model loaded")
        try:
            body = json.loads(await request.body() or b"{}")
        except json.JSONDecodeError:
            return _error(400, "request body is not valid JSON")
        knowledge = body.get("knowledge", [])
        if not isinstance(knowledge, list) or \
                not all(isinstance(s, str) for s in knowledge):
            return _error(400, "knowledge must be a list of strings")
        try:
            inline = parse_inline_triples(body.get("triples_inline", ""))
        except AnnotationError as e:
            return _error(400, str(e))
        if not any(tokenize(s) for s in knowledge) and not inline:
            return _error(400, "knowledge and triples are both empty")
        overrides = body.get("config", {}) or {}
        unknown = set(overrides) - set(SESSION_OVERRIDES)
        if unknown:
            return _error(400, f"unknown config overrides: {sorted(unknown)}")

        store = build_session_store(knowledge, inline)
        cfg = bundle["config"]
        conv = ConversationState(bundle["model"], bundle["vocab"],
                                 bundle["triple_vocab"], store)
        if "window" in overrides:
            d = conv.config.to_dict()
            d["window"] = int(overrides["window"])
            from .config import ModelConfig
            conv.config = ModelConfig.from_dict(d)
        with state["registry_lock"]:
            state["session_count"] += 1
            sid = str(uuid.uuid5(_NAMESPACE,
                                 f"session-{state['session_count']}"))
            state["sessions"][sid] = Session(
                session_id=sid,
                conv=conv,
                knowledge_sentences=[tokenize(s) for s in knowledge
                                     if tokenize(s)],
                beam_width=int(overrides.get("beam_width", cfg.beam_width)),
                max_decode_len=int(overrides.get("max_decode_len",
                                                 cfg.max_decode_len)),
                knowledge_topk=int(overrides.get("knowledge_topk", 2)),
            )
        logger.info("created session %s", sid)
        return _json_response({"session_id": sid}, 201)

    @app.post("/session/{session_id}/chat")
    async def chat(session_id: str, request: Request):
        if state["bundle"] is None:
            return _error(503, "no model loaded")
        session = state["sessions"].get(session_id)
        if session is None:
            return _error(404, f"unknown session {session_id}")
        try:
            body = json.loads(await request.body() or b"{}")
        except json.JSONDecodeError:
            return _error(400, "request body is not valid JSON")
        utterance = body.get("utterance", "")
        utt_tokens = tokenize(utterance if isinstance(utterance, str) else "")
        if not utt_tokens:
            return _error(400, "utterance is empty")
        with session.lock:
            conv = session.conv
            budget = conv.config.dialogue_budget
            dlg_tokens = (session.last_reply_tokens + utt_tokens)[-budget:]
            kb_tokens = []
            if session.knowledge_sentences:
                chosen = select_knowledge(utt_tokens,
                                          session.knowledge_sentences,
                                          session.knowledge_topk)
                kb_tokens = [t for s in chosen for t in s]
                kb_tokens = kb_tokens[:conv.config.knowledge_budget]
            with torch.no_grad():
                conv.start_turn(dlg_tokens, kb_tokens)
                reply_tokens, records = beam_decode(
                    conv, session.beam_width, session.max_decode_len)
            session.last_reply_tokens = [t for rt in reply_tokens
                                         for t in tokenize(rt)]
            reply_text = detokenize(reply_tokens)
            with state["registry_lock"]:
                state["trace_count"] += 1
                trace_id = str(uuid.uuid5(_NAMESPACE,
                                          f"trace-{state['trace_count']}"))
            trace_json = [r.to_json() for r in records]
            state["traces"][trace_id] = trace_json
            session.transcript.append({"speaker": "agent1",
                                       "text": utterance})
            session.transcript.append({"speaker": "agent2",
                                       "text": reply_text})
        return _json_response({
            "session_id": session_id,
            "response": reply_text,
            "trace_id": trace_id,
            "trace": trace_json,
            "dialogue_tokens": list(conv.bank.tokens),
            "knowledge_tokens": list(conv.kb.tokens),
        })

    @app.get("/trace/{trace_id}")
    async def get_trace(trace_id: str):
        trace = state["traces"].get(trace_id)
        if trace is None:
            return _error(404, f"unknown trace {trace_id}")
        return _json_response(trace)

    return app


def serve(checkpoint_path: str, port: int = 8008, host: str = "127.0.0.1",
          ui_dir: str | None = None) -> None:
    import uvicorn

    from .trainer import load_checkpoint

    logging.basicConfig(
        level=os.environ.get("CNTF_LOG_LEVEL", "INFO").upper())
    app = create_app(load_checkpoint(checkpoint_path))
    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    uvicorn.run(app, host=host, port=port)
