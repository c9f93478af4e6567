"""HTTP chat service hosting live sessions for human evaluation.

Sessions persist to an append-only JSONL log and are rebuilt by replay on
startup; state-mutating endpoints accept an Idempotency-Key header and
return the stored response on retry.
"""

from __future__ import annotations

import json
import math
import threading
import uuid
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Query
from pydantic import BaseModel

from kgconv import data as D
from kgconv.config import RunConfig
from kgconv.errors import KgconvError
from kgconv.graph import DistanceCache, shortest_path
from kgconv.selfplay import Agent, NeuralKeywordPolicy, current_keywords, success_check
from kgconv.strategy import StrategyConfig


@dataclass
class Engine:
    """Frozen models plus the tooling needed to run one agent turn."""
    prep: D.Preprocessor
    graph: object
    kv: object
    agent: Agent
    seed: int = 17

    @classmethod
    def build(cls, ws, predictor, matcher, cfg: RunConfig) -> "Engine":
        agent = Agent(NeuralKeywordPolicy(predictor), matcher, ws.pool, ws.graph,
                      ws.kv, strategy=StrategyConfig(mode=cfg.sim.strategy),
                      pool_size=cfg.sim.pool_size, topk=cfg.train.topk)
        return cls(prep=ws.prep, graph=ws.graph, kv=ws.kv, agent=agent,
                   seed=cfg.sim.seed)

    @classmethod
    def demo_synthetic(cls, cfg: RunConfig) -> "Engine":
        """Small untrained engine over the synthetic world; deterministic and
        fast to boot, for console development and end-to-end tests."""
        from kgconv.matcher import MatcherConfig, MatcherModel
        from kgconv.predictor import PredictorConfig, PredictorModel
        from kgconv.synthetic import build_world
        w = build_world()
        predictor = PredictorModel(w.vocab, w.kv, w.graph,
                                   PredictorConfig(d1=16, d2=16, seed=13))
        matcher = MatcherModel(w.vocab, w.kv, w.graph, MatcherConfig(d=16, seed=29))
        agent = Agent(NeuralKeywordPolicy(predictor), matcher, w.pool, w.graph,
                      w.kv, pool_size=cfg.sim.pool_size, topk=cfg.train.topk)
        return cls(prep=w.prep, graph=w.graph, kv=w.kv, agent=agent, seed=cfg.sim.seed)

    def keyword_labels(self) -> list[str]:
        return sorted(
            self.kv.token(kw) for kw, node in self.agent.kw_to_node.items()
        )

    def sample_target(self, salt: int) -> str:
        labels = self.keyword_labels()
        rng = np.random.default_rng(self.seed + salt)
        return labels[int(rng.integers(len(labels)))]

    def respond(self, history_texts: list[str], target: str) -> tuple[str, dict]:
        """Deterministic agent turn over the raw transcript."""
        history = [self.prep.utterance(t) for t in history_texts]
        output = self.agent.policy.distribution(history)
        top = output.top_k(self.agent.topk) if output else []
        turn = self.agent.act(history, target)
        diag = {
            "top_keywords": [
                {"keyword": self.kv.token(kw), "probability": p} for kw, p in top
            ],
            "chosen_keyword": (self.kv.token(turn.decision.chosen)
                               if turn.decision else None),
            "tier": turn.respond.tier if turn.respond else None,
            "decision": turn.decision.to_json() if turn.decision else None,
        }
        return " ".join(turn.utterance.words), diag


class SessionStore:
    """In-memory sessions over an append-only event log."""

    def __init__(self, log_path: Optional[Path]):
        self.log_path = Path(log_path) if log_path else None
        self.sessions: dict[str, dict] = {}
        self.idempotency: dict[str, dict] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._global = threading.Lock()
        if self.log_path and self.log_path.exists():
            with open(self.log_path, "r", encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        self._apply(json.loads(line))

    def lock(self, session_id: str) -> threading.Lock:
        with self._global:
            return self._locks.setdefault(session_id, threading.Lock())

    def _apply(self, event: dict) -> None:
        kind = event["event"]
        if kind == "created":
            self.sessions[event["session"]] = {
                "session_id": event["session"],
                "target": event["target"],
                "status": "active",
                "transcript": [],
                "keyword_trace": [],
                "distance_trace": [],
                "agent_turns": 0,
                "rating": None,
            }
        elif kind == "message":
            s = self.sessions[event["session"]]
            s["transcript"].append({"speaker": "user", "text": event["text"]})
            s["transcript"].append({"speaker": "agent", "text": event["reply"]})
            s["agent_turns"] += 1
            diag = event["diagnostics"]
            s["keyword_trace"].append(diag)
            if diag.get("decision") and diag["decision"]["dist_to_target"] is not None:
                s["distance_trace"].append(diag["decision"]["dist_to_target"])
            s["status"] = event["status"]
        elif kind == "rated":
            s = self.sessions[event["session"]]
            s["rating"] = event["smoothness"]
        if event.get("idempotency_key"):
            self.idempotency[event["idempotency_key"]] = event["response"]

    def append(self, event: dict) -> None:
        self._apply(event)
        if self.log_path:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.log_path, "a", encoding="utf-8") as f:
                f.write(json.dumps(event, sort_keys=True) + "\n")


class CreateSession(BaseModel):
    target: Optional[str] = None


class Message(BaseModel):
    text: str


class Rating(BaseModel):
    smoothness: int


def create_app(engine: Engine, log_path=None, reveal_target: bool = True,
               max_agent_turns: int = 8) -> FastAPI:
    app = FastAPI(title="kgconv chat service")
    store = SessionStore(log_path)
    app.state.store = store
    app.state.engine = engine

    def get_session(session_id: str) -> dict:
        s = store.sessions.get(session_id)
        if s is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return s

    def public_view(s: dict) -> dict:
        view = dict(s)
        if not reveal_target and s["status"] == "active":
            view["target"] = None
        return view

    @app.get("/health")
    def health():
        return {"ok": True}

    @app.post("/sessions")
    def create_session(body: CreateSession,
                       idempotency_key: Optional[str] = Header(default=None)):
        if idempotency_key and idempotency_key in store.idempotency:
            return store.idempotency[idempotency_key]
        target = body.target
        if target is not None and engine.graph.node_id(target) is None:
            raise HTTPException(status_code=422,
                                detail=f"target {target!r} is not a graph concept")
        if target is None:
            target = engine.sample_target(len(store.sessions))
        session_id = uuid.uuid4().hex[:12]
        response = {"session_id": session_id, "target": target, "status": "active"}
        store.append({"event": "created", "session": session_id, "target": target,
                      "idempotency_key": idempotency_key, "response": response})
        return response

    @app.post("/sessions/{session_id}/message")
    def message(session_id: str, body: Message,
                idempotency_key: Optional[str] = Header(default=None)):
        if idempotency_key and idempotency_key in store.idempotency:
            return store.idempotency[idempotency_key]
        with store.lock(session_id):
            s = get_session(session_id)
            if s["status"] != "active":
                raise HTTPException(status_code=409,
                                    detail=f"session is {s['status']}, not active")
            history = [t["text"] for t in s["transcript"]] + [body.text]
            target = s["target"]
            try:
                reply, diag = engine.respond(history, target)
            except KgconvError as e:
                raise HTTPException(status_code=500, detail=str(e)) from None
            user_u = engine.prep.utterance(body.text)
            reply_u = engine.prep.utterance(reply)
            status = "active"
            if success_check(user_u, target) or success_check(reply_u, target):
                status = "success"
            elif s["agent_turns"] + 1 >= max_agent_turns:
                status = "ended"
            response = {
                "session_id": session_id,
                "reply": reply,
                "diagnostics": diag,
                "status": status,
            }
            store.append({"event": "message", "session": session_id,
                          "text": body.text, "reply": reply, "diagnostics": diag,
                          "status": status, "idempotency_key": idempotency_key,
                          "response": response})
            return response

    @app.get("/sessions/{session_id}/trace")
    def trace(session_id: str):
        return public_view(get_session(session_id))

    @app.post("/sessions/{session_id}/rating")
    def rate(session_id: str, body: Rating,
             idempotency_key: Optional[str] = Header(default=None)):
        if idempotency_key and idempotency_key in store.idempotency:
            return store.idempotency[idempotency_key]
        with store.lock(session_id):
            s = get_session(session_id)
            if not (1 <= body.smoothness <= 5):
                raise HTTPException(status_code=422,
                                    detail="smoothness must be between 1 and 5")
            if s["status"] == "active":
                raise HTTPException(status_code=409,
                                    detail="rating only allowed after the session ends")
            if s["rating"] is not None:
                raise HTTPException(status_code=409, detail="rating already submitted")
            response = {"session_id": session_id, "smoothness": body.smoothness,
                        "stored": True}
            store.append({"event": "rated", "session": session_id,
                          "smoothness": body.smoothness,
                          "idempotency_key": idempotency_key, "response": response})
            return response

    @app.get("/graph/path")
    def graph_path(frm: str = Query(default="", alias="from"), to: str = ""):
        src = engine.graph.node_id(frm)
        dst = engine.graph.node_id(to)
        if src is None or dst is None:
            missing = frm if src is None else to
            raise HTTPException(status_code=404,
                                detail=f"concept {missing!r} not in graph")
        path = shortest_path(engine.graph, src, dst)
        if path is None:
            return {"from": frm, "to": to, "path": None}
        labels = [engine.graph.node_labels[n] for n in path]
        dmap = DistanceCache(engine.graph).for_target(dst)
        dist = dmap.get(src)
        return {"from": frm, "to": to, "path": labels,
                "length": None if math.isinf(dist) else dist}

    return app


def replay_agent_replies(engine: Engine, session: dict) -> list[str]:
    """Recompute every agent reply of a stored session from its user texts;
    used to verify seeded determinism of served conversations."""
    replies = []
    history: list[str] = []
    for turn in session["transcript"]:
        if turn["speaker"] == "user":
            history.append(turn["text"])
        else:
            reply, _ = engine.respond(history, session["target"])
            replies.append(reply)
            history.append(turn["text"])
    return replies
