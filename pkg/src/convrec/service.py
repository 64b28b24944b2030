"""HTTP session service for live conversations.

One session = one subsession played over REST. In human mode the client
supplies the feedback and the system strictly alternates turn/feedback; in
simulated mode each turn call plays a full turn against the simulator.
Finished sessions are appended to a JSONL episode log that the evaluation
tooling can re-ingest directly.
"""

from __future__ import annotations

import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .agents import PolicyAgent, RuleAgent, ScoringRuntime
from .catalog import Catalog
from .config import Config
from .environment import (ASK, Action, ConversationEnv, ConvState, EpisodeRecord, Feedback,
                          episode_record, read_episode_log, transcript_dicts)
from .evalkit import compute_metrics, hn_score
from .policy import PolicyBundle
from .simulator import Session, SimUserState
from .transe import KGEmbeddings

logger = logging.getLogger(__name__)


@dataclass
class ServiceContext:
    """Immutable model snapshot plus service-wide settings."""

    cfg: Config
    catalog: Catalog
    env: ConversationEnv
    runtime: ScoringRuntime
    policies: PolicyBundle | None
    kg: KGEmbeddings
    history: dict[int, list[int]]  # per-user items available for session context
    log_path: Path


@dataclass
class LiveSession:
    id: str
    mode: str
    session: Session
    state: ConvState
    agent: object
    sim: SimUserState | None
    created: float
    updated: float
    pending: str = "system"  # whose move: system|user
    last_action: Action | None = None
    rewards: list[float] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


class CreateSessionRequest(BaseModel):
    user: str
    previous_items: list[str] | None = None
    target: str | None = None
    mode: str = "human"
    seed: int | None = None


class FeedbackRequest(BaseModel):
    type: str  # attribute | recommendation
    value: str | None = None          # accept | reject | unknown
    activated: bool = False           # client-side "this activated me" flag
    accepted_item: str | None = None
    reject_all: bool = False


def build_service_context(cfg: Config) -> ServiceContext:
    from . import checkpoint as ckpt
    from .catalog import build_graph, load_dataset, split_interactions
    from .rgcn import Propagation

    catalog = load_dataset(cfg.data.path, cfg.data.format)
    workdir = Path(cfg.data.workdir)
    kg = ckpt.load_kg(workdir / "kg.ckpt")
    model = ckpt.load_recommender(workdir / "recommender.ckpt")
    split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
    prop = Propagation.from_graph(build_graph(split.train))
    runtime = ScoringRuntime(model, prop)
    policies = None
    if cfg.service.agent == "policy":
        policies = ckpt.load_policies(workdir / "policy.ckpt")
    part = catalog if cfg.eval.split == "all" else split.part(cfg.eval.split)
    history = {u: part.interacted_items(u) for u in catalog.users}
    return ServiceContext(
        cfg=cfg, catalog=catalog, env=ConversationEnv(catalog, cfg.env),
        runtime=runtime, policies=policies, kg=kg, history=history,
        log_path=Path(cfg.service.log_path),
    )


class SessionStore:
    def __init__(self, ttl_seconds: int):
        self.ttl = ttl_seconds
        self._sessions: dict[str, LiveSession] = {}
        self._lock = threading.Lock()

    def add(self, live: LiveSession) -> None:
        with self._lock:
            self._expire()
            self._sessions[live.id] = live

    def get(self, sid: str) -> LiveSession:
        with self._lock:
            self._expire()
            live = self._sessions.get(sid)
        if live is None:
            raise HTTPException(status_code=404, detail=f"unknown session {sid}")
        return live

    def _expire(self) -> None:
        cutoff = time.time() - self.ttl
        stale = [sid for sid, s in self._sessions.items() if s.updated < cutoff]
        for sid in stale:
            del self._sessions[sid]


def create_app(ctx: ServiceContext) -> FastAPI:
    app = FastAPI(title="convrec session service")
    store = SessionStore(ctx.cfg.service.session_ttl_seconds)
    counter = {"n": 0}
    counter_lock = threading.Lock()

    def new_agent():
        if ctx.cfg.service.agent == "policy":
            if ctx.policies is None:
                raise HTTPException(status_code=500, detail="no policy checkpoint loaded")
            return PolicyAgent(ctx.runtime, ctx.policies, ctx.cfg.env, mode="greedy")
        return RuleAgent(ctx.runtime, ctx.cfg.env)

    def action_payload(action: Action) -> dict:
        ids = ctx.catalog.ids
        if action.kind == ASK:
            assert action.attribute is not None
            name = ids.attrs[action.attribute]
            return {"kind": "ask", "attribute": name, "display": name}
        items = [
            {"item": ids.items[v], "attributes": sorted(ids.attrs[a]
                                                        for a in ctx.catalog.item_attrs[v])}
            for v in action.items
        ]
        return {"kind": "recommend", "items": items}

    def state_summary(live: LiveSession) -> dict:
        ids = ctx.catalog.ids
        state = live.state
        out = {
            "id": live.id,
            "mode": live.mode,
            "user": ids.users[live.session.user],
            "previous_items": [ids.items[v] for v in live.session.prev_targets],
            "turn": state.turn,
            "candidates": state.n_candidate_items(),
            "accepted_attributes": sorted(ids.attrs[a] for a in state.a_acc),
            "rejected_attributes": sorted(ids.attrs[a] for a in state.a_rej),
            "unknown_attributes": sorted(ids.attrs[a] for a in state.a_unknown),
            "rejected_items": sorted(ids.items[v] for v in state.v_rej),
            "rewards": live.rewards,
            "done": state.done,
            "success": state.success,
            "awaiting": live.pending,
            "transcript": transcript_dicts(state, ids),
        }
        if state.done:
            out["summary"] = termination_summary(live)
        if live.pending == "user" and live.last_action is not None:
            out["pending_action"] = action_payload(live.last_action)
        return out

    def termination_summary(live: LiveSession) -> dict:
        state = live.state
        summary = {
            "success": state.success,
            "turn": state.success_turn,
            "rank": state.accepted_rank,
            "activation_turn": state.activation_turn,
            "total_reward": sum(live.rewards),
        }
        if state.success:
            assert state.success_turn is not None and state.accepted_rank is not None
            summary["hn"] = hn_score(state.success_turn, state.accepted_rank)
        return summary

    def persist(live: LiveSession) -> None:
        record = build_record(live)
        ctx.log_path.parent.mkdir(parents=True, exist_ok=True)
        with open(ctx.log_path, "a") as fh:
            fh.write(record.to_json_line() + "\n")

    def build_record(live: LiveSession) -> EpisodeRecord:
        ids = ctx.catalog.ids
        if live.mode == "simulated":
            return episode_record(live.state, live.session, ids, mode="simulated")
        state = live.state
        targets = [ids.items[v] for v in live.session.prev_targets]
        return EpisodeRecord(
            user=ids.users[live.session.user],
            targets=targets,
            activation=[],
            turns=transcript_dicts(state, ids),
            success=state.success,
            success_turn=state.success_turn,
            accepted_rank=state.accepted_rank,
            activation_turn=state.activation_turn,
            mode="human",
        )

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/v1/sessions", status_code=201)
    def create_session(req: CreateSessionRequest) -> dict:
        ids = ctx.catalog.ids
        try:
            user = ids.user_index(req.user)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown user {req.user!r}")
        if req.mode not in ("human", "simulated"):
            raise HTTPException(status_code=400, detail="mode must be human or simulated")

        with counter_lock:
            counter["n"] += 1
            n = counter["n"]
        seed = req.seed if req.seed is not None else ctx.cfg.service.seed + n
        rng = np.random.default_rng(seed)

        try:
            session = _make_session(ctx, user, req, rng)
        except ValueError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

        agent = new_agent()
        agent.begin_episode(session, rng)
        live = LiveSession(
            id=uuid.uuid4().hex[:12],
            mode=req.mode,
            session=session,
            state=ctx.env.reset(),
            agent=agent,
            sim=SimUserState(session) if req.mode == "simulated" else None,
            created=time.time(),
            updated=time.time(),
        )
        store.add(live)
        logger.info("session %s created (user %s, mode %s)", live.id, req.user, req.mode)
        return state_summary(live)

    @app.get("/v1/sessions/{sid}")
    def get_session(sid: str) -> dict:
        live = store.get(sid)
        with live.lock:
            return state_summary(live)

    @app.post("/v1/sessions/{sid}/turn")
    def next_turn(sid: str) -> dict:
        live = store.get(sid)
        with live.lock:
            if live.state.done:
                raise HTTPException(status_code=409, detail="session already finished")
            if live.pending != "system":
                raise HTTPException(status_code=409, detail="awaiting user feedback")
            action = live.agent.act(live.state, ctx.env)
            live.updated = time.time()
            if live.mode == "simulated":
                assert live.sim is not None
                feedback, reward, done = ctx.env.step(live.state, action, live.sim)
                live.rewards.append(reward)
                if done:
                    persist(live)
                return {
                    "action": action_payload(action),
                    "feedback": {"kind": feedback.kind, "value": feedback.value,
                                 "accepted_rank": feedback.accepted_rank},
                    "state": state_summary(live),
                }
            live.last_action = action
            live.pending = "user"
            return action_payload(action)

    @app.post("/v1/sessions/{sid}/feedback")
    def post_feedback(sid: str, req: FeedbackRequest) -> dict:
        live = store.get(sid)
        with live.lock:
            if live.mode != "human":
                raise HTTPException(status_code=409,
                                    detail="feedback is generated by the simulator")
            if live.state.done:
                raise HTTPException(status_code=409, detail="session already finished")
            if live.pending != "user" or live.last_action is None:
                raise HTTPException(status_code=409, detail="no pending system action")
            action = live.last_action
            feedback = _parse_feedback(ctx, action, req)
            turn_now = live.state.turn
            reward, done = ctx.env.apply(live.state, action, feedback)
            if (action.kind == ASK and feedback.value == "accept" and req.activated
                    and not live.state.activated):
                live.state.activated = True
                live.state.activation_turn = turn_now
            live.rewards.append(reward)
            live.pending = "system"
            live.last_action = None
            live.updated = time.time()
            if done:
                persist(live)
            out = {
                "turn": live.state.turn,
                "candidates": live.state.n_candidate_items(),
                "done": done,
                "success": live.state.success,
                "reward": reward,
            }
            if done:
                out["summary"] = termination_summary(live)
            return out

    @app.get("/v1/metrics")
    def metrics() -> dict:
        if not ctx.log_path.exists():
            return {"episodes": 0, "by_mode": {}}
        records = read_episode_log(ctx.log_path)
        by_mode: dict[str, list[EpisodeRecord]] = {}
        for rec in records:
            by_mode.setdefault(rec.mode, []).append(rec)
        out = {"episodes": len(records), "by_mode": {}}
        for mode, group in sorted(by_mode.items()):
            m = compute_metrics(group, ctx.cfg.env.max_turns, ctx.cfg.env.list_size)
            payload = m.to_dict()
            if mode == "human" and all(r.activation_turn is None for r in group):
                payload.pop("ar_at")
                payload.pop("ar")
            out["by_mode"][mode] = payload
        return out

    static_dir = ctx.cfg.service.static_dir
    if static_dir and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="playground")

    return app


def _make_session(ctx: ServiceContext, user: int, req: CreateSessionRequest,
                  rng: np.random.Generator) -> Session:
    """Assemble the session context: explicit previous items or a sample of
    the user's held-out history."""
    ids = ctx.catalog.ids
    sampled_target: int | None = None
    if req.previous_items:
        try:
            prev = [ids.item_index(v) for v in req.previous_items]
        except KeyError as exc:
            raise ValueError(str(exc))
    else:
        history = ctx.history.get(user, [])
        if len(history) < 2:
            raise ValueError("user has too little history; pass previous_items explicitly")
        n = min(int(rng.integers(ctx.cfg.env.session_min, ctx.cfg.env.session_max,
                                 endpoint=True)), len(history))
        prev = history[: n - 1]
        sampled_target = history[n - 1]  # the chronologically next item

    if req.mode == "simulated":
        if req.target is not None:
            target = ids.item_index(req.target)
        elif sampled_target is not None:
            target = sampled_target
        else:
            raise ValueError("simulated mode with explicit previous_items needs a target")
        targets = tuple(prev) + (target,)
        oracle = tuple(ctx.catalog.item_attrs[v] for v in targets)
        session = Session(user=user, targets=targets, oracle=oracle)
        from .simulator import generate_activation_attributes
        activation = generate_activation_attributes(session, ctx.kg,
                                                    ctx.cfg.env.activation_count)
        return Session(user=user, targets=targets, oracle=oracle, activation=activation)

    # human mode: no ground-truth target; repeat the last context item as a
    # placeholder so the context encoders see exactly the previous items
    targets = tuple(prev) + (prev[-1],)
    oracle = tuple(ctx.catalog.item_attrs[v] for v in targets)
    return Session(user=user, targets=targets, oracle=oracle)


def _parse_feedback(ctx: ServiceContext, action: Action, req: FeedbackRequest) -> Feedback:
    if action.kind == ASK:
        if req.type != "attribute" or req.value not in ("accept", "reject", "unknown"):
            raise HTTPException(status_code=400,
                                detail="pending action is an attribute question")
        return Feedback.for_ask_value(req.value)
    if req.type != "recommendation":
        raise HTTPException(status_code=400, detail="pending action is a recommendation")
    if req.reject_all:
        return Feedback.for_recommend(None)
    if req.accepted_item is None:
        raise HTTPException(status_code=400, detail="need accepted_item or reject_all")
    try:
        item = ctx.catalog.ids.item_index(req.accepted_item)
    except KeyError:
        raise HTTPException(status_code=404, detail=f"unknown item {req.accepted_item!r}")
    if item not in action.items:
        raise HTTPException(status_code=400, detail="accepted item was not recommended")
    return Feedback.for_recommend(action.items.index(item) + 1)


def apply_env_overrides(cfg: Config, env: dict[str, str] | None = None) -> Config:
    """CONVREC_HOST/PORT/WORKDIR/LOG_PATH/STATIC_DIR beat the config file."""
    import os

    env = os.environ if env is None else env
    cfg.service.host = env.get("CONVREC_HOST", cfg.service.host)
    cfg.service.port = int(env.get("CONVREC_PORT", cfg.service.port))
    cfg.data.workdir = env.get("CONVREC_WORKDIR", cfg.data.workdir)
    cfg.service.log_path = env.get("CONVREC_LOG_PATH", cfg.service.log_path)
    cfg.service.static_dir = env.get("CONVREC_STATIC_DIR", cfg.service.static_dir)
    return cfg


def serve(cfg: Config) -> None:
    import uvicorn

    cfg = apply_env_overrides(cfg)
    ctx = build_service_context(cfg)
    app = create_app(ctx)
    uvicorn.run(app, host=cfg.service.host, port=cfg.service.port, log_level="info")
