"""Conversation environment: state, transitions, rewards, episode records.

Each turn the system either asks one candidate attribute or recommends up
to K candidate items; user feedback shrinks the candidate sets. An episode
ends on a successful recommendation or when the turn budget T runs out, in
which case the quit penalty is added to that turn's reward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .catalog import Catalog, IdMap
from .config import EnvConfig
from .simulator import (AttributeResponse, SimUserState, Session,
                        respond_attribute, respond_recommendation)

ASK = "ask"
RECOMMEND = "recommend"


@dataclass(frozen=True)
class Action:
    kind: str
    attribute: int | None = None
    items: tuple[int, ...] = ()

    @classmethod
    def ask(cls, attribute: int) -> "Action":
        return cls(kind=ASK, attribute=attribute)

    @classmethod
    def recommend(cls, items: Sequence[int]) -> "Action":
        return cls(kind=RECOMMEND, items=tuple(items))


@dataclass(frozen=True)
class Feedback:
    """User reply: accept/reject/unknown for an ask, a 1-based accepted rank
    (or None for reject-all) for a recommendation."""

    kind: str
    value: str | None = None
    accepted_rank: int | None = None

    @classmethod
    def for_ask(cls, response: AttributeResponse) -> "Feedback":
        return cls(kind=ASK, value=response.value)

    @classmethod
    def for_ask_value(cls, value: str) -> "Feedback":
        if value not in ("accept", "reject", "unknown"):
            raise ValueError(f"invalid attribute feedback {value!r}")
        return cls(kind=ASK, value=value)

    @classmethod
    def for_recommend(cls, accepted_rank: int | None) -> "Feedback":
        return cls(kind=RECOMMEND, accepted_rank=accepted_rank)


@dataclass
class TurnEvent:
    turn: int
    action: Action
    feedback: Feedback
    reward: float


@dataclass
class ConvState:
    """Mutable per-episode conversation bookkeeping."""

    turn: int
    a_acc: set[int]
    a_rej: set[int]
    a_unknown: set[int]
    v_rej: set[int]
    v_cand: np.ndarray  # bool mask over items
    a_cand: np.ndarray  # bool mask over attributes
    activated: bool = False
    activation_turn: int | None = None
    done: bool = False
    success: bool = False
    success_turn: int | None = None
    accepted_rank: int | None = None
    transcript: list[TurnEvent] = field(default_factory=list)

    def candidate_items(self) -> np.ndarray:
        return np.flatnonzero(self.v_cand)

    def candidate_attrs(self) -> np.ndarray:
        return np.flatnonzero(self.a_cand)

    def n_candidate_items(self) -> int:
        return int(self.v_cand.sum())


class ConversationEnv:
    """Applies actions and feedback to conversation states.

    The environment never looks at the hidden user; feedback is produced by
    the caller (simulator or a live human) and fed back in.
    """

    def __init__(self, catalog: Catalog, config: EnvConfig):
        self.config = config
        self.n_items = catalog.n_items
        self.n_attrs = catalog.n_attrs
        self.item_attr = catalog.item_attr_matrix()

    def reset(self) -> ConvState:
        return ConvState(
            turn=1,
            a_acc=set(), a_rej=set(), a_unknown=set(), v_rej=set(),
            v_cand=np.ones(self.n_items, dtype=bool),
            a_cand=np.ones(self.n_attrs, dtype=bool),
        )

    def _validate(self, state: ConvState, action: Action) -> None:
        if state.done:
            raise ValueError("episode is already finished")
        if action.kind == ASK:
            if action.attribute is None or not state.a_cand[action.attribute]:
                raise ValueError("asked attribute is not a candidate")
        elif action.kind == RECOMMEND:
            items = action.items
            if not items or len(items) > self.config.list_size:
                raise ValueError(f"recommendation list must have 1..{self.config.list_size} items")
            if len(set(items)) != len(items):
                raise ValueError("recommendation list contains duplicates")
            if not all(state.v_cand[v] for v in items):
                raise ValueError("recommended items must be candidates")
        else:
            raise ValueError(f"unknown action kind {action.kind!r}")

    def apply(self, state: ConvState, action: Action, feedback: Feedback) -> tuple[float, bool]:
        """Transition on externally supplied feedback; returns (reward, done)."""
        self._validate(state, action)
        rw = self.config.rewards
        reward: float

        if action.kind == ASK:
            a = action.attribute
            assert a is not None
            if feedback.kind != ASK or feedback.value not in ("accept", "reject", "unknown"):
                raise ValueError("ask actions need accept/reject/unknown feedback")
            if feedback.value == "accept":
                reward = rw.ask_acc
                state.a_acc.add(a)
                state.v_cand &= self.item_attr[:, a]
                state.a_cand[a] = False
                # drop attributes no remaining candidate carries
                alive = self.item_attr[state.v_cand].any(axis=0)
                state.a_cand &= alive
            elif feedback.value == "reject":
                reward = rw.ask_rej
                state.a_rej.add(a)
                state.a_cand[a] = False
                if self.config.reject_filters_items:
                    state.v_cand &= ~self.item_attr[:, a]
                    alive = self.item_attr[state.v_cand].any(axis=0)
                    state.a_cand &= alive
            else:
                reward = rw.ask_unk
                state.a_unknown.add(a)
                state.a_cand[a] = False
        else:
            if feedback.kind != RECOMMEND:
                raise ValueError("recommend actions need recommendation feedback")
            if feedback.accepted_rank is not None:
                if not (1 <= feedback.accepted_rank <= len(action.items)):
                    raise ValueError("accepted rank outside the recommended list")
                reward = rw.rec_acc
                state.success = True
                state.success_turn = state.turn
                state.accepted_rank = feedback.accepted_rank
                state.done = True
            else:
                reward = rw.rec_rej
                state.v_rej.update(action.items)
                for v in action.items:
                    state.v_cand[v] = False

        if not state.done and state.turn >= self.config.max_turns:
            state.done = True
            reward += rw.quit

        state.transcript.append(TurnEvent(turn=state.turn, action=action,
                                          feedback=feedback, reward=reward))
        if not state.done:
            state.turn += 1
        return reward, state.done

    def step(self, state: ConvState, action: Action,
             sim: SimUserState) -> tuple[Feedback, float, bool]:
        """Let the simulated user answer, then transition.

        Keeps the state's activation mirror in sync with the simulated
        user; with a live human the caller marks activation itself.
        """
        turn_now = state.turn
        was_activated = sim.activated
        if action.kind == ASK:
            assert action.attribute is not None
            feedback = Feedback.for_ask(respond_attribute(sim, action.attribute))
        else:
            feedback = Feedback.for_recommend(respond_recommendation(sim, list(action.items)))
        reward, done = self.apply(state, action, feedback)
        if sim.activated and not was_activated:
            state.activated = True
            state.activation_turn = turn_now
        return feedback, reward, done


def discounted_returns(rewards: Sequence[float], gamma: float) -> list[float]:
    """G_t = r_t + gamma * G_{t+1}, computed right to left."""
    if not (0.0 <= gamma <= 1.0):
        raise ValueError("gamma must be in [0, 1]")
    out = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc = rewards[i] + gamma * acc
        out[i] = acc
    return out


# -- episode records ----------------------------------------------------------

EPISODE_SCHEMA_VERSION = 1


@dataclass
class EpisodeRecord:
    """Serialized transcript of one subsession, the interchange unit between
    evaluation, persistence, and the UI."""

    user: str
    targets: list[str]
    activation: list[str]
    turns: list[dict]
    success: bool
    success_turn: int | None
    accepted_rank: int | None
    activation_turn: int | None
    mode: str = "simulated"
    schema: int = EPISODE_SCHEMA_VERSION

    def to_dict(self) -> dict:
        return {
            "schema": self.schema,
            "mode": self.mode,
            "user": self.user,
            "targets": self.targets,
            "activation": self.activation,
            "turns": self.turns,
            "outcome": {
                "success": self.success,
                "turn": self.success_turn,
                "rank": self.accepted_rank,
            },
            "activation_turn": self.activation_turn,
        }

    def to_json_line(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, raw: dict) -> "EpisodeRecord":
        outcome = raw["outcome"]
        return cls(
            user=raw["user"],
            targets=list(raw.get("targets", [])),
            activation=list(raw.get("activation", [])),
            turns=list(raw["turns"]),
            success=bool(outcome["success"]),
            success_turn=outcome.get("turn"),
            accepted_rank=outcome.get("rank"),
            activation_turn=raw.get("activation_turn"),
            mode=raw.get("mode", "simulated"),
            schema=int(raw.get("schema", EPISODE_SCHEMA_VERSION)),
        )


def _action_to_dict(action: Action, ids: IdMap) -> dict:
    if action.kind == ASK:
        assert action.attribute is not None
        return {"kind": ASK, "attribute": ids.attrs[action.attribute]}
    return {"kind": RECOMMEND, "items": [ids.items[v] for v in action.items]}


def _feedback_to_dict(feedback: Feedback) -> dict:
    if feedback.kind == ASK:
        return {"kind": "attribute", "value": feedback.value}
    return {"kind": "recommendation", "accepted_rank": feedback.accepted_rank}


def transcript_dicts(state: ConvState, ids: IdMap) -> list[dict]:
    return [
        {
            "turn": ev.turn,
            "action": _action_to_dict(ev.action, ids),
            "feedback": _feedback_to_dict(ev.feedback),
            "reward": ev.reward,
        }
        for ev in state.transcript
    ]


def episode_record(state: ConvState, session: Session, ids: IdMap,
                   mode: str = "simulated") -> EpisodeRecord:
    turns = transcript_dicts(state, ids)
    return EpisodeRecord(
        user=ids.users[session.user],
        targets=[ids.items[v] for v in session.targets],
        activation=sorted(ids.attrs[a] for a in session.activation or ()),
        turns=turns,
        success=state.success,
        success_turn=state.success_turn,
        accepted_rank=state.accepted_rank,
        activation_turn=state.activation_turn,
        mode=mode,
    )


def write_episode_log(records: Sequence[EpisodeRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(rec.to_json_line() + "\n")


def read_episode_log(path) -> list[EpisodeRecord]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(EpisodeRecord.from_dict(json.loads(line)))
    return out
