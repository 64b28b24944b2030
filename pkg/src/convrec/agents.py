"""Acting strategies over the conversation environment plus the rollout loop.

Every agent maps a conversation state to an action. The learned agent runs
the two policy networks; the rule-based ones (expert, max-entropy, random,
oracle, threshold rule) exist for pretraining, baselines, and tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .config import EnvConfig
from .environment import (ASK, Action, ConversationEnv, ConvState, EpisodeRecord,
                          episode_record)
from .catalog import IdMap
from .policy import (ACT_ASK, ACT_RECOMMEND, AgentTrajectory, AttrState, ConvPolicyState,
                     PolicyBundle, attr_entropies, attr_policy_act, build_attr_state,
                     build_conv_state, conv_policy_act, expert_attr_rule, expert_conv_rule,
                     masked_logits)
from .recommender import ContextRecommender, EpisodeContext, ScoreTable
from .rgcn import Propagation
from .simulator import SimUserState, Session

logger = logging.getLogger(__name__)


class ScoringRuntime:
    """A frozen recommender plus the graph embeddings computed once."""

    def __init__(self, model: ContextRecommender, prop: Propagation):
        self.model = model
        model.eval()
        with torch.no_grad():
            self.embs = model.node_embeddings(prop)

    def episode(self, session: Session) -> "EpisodeScorer":
        with torch.no_grad():
            ctx = self.model.episode_context(self.embs, session.user,
                                             list(session.prev_targets),
                                             list(session.prev_oracle))
        return EpisodeScorer(self.model, ctx)


class EpisodeScorer:
    def __init__(self, model: ContextRecommender, ctx: EpisodeContext):
        self.model = model
        self.ctx = ctx

    def score(self, conv: ConvState) -> ScoreTable:
        with torch.no_grad():
            e_item, e_attr = self.model.turn_interests(
                self.ctx, conv.v_rej, conv.a_acc, conv.a_rej)
            v_cand = conv.candidate_items().tolist()
            a_cand = conv.candidate_attrs().tolist()
            items = self.model.score_items(e_item, self.ctx.embs, v_cand).numpy()
            table = ScoreTable(item_scores=dict(zip(v_cand, items.tolist())), attr_scores={})
            if a_cand:
                attrs = self.model.score_attrs(e_attr, self.ctx.embs, a_cand).numpy()
                table.attr_scores = dict(zip(a_cand, attrs.tolist()))
        return table


def top_k_items(scores: ScoreTable, k: int) -> tuple[int, ...]:
    """Highest-scoring candidate items, ties toward the lower index."""
    ranked = sorted(scores.item_scores, key=lambda v: (-scores.item_scores[v], v))
    return tuple(ranked[:k])


@dataclass
class TurnDecision:
    """What the learned agent saw and chose on one turn."""

    scores: ScoreTable
    entropies: np.ndarray
    attr_state: AttrState | None
    conv_state: ConvPolicyState
    conv_action: int
    attr_action: int | None
    executed: Action


class PolicyAgent:
    """Greedy or sampling actor over the trained policy pair."""

    def __init__(self, runtime: ScoringRuntime, bundle: PolicyBundle, env_cfg: EnvConfig,
                 mode: str = "greedy"):
        self.runtime = runtime
        self.bundle = bundle
        self.env_cfg = env_cfg
        self.mode = mode
        self.scorer: EpisodeScorer | None = None
        self.last: TurnDecision | None = None

    def begin_episode(self, session: Session, rng: np.random.Generator) -> None:
        self.scorer = self.runtime.episode(session)
        self.rng = rng

    def act(self, conv: ConvState, env: ConversationEnv) -> Action:
        assert self.scorer is not None, "begin_episode was not called"
        scores = self.scorer.score(conv)
        entropies = attr_entropies(conv.v_cand, env.item_attr)

        attr_state: AttrState | None = None
        attr_action: int | None = None
        attr_choice: tuple[float, float] | None = None
        if conv.a_cand.any():
            attr_state = build_attr_state(conv, scores, entropies, self.env_cfg.max_turns)
            attr_action = attr_policy_act(self.bundle.attr_policy, attr_state,
                                          self.mode, self.rng)
            attr_choice = (scores.attr_scores[attr_action], float(entropies[attr_action]))

        conv_state = build_conv_state(conv, scores, attr_choice,
                                      self.env_cfg.max_turns, self.env_cfg.list_size)
        conv_action = conv_policy_act(self.bundle.conv_policy, conv_state, self.mode, self.rng)

        if conv_action == ACT_ASK and attr_action is None:
            logger.debug("ask chosen with an empty ask pool; falling back to recommend")
            conv_action = ACT_RECOMMEND
        if conv_action == ACT_ASK:
            executed = Action.ask(int(attr_action))  # type: ignore[arg-type]
        else:
            executed = Action.recommend(top_k_items(scores, self.env_cfg.list_size))

        self.last = TurnDecision(scores=scores, entropies=entropies, attr_state=attr_state,
                                 conv_state=conv_state, conv_action=conv_action,
                                 attr_action=attr_action if conv_action == ACT_ASK else None,
                                 executed=executed)
        return executed

    def trace_payload(self, conv: ConvState) -> dict:
        """Loggable view of the last decision (states, logits, choice)."""
        assert self.last is not None
        with torch.no_grad():
            conv_logits = self.bundle.conv_policy(
                torch.from_numpy(self.last.conv_state.vector)).numpy().tolist()
            attr_logits = None
            if self.last.attr_state is not None:
                attr_logits = masked_logits(self.bundle.attr_policy,
                                            self.last.attr_state).numpy().tolist()
        return {
            "turn": conv.turn,
            "conv_state": self.last.conv_state.vector.tolist(),
            "conv_logits": conv_logits,
            "attr_state": (self.last.attr_state.vector.tolist()
                           if self.last.attr_state is not None else None),
            "attr_logits": attr_logits,
            "conv_action": "ask" if self.last.conv_action == ACT_ASK else "recommend",
            "attr_action": self.last.attr_action,
        }


class ExpertAgent:
    """Hand-coded teacher: best-liked attribute until one is accepted, then
    max entropy; ask probability decays linearly with the turn."""

    def __init__(self, runtime: ScoringRuntime, env_cfg: EnvConfig):
        self.runtime = runtime
        self.env_cfg = env_cfg
        self.scorer: EpisodeScorer | None = None

    def begin_episode(self, session: Session, rng: np.random.Generator) -> None:
        self.scorer = self.runtime.episode(session)
        self.rng = rng

    def act(self, conv: ConvState, env: ConversationEnv) -> Action:
        assert self.scorer is not None
        scores = self.scorer.score(conv)
        if conv.a_cand.any() and expert_conv_rule(conv.turn, self.env_cfg.max_turns,
                                                  self.rng) == ACT_ASK:
            entropies = attr_entropies(conv.v_cand, env.item_attr)
            return Action.ask(expert_attr_rule(conv, scores, entropies))
        return Action.recommend(top_k_items(scores, self.env_cfg.list_size))


def maxe_action(conv: ConvState, scores: ScoreTable, entropies: np.ndarray,
                rng: np.random.Generator, p_ask: float, list_size: int) -> Action:
    """Max-entropy baseline step: ask the highest-entropy candidate attribute
    with probability p_ask, otherwise recommend the top-scored items."""
    if conv.a_cand.any() and rng.random() < p_ask:
        cand = conv.candidate_attrs()
        return Action.ask(int(cand[np.argmax(entropies[cand])]))
    return Action.recommend(top_k_items(scores, list_size))


class MaxEAgent:
    """Entropy-first baseline with a linearly decaying ask schedule."""

    def __init__(self, runtime: ScoringRuntime, env_cfg: EnvConfig):
        self.runtime = runtime
        self.env_cfg = env_cfg
        self.scorer: EpisodeScorer | None = None

    def p_ask(self, turn: int) -> float:
        return 1.0 - turn / self.env_cfg.max_turns

    def begin_episode(self, session: Session, rng: np.random.Generator) -> None:
        self.scorer = self.runtime.episode(session)
        self.rng = rng

    def act(self, conv: ConvState, env: ConversationEnv) -> Action:
        assert self.scorer is not None
        scores = self.scorer.score(conv)
        entropies = attr_entropies(conv.v_cand, env.item_attr)
        return maxe_action(conv, scores, entropies, self.rng, self.p_ask(conv.turn),
                           self.env_cfg.list_size)


class RandomAgent:
    """Uniform ask/recommend with uniform choices; the lower baseline."""

    def __init__(self, env_cfg: EnvConfig):
        self.env_cfg = env_cfg

    def begin_episode(self, session: Session, rng: np.random.Generator) -> None:
        self.rng = rng

    def act(self, conv: ConvState, env: ConversationEnv) -> Action:
        cand_attrs = conv.candidate_attrs()
        if len(cand_attrs) and self.rng.random() < 0.5:
            return Action.ask(int(self.rng.choice(cand_attrs)))
        items = conv.candidate_items()
        k = min(self.env_cfg.list_size, len(items))
        picks = self.rng.choice(items, size=k, replace=False)
        return Action.recommend(tuple(int(v) for v in picks))


class OracleAgent:
    """Constructive upper bound that reads the hidden session: asks an
    activation attribute first, then the remaining target attributes, and
    recommends once the candidate pool fits in one list."""

    def __init__(self, env_cfg: EnvConfig):
        self.env_cfg = env_cfg

    def begin_episode(self, session: Session, rng: np.random.Generator) -> None:
        assert session.activation is not None
        self.activation = sorted(session.activation)
        self.target_attrs = sorted(session.oracle[-1])
        self.asked: set[int] = set()

    def act(self, conv: ConvState, env: ConversationEnv) -> Action:
        items = conv.candidate_items()
        if len(items) <= self.env_cfg.list_size:
            return Action.recommend(tuple(int(v) for v in items))
        for pool in (self.activation, self.target_attrs):
            for a in pool:
                if a not in self.asked and conv.a_cand[a]:
                    self.asked.add(a)
                    return Action.ask(a)
        return Action.recommend(tuple(int(v) for v in items[: self.env_cfg.list_size]))


class RuleAgent:
    """Deterministic service fallback: ask the best-liked candidate attribute
    while the pool is bigger than one list, otherwise recommend."""

    def __init__(self, runtime: ScoringRuntime, env_cfg: EnvConfig):
        self.runtime = runtime
        self.env_cfg = env_cfg
        self.scorer: EpisodeScorer | None = None

    def begin_episode(self, session: Session, rng: np.random.Generator) -> None:
        self.scorer = self.runtime.episode(session)

    def act(self, conv: ConvState, env: ConversationEnv) -> Action:
        assert self.scorer is not None
        scores = self.scorer.score(conv)
        if conv.n_candidate_items() > self.env_cfg.list_size and conv.a_cand.any():
            best = max(scores.attr_scores, key=lambda a: (scores.attr_scores[a], -a))
            return Action.ask(best)
        return Action.recommend(top_k_items(scores, self.env_cfg.list_size))


# -- rollouts -------------------------------------------------------------------


@dataclass
class RolloutResult:
    record: EpisodeRecord
    state: ConvState
    attr_trajectory: AgentTrajectory | None = None
    conv_trajectory: AgentTrajectory | None = None
    trace: list[dict] = field(default_factory=list)


def run_episode(env: ConversationEnv, session: Session, agent, rng: np.random.Generator,
                ids: IdMap, collect: bool = False, trace: bool = False) -> RolloutResult:
    """Play out the current subsession of one session against the simulator."""
    sim = SimUserState(session)
    state = env.reset()
    agent.begin_episode(session, rng)

    attr_traj = AgentTrajectory(states=[], actions=[], rewards=[], masks=[])
    conv_traj = AgentTrajectory(states=[], actions=[], rewards=[])
    steps: list[dict] = []
    done = False
    while not done:
        action = agent.act(state, env)
        decision = getattr(agent, "last", None)
        if trace and hasattr(agent, "trace_payload"):
            steps.append(agent.trace_payload(state))
        feedback, reward, done = env.step(state, action, sim)

        if collect and isinstance(decision, TurnDecision):
            conv_traj.states.append(decision.conv_state.vector)
            conv_traj.actions.append(decision.conv_action)
            conv_traj.rewards.append(reward)
            if decision.attr_action is not None and decision.attr_state is not None:
                attr_traj.states.append(decision.attr_state.vector)
                attr_traj.masks.append(decision.attr_state.mask)
                attr_traj.actions.append(decision.attr_action)
                attr_traj.rewards.append(reward)

    if collect and not state.success and attr_traj.rewards:
        last = state.transcript[-1]
        if last.action.kind != ASK:
            # quit penalty reaches the ask agent even when the final turn
            # was a recommendation
            attr_traj.rewards[-1] += env.config.rewards.quit

    record = episode_record(state, session, ids)
    return RolloutResult(
        record=record,
        state=state,
        attr_trajectory=attr_traj if collect else None,
        conv_trajectory=conv_traj if collect else None,
        trace=steps,
    )
