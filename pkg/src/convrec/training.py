"""Policy training: imitation pretraining and policy-gradient fine-tuning.

Imitation rolls out the current policies, labels every visited state with
the expert rules, aggregates the pairs, and fits both networks by negative
log-likelihood. Policy-gradient training then improves the pair against
the simulator while the recommendation model stays frozen.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from .agents import PolicyAgent, ScoringRuntime, run_episode
from .catalog import IdMap
from .config import DaggerConfig, EnvConfig, PolicyConfig, ReinforceConfig
from .environment import ConversationEnv
from .policy import (AgentTrajectory, PolicyBundle, expert_attr_rule, expert_conv_rule,
                     imitation_loss, reinforce_update)
from .simulator import SimUserState, Session

logger = logging.getLogger(__name__)


@dataclass
class LabeledSet:
    states: list[np.ndarray] = field(default_factory=list)
    actions: list[int] = field(default_factory=list)
    masks: list[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def extend_capped(self, states, actions, masks, cap: int) -> None:
        room = cap - len(self)
        self.states.extend(states[:room])
        self.actions.extend(actions[:room])
        if masks is not None:
            self.masks.extend(masks[:room])


def _fit(policy, data: LabeledSet, epochs: int, batch_size: int, lr: float,
         rng: np.random.Generator, masked: bool) -> float:
    if not data.actions:
        return 0.0
    states = np.stack(data.states)
    actions = np.asarray(data.actions, dtype=np.int64)
    masks = np.stack(data.masks) if masked else None
    opt = torch.optim.SGD(policy.parameters(), lr=lr)
    last = 0.0
    order = np.arange(len(actions))
    for _ in range(epochs):
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            idx = order[start: start + batch_size]
            loss = imitation_loss(policy, states[idx], actions[idx],
                                  masks[idx] if masks is not None else None)
            opt.zero_grad()
            loss.backward()
            opt.step()
            last = loss.detach().item()
    return last


@dataclass
class DaggerStats:
    dataset_sizes: list[tuple[int, int]] = field(default_factory=list)  # (attr, conv) per iter
    losses: list[dict[str, float]] = field(default_factory=list)


def dagger_pretrain(env: ConversationEnv, sessions: list[Session], runtime: ScoringRuntime,
                    bundle: PolicyBundle, ids: IdMap, env_cfg: EnvConfig,
                    policy_cfg: PolicyConfig, seed: int,
                    config: DaggerConfig | None = None) -> DaggerStats:
    """Iterative imitation of the expert rules on the learner's own states."""
    config = config or policy_cfg.dagger
    stats = DaggerStats()
    attr_data, conv_data = LabeledSet(), LabeledSet()

    for it in range(config.iterations):
        rng = np.random.default_rng([seed, it])
        agent = PolicyAgent(runtime, bundle, env_cfg, mode="sample")
        session_idx = rng.choice(len(sessions),
                                 size=min(config.episodes_per_iter, len(sessions)),
                                 replace=len(sessions) < config.episodes_per_iter)

        it_states_a, it_actions_a, it_masks_a = [], [], []
        it_states_c, it_actions_c = [], []
        for j, si in enumerate(session_idx):
            session = sessions[int(si)]
            sim = SimUserState(session)
            state = env.reset()
            agent.begin_episode(session, np.random.default_rng([seed, it, j]))
            label_rng = np.random.default_rng([seed, it, j, 1])
            done = False
            while not done:
                action = agent.act(state, env)
                decision = agent.last
                assert decision is not None
                if decision.attr_state is not None:
                    it_states_a.append(decision.attr_state.vector)
                    it_masks_a.append(decision.attr_state.mask)
                    it_actions_a.append(
                        expert_attr_rule(state, decision.scores, decision.entropies))
                it_states_c.append(decision.conv_state.vector)
                it_actions_c.append(
                    expert_conv_rule(state.turn, env_cfg.max_turns, label_rng))
                _, _, done = env.step(state, action, sim)

        attr_data.extend_capped(it_states_a, it_actions_a, it_masks_a, config.dataset_cap)
        conv_data.extend_capped(it_states_c, it_actions_c, None, config.dataset_cap)
        stats.dataset_sizes.append((len(attr_data), len(conv_data)))

        fit_rng = np.random.default_rng([seed, it, 999])
        loss_a = _fit(bundle.attr_policy, attr_data, config.epochs_per_iter,
                      config.batch_size, policy_cfg.lr, fit_rng, masked=True)
        loss_c = _fit(bundle.conv_policy, conv_data, config.epochs_per_iter,
                      config.batch_size, policy_cfg.lr, fit_rng, masked=False)
        stats.losses.append({"attr": loss_a, "conv": loss_c})
        logger.info("imitation iter %d: %d/%d pairs, losses attr=%.4f conv=%.4f",
                    it, len(attr_data), len(conv_data), loss_a, loss_c)
    return stats


@dataclass
class ReinforceStats:
    batch_rewards: list[float] = field(default_factory=list)
    success_rates: list[float] = field(default_factory=list)


def reinforce_train(env: ConversationEnv, sessions: list[Session], runtime: ScoringRuntime,
                    bundle: PolicyBundle, ids: IdMap, env_cfg: EnvConfig,
                    policy_cfg: PolicyConfig, seed: int,
                    config: ReinforceConfig | None = None) -> ReinforceStats:
    """On-policy episodes -> discounted-return-weighted log-likelihood steps.

    The ask agent's trajectory covers only its ask turns and sees only the
    ask rewards plus the quit penalty; the conversation agent sees all
    rewards over all turns.
    """
    config = config or policy_cfg.reinforce
    stats = ReinforceStats()
    for b in range(config.batches):
        rng = np.random.default_rng([seed, b])
        agent = PolicyAgent(runtime, bundle, env_cfg, mode="sample")
        session_idx = rng.choice(len(sessions),
                                 size=min(config.episodes_per_batch, len(sessions)),
                                 replace=len(sessions) < config.episodes_per_batch)
        attr_trajs: list[AgentTrajectory] = []
        conv_trajs: list[AgentTrajectory] = []
        total_reward, successes = 0.0, 0
        for j, si in enumerate(session_idx):
            result = run_episode(env, sessions[int(si)], agent,
                                 np.random.default_rng([seed, b, j]), ids, collect=True)
            assert result.attr_trajectory is not None and result.conv_trajectory is not None
            attr_trajs.append(result.attr_trajectory)
            conv_trajs.append(result.conv_trajectory)
            total_reward += sum(result.conv_trajectory.rewards)
            successes += int(result.state.success)
        reinforce_update(bundle, attr_trajs, conv_trajs, policy_cfg.discount, policy_cfg.lr)
        stats.batch_rewards.append(total_reward / len(session_idx))
        stats.success_rates.append(successes / len(session_idx))
        logger.info("policy-gradient batch %d: mean reward %.3f, success %.2f",
                    b, stats.batch_rewards[-1], stats.success_rates[-1])
    return stats
