"""The two decision agents and their state featurization.

The attribute agent picks which candidate attribute to ask from preference
scores, per-attribute entropy over the candidate items, the accepted count,
and turn progress. The conversation agent picks ask-vs-recommend from the
turn history, the candidate-pool size, the top item scores, and the
attribute the other agent would ask. Both are two-layer MLPs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .config import PolicyConfig
from .environment import ConvState
from .recommender import ScoreTable

ACT_ASK = 0
ACT_RECOMMEND = 1


class NothingToAsk(Exception):
    """Raised when the ask pool is empty."""


def entropy_of_attribute(attr: int, v_cand: np.ndarray, item_attr: np.ndarray) -> float:
    """Binary entropy (base 2) of whether a candidate item carries the attribute."""
    total = int(v_cand.sum())
    if total == 0:
        raise ValueError("no candidate items")
    p = float((v_cand & item_attr[:, attr]).sum()) / total
    return _binary_entropy(p)


def _binary_entropy(p: float) -> float:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def attr_entropies(v_cand: np.ndarray, item_attr: np.ndarray) -> np.ndarray:
    """Entropy of every attribute among the candidate items."""
    total = int(v_cand.sum())
    if total == 0:
        raise ValueError("no candidate items")
    p = item_attr[v_cand].sum(axis=0) / total
    out = np.zeros(item_attr.shape[1])
    inner = (p > 0) & (p < 1)
    q = p[inner]
    out[inner] = -q * np.log2(q) - (1 - q) * np.log2(1 - q)
    return out


@dataclass
class AttrState:
    """Featurized ask-decision state: scores block, entropy block, accepted
    count, turn progress; mask marks the askable attributes."""

    vector: np.ndarray
    mask: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.vector)


def build_attr_state(conv: ConvState, scores: ScoreTable, entropies: np.ndarray,
                     max_turns: int) -> AttrState:
    n_attrs = len(conv.a_cand)
    s_pre = np.zeros(n_attrs)
    s_ent = np.zeros(n_attrs)
    for a, score in scores.attr_scores.items():
        if conv.a_cand[a]:
            s_pre[a] = score
    s_ent[conv.a_cand] = entropies[conv.a_cand]
    vec = np.concatenate([s_pre, s_ent, [float(len(conv.a_acc)), conv.turn / max_turns]])
    return AttrState(vector=vec, mask=conv.a_cand.copy())


@dataclass
class ConvPolicyState:
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.vector)


# per-turn history categories
HIS_UNREACHED, HIS_ASK_ACC, HIS_ASK_REJ, HIS_ASK_UNK, HIS_REC_REJ = range(5)


def _history_block(conv: ConvState, max_turns: int) -> np.ndarray:
    his = np.zeros((max_turns, 5))
    his[:, HIS_UNREACHED] = 1.0
    for ev in conv.transcript[:max_turns]:
        row = ev.turn - 1
        if ev.action.kind == "ask":
            cat = {"accept": HIS_ASK_ACC, "reject": HIS_ASK_REJ,
                   "unknown": HIS_ASK_UNK}[ev.feedback.value]
        else:
            if ev.feedback.accepted_rank is not None:
                continue  # success terminates the episode; no later state sees it
            cat = HIS_REC_REJ
        his[row, :] = 0.0
        his[row, cat] = 1.0
    return his.reshape(-1)


def candidate_size_bin(n_candidates: int, n_bins: int = 10) -> int:
    """Log-scaled size bin: bin i covers [10^(i/2), 10^((i+1)/2))."""
    if n_candidates < 1:
        raise ValueError("candidate set cannot be empty")
    return min(int(np.floor(2.0 * np.log10(n_candidates))), n_bins - 1)


def build_conv_state(conv: ConvState, scores: ScoreTable, attr_choice: tuple[float, float] | None,
                     max_turns: int, list_size: int) -> ConvPolicyState:
    """Concatenates history, pool-size bin, top item scores, and the score
    pair (preference, entropy) of the attribute the ask agent would pick."""
    s_his = _history_block(conv, max_turns)
    s_len = np.zeros(10)
    s_len[candidate_size_bin(conv.n_candidate_items())] = 1.0
    top = sorted(scores.item_scores.values(), reverse=True)[:list_size]
    s_item = np.zeros(list_size)
    s_item[: len(top)] = top
    s_attr = np.zeros(2) if attr_choice is None else np.asarray(attr_choice, dtype=float)
    return ConvPolicyState(vector=np.concatenate([s_his, s_len, s_item, s_attr]))


class MLPPolicy(nn.Module):
    """Two affine layers with a ReLU in between."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(in_dim, hidden), nn.ReLU(),
                                 nn.Linear(hidden, out_dim))
        self.double()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.net(x)


@dataclass
class PolicyBundle:
    attr_policy: MLPPolicy
    conv_policy: MLPPolicy
    config: PolicyConfig


def build_policies(n_attrs: int, max_turns: int, list_size: int,
                   config: PolicyConfig) -> PolicyBundle:
    torch.manual_seed(config.seed)
    attr_dim = 2 * n_attrs + 2
    conv_dim = 5 * max_turns + 10 + list_size + 2
    return PolicyBundle(
        attr_policy=MLPPolicy(attr_dim, n_attrs, config.hidden),
        conv_policy=MLPPolicy(conv_dim, 2, config.hidden),
        config=config,
    )


def masked_logits(policy: MLPPolicy, state: AttrState) -> torch.Tensor:
    logits = policy(torch.from_numpy(state.vector))
    mask = torch.from_numpy(state.mask)
    return logits.masked_fill(~mask, float("-inf"))


def attr_policy_act(policy: MLPPolicy, state: AttrState, mode: str = "greedy",
                    rng: np.random.Generator | None = None) -> int:
    """Pick an askable attribute; masked attributes have probability zero."""
    if not state.mask.any():
        raise NothingToAsk("no candidate attributes left")
    with torch.no_grad():
        logits = masked_logits(policy, state).numpy()
    if mode == "greedy":
        return int(np.argmax(logits))  # argmax takes the lowest index on ties
    if mode == "sample":
        assert rng is not None, "sampling needs an rng"
        probs = _softmax(logits)
        return int(rng.choice(len(probs), p=probs))
    raise ValueError(f"unknown mode {mode!r}")


def conv_policy_act(policy: MLPPolicy, state: ConvPolicyState, mode: str = "greedy",
                    rng: np.random.Generator | None = None) -> int:
    with torch.no_grad():
        logits = policy(torch.from_numpy(state.vector)).numpy()
    if mode == "greedy":
        return int(np.argmax(logits))
    if mode == "sample":
        assert rng is not None, "sampling needs an rng"
        probs = _softmax(logits)
        return int(rng.choice(len(probs), p=probs))
    raise ValueError(f"unknown mode {mode!r}")


def _softmax(logits: np.ndarray) -> np.ndarray:
    finite = logits[np.isfinite(logits)]
    z = np.exp(logits - finite.max())
    z[~np.isfinite(logits)] = 0.0
    return z / z.sum()


# -- expert rules ---------------------------------------------------------------


def expert_attr_rule(conv: ConvState, scores: ScoreTable, entropies: np.ndarray) -> int:
    """Before anything is accepted, ask the best-liked attribute; afterwards
    the highest-entropy one. Ties break toward the lower index."""
    cand = conv.candidate_attrs()
    if len(cand) == 0:
        raise NothingToAsk("no candidate attributes left")
    if len(conv.a_acc) < 1:
        values = np.array([scores.attr_scores[a] for a in cand])
    else:
        values = entropies[cand]
    return int(cand[np.argmax(values)])


def expert_conv_rule(turn: int, max_turns: int, rng: np.random.Generator) -> int:
    """Ask with probability 1 - t/T, otherwise recommend."""
    if not (1 <= turn <= max_turns):
        raise ValueError("turn outside the episode range")
    return ACT_ASK if rng.random() < 1.0 - turn / max_turns else ACT_RECOMMEND


def expert_conv_argmax(turn: int, max_turns: int) -> int:
    """The rule's majority action (ask while its probability is >= 1/2)."""
    return ACT_ASK if 1.0 - turn / max_turns >= 0.5 else ACT_RECOMMEND


def expert_conv_argmax_set(turn: int, max_turns: int) -> set[int]:
    """Majority actions of the rule; both actions at the 50/50 turn."""
    p_ask = 1.0 - turn / max_turns
    if p_ask == 0.5:
        return {ACT_ASK, ACT_RECOMMEND}
    return {ACT_ASK} if p_ask > 0.5 else {ACT_RECOMMEND}


# -- updates --------------------------------------------------------------------


def imitation_loss(policy: MLPPolicy, states: np.ndarray, actions: np.ndarray,
                   masks: np.ndarray | None = None) -> torch.Tensor:
    """Mean negative log-likelihood of expert actions."""
    logits = policy(torch.from_numpy(states))
    if masks is not None:
        logits = logits.masked_fill(~torch.from_numpy(masks), float("-inf"))
    return F.cross_entropy(logits, torch.from_numpy(actions))


@dataclass
class AgentTrajectory:
    """Per-agent log of one episode: states, chosen actions, rewards."""

    states: list[np.ndarray]
    actions: list[int]
    rewards: list[float]
    masks: list[np.ndarray] | None = None


def reinforce_surrogate(policy: MLPPolicy, trajectories: list[AgentTrajectory],
                        gamma: float) -> torch.Tensor:
    """Negated policy-gradient objective: -sum_t G~_t * ln pi(a_t | s_t).

    Returns are discounted within each episode and mean-centered across the
    whole batch (skipped when there is only one logged step, so a lone
    episode still produces the textbook update direction).
    """
    from .environment import discounted_returns

    flat_states, flat_actions, flat_masks, flat_returns = [], [], [], []
    for traj in trajectories:
        if not traj.actions:
            continue
        returns = discounted_returns(traj.rewards, gamma)
        flat_states.extend(traj.states)
        flat_actions.extend(traj.actions)
        flat_returns.extend(returns)
        if traj.masks is not None:
            flat_masks.extend(traj.masks)
    if not flat_actions:
        return next(policy.parameters()).sum() * 0.0

    returns_t = torch.tensor(flat_returns, dtype=torch.float64)
    if len(flat_returns) > 1:
        returns_t = returns_t - returns_t.mean()
    logits = policy(torch.from_numpy(np.stack(flat_states)))
    if flat_masks:
        logits = logits.masked_fill(~torch.from_numpy(np.stack(flat_masks)), float("-inf"))
    logp = F.log_softmax(logits, dim=1)
    chosen = logp[torch.arange(len(flat_actions)), torch.tensor(flat_actions)]
    return -(returns_t * chosen).sum()


def reinforce_update(bundle: PolicyBundle,
                     attr_trajectories: list[AgentTrajectory],
                     conv_trajectories: list[AgentTrajectory],
                     gamma: float, lr: float) -> dict[str, float]:
    """One plain-gradient ascent step per agent on its own trajectories."""
    losses = {}
    for name, policy, trajs in (("attr", bundle.attr_policy, attr_trajectories),
                                ("conv", bundle.conv_policy, conv_trajectories)):
        loss = reinforce_surrogate(policy, trajs, gamma)
        opt = torch.optim.SGD(policy.parameters(), lr=lr)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses[name] = loss.detach().item()
    return losses
