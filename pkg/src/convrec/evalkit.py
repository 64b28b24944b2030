"""Evaluation metrics and experiment orchestration.

Success rate and activation rate are cumulative-by-turn vectors; average
turns counts failures as the full budget; the rank score rewards early
turns and high list positions and is zero for failures.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .agents import (ExpertAgent, MaxEAgent, OracleAgent, PolicyAgent, RandomAgent,
                     ScoringRuntime, run_episode)
from .catalog import Catalog, build_graph, load_dataset, split_interactions
from .config import Config
from .environment import ConversationEnv, EpisodeRecord, write_episode_log
from .rgcn import Propagation
from .simulator import Session, attach_activation, build_sessions

logger = logging.getLogger(__name__)


def hn_score(turn: int, rank: int) -> float:
    """Rank score on a success at (turn, rank): 1 at (1, 1), strictly
    decreasing in both arguments."""
    if turn < 1 or rank < 1:
        raise ValueError("turn and rank are 1-based")
    base = 1.0 / np.log2(turn + 2)
    bonus = 1.0 / np.log2(turn + 1) - base
    return float(base + bonus / np.log2(rank + 1))


@dataclass
class Metrics:
    sr_at: np.ndarray     # cumulative success rate by turn, length T
    at: float             # mean turns, failures count as T
    hn: float             # mean rank score, failures count 0
    ar_at: np.ndarray     # cumulative activation rate by turn
    episodes: int

    @property
    def sr(self) -> float:
        return float(self.sr_at[-1])

    @property
    def ar(self) -> float:
        return float(self.ar_at[-1])

    def to_dict(self) -> dict:
        return {
            "episodes": self.episodes,
            "sr_at": self.sr_at.tolist(),
            "sr": self.sr,
            "at": self.at,
            "hn": self.hn,
            "ar_at": self.ar_at.tolist(),
            "ar": self.ar,
        }


def compute_metrics(records: Sequence[EpisodeRecord], max_turns: int, list_size: int) -> Metrics:
    if not records:
        raise ValueError("no episodes to evaluate")
    sr = np.zeros(max_turns)
    ar = np.zeros(max_turns)
    turns_sum = 0.0
    hn_sum = 0.0
    for rec in records:
        if rec.success:
            t, k = rec.success_turn, rec.accepted_rank
            assert t is not None and k is not None
            if t > max_turns or k > list_size:
                raise ValueError("episode outcome outside the configured bounds")
            sr[t - 1:] += 1
            turns_sum += t
            hn_sum += hn_score(t, k)
        else:
            turns_sum += max_turns
        if rec.activation_turn is not None and rec.activation_turn <= max_turns:
            ar[rec.activation_turn - 1:] += 1
    n = len(records)
    return Metrics(sr_at=sr / n, at=turns_sum / n, hn=hn_sum / n, ar_at=ar / n, episodes=n)


def format_metrics_table(metrics: Metrics, label: str = "") -> str:
    head = f"episodes={metrics.episodes}" + (f"  agent={label}" if label else "")
    rows = [
        head,
        f"{'metric':<8}{'value':>10}",
        f"{'SR':<8}{metrics.sr:>10.3f}",
        f"{'AT':<8}{metrics.at:>10.2f}",
        f"{'hN':<8}{metrics.hn:>10.3f}",
        f"{'AR':<8}{metrics.ar:>10.3f}",
    ]
    turns = "  ".join(f"{t+1}:{v:.3f}" for t, v in enumerate(metrics.sr_at))
    rows.append(f"SR@t    {turns}")
    return "\n".join(rows)


# -- experiment runner --------------------------------------------------------


@dataclass
class ExperimentArtifacts:
    """Everything a rollout needs, loaded once."""

    catalog: Catalog
    sessions: list[Session]
    env: ConversationEnv
    runtime: ScoringRuntime | None
    bundle: object | None  # PolicyBundle when the policy agent is requested


def build_agent(name: str, artifacts: ExperimentArtifacts, cfg: Config):
    env_cfg = cfg.env
    if name == "random":
        return RandomAgent(env_cfg)
    if name == "oracle":
        return OracleAgent(env_cfg)
    if artifacts.runtime is None:
        raise ValueError(f"agent {name!r} needs a trained recommendation checkpoint")
    if name == "maxe":
        return MaxEAgent(artifacts.runtime, env_cfg)
    if name == "expert":
        return ExpertAgent(artifacts.runtime, env_cfg)
    if name == "policy":
        if artifacts.bundle is None:
            raise ValueError("policy agent needs a policy checkpoint")
        return PolicyAgent(artifacts.runtime, artifacts.bundle, env_cfg, mode="greedy")
    raise ValueError(f"unknown agent {name!r}")


def eval_sessions(cfg: Config, catalog: Catalog) -> list[Session]:
    """Sessions for the configured evaluation split, with activation attached
    by the caller (needs the affinity embeddings)."""
    if cfg.eval.split == "all":
        part = catalog
    else:
        split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
        part = split.part(cfg.eval.split)
    return build_sessions(part, cfg.env, cfg.eval.seed)


def run_rollouts(artifacts: ExperimentArtifacts, agent, cfg: Config,
                 log_path: str | Path | None = None) -> tuple[Metrics, list[EpisodeRecord]]:
    """Roll every session's current subsession; deterministic per seed."""
    records = []
    for i, session in enumerate(artifacts.sessions):
        rng = np.random.default_rng([cfg.eval.seed, i])
        result = run_episode(artifacts.env, session, agent, rng, artifacts.catalog.ids)
        records.append(result.record)
    metrics = compute_metrics(records, cfg.env.max_turns, cfg.env.list_size)
    if log_path:
        write_episode_log(records, log_path)
    return metrics, records


def load_experiment(cfg: Config, need_model: bool = True,
                    need_policy: bool = True) -> ExperimentArtifacts:
    """Load the catalog and checkpoints referenced by the config."""
    from . import checkpoint as ckpt
    from .transe import KGEmbeddings

    catalog = load_dataset(cfg.data.path, cfg.data.format)
    workdir = Path(cfg.data.workdir)

    kg_path = workdir / "kg.ckpt"
    if not kg_path.exists():
        raise FileNotFoundError(f"missing affinity checkpoint {kg_path}; run pretrain-kg")
    kg: KGEmbeddings = ckpt.load_kg(kg_path)

    sessions = attach_activation(eval_sessions(cfg, catalog), kg, cfg.env.activation_count)
    env = ConversationEnv(catalog, cfg.env)

    runtime = None
    bundle = None
    if need_model:
        rec_path = workdir / "recommender.ckpt"
        if not rec_path.exists():
            raise FileNotFoundError(f"missing recommender checkpoint {rec_path}; run pretrain-rec")
        model = ckpt.load_recommender(rec_path)
        split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
        prop = Propagation.from_graph(build_graph(split.train))
        runtime = ScoringRuntime(model, prop)
    if need_policy:
        pol_path = workdir / "policy.ckpt"
        if not pol_path.exists():
            raise FileNotFoundError(f"missing policy checkpoint {pol_path}; run pretrain-policy")
        bundle = ckpt.load_policies(pol_path)

    return ExperimentArtifacts(catalog=catalog, sessions=sessions, env=env,
                               runtime=runtime, bundle=bundle)


def run_experiment(cfg: Config, agent_name: str | None = None,
                   log_path: str | Path | None = None) -> tuple[Metrics, list[EpisodeRecord]]:
    name = agent_name or cfg.eval.agent
    artifacts = load_experiment(cfg, need_model=name not in ("random", "oracle"),
                                need_policy=name == "policy")
    agent = build_agent(name, artifacts, cfg)
    return run_rollouts(artifacts, agent, cfg,
                        log_path if log_path is not None else cfg.eval.log_path)
