"""Command-line entry points for the whole pipeline.

Typical flow: make-synthetic (or bring your own data) -> ingest ->
pretrain-kg -> pretrain-rec -> pretrain-policy -> train-policy -> eval.
`serve` starts the live session service; `rec-eval` and `policy-trace`
inspect the trained stack on a single state or episode.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .catalog import build_graph, load_dataset, save_dataset, split_interactions
from .config import Config, load_config
from .environment import read_episode_log
from .evalkit import compute_metrics, format_metrics_table, run_experiment
from .rgcn import Propagation

logger = logging.getLogger(__name__)


def _load_cfg(args: argparse.Namespace) -> Config:
    return load_config(args.config)


def _workdir(cfg: Config) -> Path:
    wd = Path(cfg.data.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _train_sessions(cfg: Config, catalog, kg):
    from .simulator import attach_activation, build_sessions

    split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
    sessions = build_sessions(split.train, cfg.env, cfg.model.seed)
    return split, attach_activation(sessions, kg, cfg.env.activation_count)


def cmd_ingest(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    wd = _workdir(cfg)
    catalog.ids.save(wd / "idmap.json")
    print(f"loaded {catalog.n_users} users, {catalog.n_items} items, "
          f"{catalog.n_attrs} attributes; id map -> {wd / 'idmap.json'}")
    return 0


def cmd_pretrain_kg(args: argparse.Namespace) -> int:
    from . import checkpoint as ckpt
    from .transe import train_transe

    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
    graph = build_graph(split.train)
    kg = train_transe(graph, cfg.model.kg)
    out = _workdir(cfg) / "kg.ckpt"
    ckpt.save_kg(kg, out)
    print(f"affinity embeddings trained on {len(graph.edges_uv)} interaction edges -> {out}")
    return 0


def cmd_pretrain_rec(args: argparse.Namespace) -> int:
    from . import checkpoint as ckpt
    from .recommender import pretrain_recommender

    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    kg = ckpt.load_kg(_workdir(cfg) / "kg.ckpt")
    split, sessions = _train_sessions(cfg, catalog, kg)
    prop = Propagation.from_graph(build_graph(split.train))
    result = pretrain_recommender(sessions, split.train, prop, cfg.model)
    out = _workdir(cfg) / "recommender.ckpt"
    ckpt.save_recommender(result.model, out)
    final = result.history[-1]["loss"] if result.history else float("nan")
    print(f"recommender pretrained on {len(sessions)} sessions "
          f"({cfg.model.epochs} epochs, final loss {final:.3f}) -> {out}")
    return 0


def cmd_pretrain_policy(args: argparse.Namespace) -> int:
    from . import checkpoint as ckpt
    from .agents import ScoringRuntime
    from .environment import ConversationEnv
    from .policy import build_policies
    from .training import dagger_pretrain

    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    wd = _workdir(cfg)
    kg = ckpt.load_kg(wd / "kg.ckpt")
    model = ckpt.load_recommender(wd / "recommender.ckpt")
    split, sessions = _train_sessions(cfg, catalog, kg)
    runtime = ScoringRuntime(model, Propagation.from_graph(build_graph(split.train)))
    env = ConversationEnv(catalog, cfg.env)
    bundle = build_policies(catalog.n_attrs, cfg.env.max_turns, cfg.env.list_size, cfg.policy)
    stats = dagger_pretrain(env, sessions, runtime, bundle, catalog.ids, cfg.env,
                            cfg.policy, cfg.policy.seed)
    out = wd / "policy.ckpt"
    ckpt.save_policies(bundle, out)
    sizes = stats.dataset_sizes[-1] if stats.dataset_sizes else (0, 0)
    print(f"policies imitation-pretrained ({cfg.policy.dagger.iterations} iterations, "
          f"{sizes[0]}/{sizes[1]} labeled pairs) -> {out}")
    return 0


def cmd_train_policy(args: argparse.Namespace) -> int:
    from . import checkpoint as ckpt
    from .agents import ScoringRuntime
    from .environment import ConversationEnv
    from .training import reinforce_train

    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    wd = _workdir(cfg)
    kg = ckpt.load_kg(wd / "kg.ckpt")
    model = ckpt.load_recommender(wd / "recommender.ckpt")
    bundle = ckpt.load_policies(wd / "policy.ckpt")
    split, sessions = _train_sessions(cfg, catalog, kg)
    runtime = ScoringRuntime(model, Propagation.from_graph(build_graph(split.train)))
    env = ConversationEnv(catalog, cfg.env)
    stats = reinforce_train(env, sessions, runtime, bundle, catalog.ids, cfg.env,
                            cfg.policy, cfg.policy.seed)
    ckpt.save_policies(bundle, wd / "policy.ckpt")
    last_sr = stats.success_rates[-1] if stats.success_rates else float("nan")
    print(f"policies trained with policy gradient "
          f"({cfg.policy.reinforce.batches} batches, last train SR {last_sr:.2f}) "
          f"-> {wd / 'policy.ckpt'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    if args.from_log:
        records = read_episode_log(args.from_log)
        metrics = compute_metrics(records, cfg.env.max_turns, cfg.env.list_size)
        label = f"log:{args.from_log}"
    else:
        log_path = args.log or cfg.eval.log_path
        metrics, _ = run_experiment(cfg, agent_name=args.agent, log_path=log_path)
        label = args.agent or cfg.eval.agent
        print(f"episode log -> {log_path}", file=sys.stderr)
    if args.json or cfg.eval.emit_json:
        print(json.dumps(metrics.to_dict(), sort_keys=True))
    else:
        print(format_metrics_table(metrics, label))
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_cfg(args)
    log_path = args.log or cfg.eval.log_path
    metrics, records = run_experiment(cfg, agent_name=args.agent, log_path=log_path)
    print(f"simulated {len(records)} episodes -> {log_path}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import serve

    serve(_load_cfg(args))
    return 0


def cmd_rec_eval(args: argparse.Namespace) -> int:
    import torch

    from . import checkpoint as ckpt
    from .agents import ScoringRuntime
    from .simulator import Session

    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    wd = _workdir(cfg)
    model = ckpt.load_recommender(wd / "recommender.ckpt")
    split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
    runtime = ScoringRuntime(model, Propagation.from_graph(build_graph(split.train)))

    state = json.loads(Path(args.state).read_text())
    ids = catalog.ids
    user = ids.user_index(state["user"])
    prev = [ids.item_index(v) for v in state["previous_items"]]
    a_acc = [ids.attr_index(a) for a in state.get("accepted_attributes", [])]
    a_rej = [ids.attr_index(a) for a in state.get("rejected_attributes", [])]
    a_unk = [ids.attr_index(a) for a in state.get("unknown_attributes", [])]
    v_rej = [ids.item_index(v) for v in state.get("rejected_items", [])]

    matrix = catalog.item_attr_matrix()
    v_cand = np.ones(catalog.n_items, dtype=bool)
    for a in a_acc:
        v_cand &= matrix[:, a]
    v_cand[v_rej] = False
    a_cand = np.ones(catalog.n_attrs, dtype=bool)
    a_cand[a_acc + a_rej + a_unk] = False
    a_cand &= matrix[v_cand].any(axis=0)

    oracle_sets = [catalog.item_attrs[v] for v in prev]
    scorer = runtime.episode(Session(
        user=user, targets=tuple(prev) + (prev[-1],),
        oracle=tuple(oracle_sets) + (oracle_sets[-1],)))
    with torch.no_grad():
        e_item, e_attr = runtime.model.turn_interests(scorer.ctx, v_rej, a_acc, a_rej)
        items = np.flatnonzero(v_cand).tolist()
        attrs = np.flatnonzero(a_cand).tolist()
        item_scores = runtime.model.score_items(e_item, runtime.embs, items).numpy()
        attr_scores = (runtime.model.score_attrs(e_attr, runtime.embs, attrs).numpy()
                       if attrs else np.zeros(0))

    ranked_items = sorted(zip(items, item_scores), key=lambda p: (-p[1], p[0]))
    ranked_attrs = sorted(zip(attrs, attr_scores), key=lambda p: (-p[1], p[0]))
    print(json.dumps({
        "items": [{"item": ids.items[v], "score": float(s)} for v, s in ranked_items[: args.top]],
        "attributes": [{"attribute": ids.attrs[a], "score": float(s)}
                       for a, s in ranked_attrs[: args.top]],
    }, sort_keys=True))
    return 0


def cmd_policy_trace(args: argparse.Namespace) -> int:
    from . import checkpoint as ckpt
    from .agents import PolicyAgent, ScoringRuntime, run_episode
    from .environment import ConversationEnv
    from .simulator import session_from_dict

    cfg = _load_cfg(args)
    catalog = load_dataset(cfg.data.path, cfg.data.format)
    wd = _workdir(cfg)
    model = ckpt.load_recommender(wd / "recommender.ckpt")
    bundle = ckpt.load_policies(wd / "policy.ckpt")
    split = split_interactions(catalog, cfg.data.split, cfg.data.seed)
    runtime = ScoringRuntime(model, Propagation.from_graph(build_graph(split.train)))
    env = ConversationEnv(catalog, cfg.env)

    session = session_from_dict(json.loads(Path(args.session).read_text()), catalog)
    if session.activation is None:
        kg = ckpt.load_kg(wd / "kg.ckpt")
        from .simulator import attach_activation
        session = attach_activation([session], kg, cfg.env.activation_count)[0]
    agent = PolicyAgent(runtime, bundle, cfg.env, mode="greedy")
    result = run_episode(env, session, agent, np.random.default_rng(cfg.eval.seed),
                         catalog.ids, trace=True)
    print(json.dumps({
        "episode": result.record.to_dict(),
        "trace": result.trace,
    }, sort_keys=True))
    return 0


def cmd_make_synthetic(args: argparse.Namespace) -> int:
    from .synthetic import make_benchmark_catalog, make_unique_attr_catalog

    if args.preset == "unique":
        catalog = make_unique_attr_catalog(seed=args.seed)
    else:
        catalog = make_benchmark_catalog(seed=args.seed)
    save_dataset(catalog, args.out)
    print(f"wrote {args.preset} synthetic dataset ({catalog.n_users} users, "
          f"{catalog.n_items} items, {catalog.n_attrs} attributes) -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convrec", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, fn, help_: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", default=None, help="JSON config file")
        p.set_defaults(fn=fn)
        return p

    add("ingest", cmd_ingest, "validate a dataset and persist the id map")
    add("pretrain-kg", cmd_pretrain_kg, "train the affinity embeddings")
    add("pretrain-rec", cmd_pretrain_rec, "pretrain the recommendation model")
    add("pretrain-policy", cmd_pretrain_policy, "imitation-pretrain the policies")
    add("train-policy", cmd_train_policy, "policy-gradient training")

    p = add("eval", cmd_eval, "roll out an agent and print metrics")
    p.add_argument("--agent", default=None,
                   choices=["policy", "expert", "maxe", "random", "oracle"])
    p.add_argument("--log", default=None, help="episode log output path")
    p.add_argument("--from-log", default=None, help="recompute metrics from an episode log")
    p.add_argument("--json", action="store_true", help="emit metrics as JSON")

    p = add("simulate", cmd_simulate, "roll out episodes and write the log")
    p.add_argument("--agent", default=None,
                   choices=["policy", "expert", "maxe", "random", "oracle"])
    p.add_argument("--log", default=None)

    add("serve", cmd_serve, "start the HTTP session service")

    p = add("rec-eval", cmd_rec_eval, "rank candidates for a serialized conversation state")
    p.add_argument("--state", required=True, help="JSON conversation state file")
    p.add_argument("--top", type=int, default=20)

    p = add("policy-trace", cmd_policy_trace, "dump per-turn states/logits for one episode")
    p.add_argument("--session", required=True, help="session JSON file")

    p = add("make-synthetic", cmd_make_synthetic, "generate a synthetic dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=["unique", "benchmark"], default="benchmark")
    p.add_argument("--seed", type=int, default=0)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
