"""Translational embeddings over the graph, used by the user simulator.

Entities are all graph nodes; the two relations are "interacted-with" and
"has-attribute", both pointing at items. Training minimizes the margin
ranking loss max(0, margin + d(h+r, t) - d(h'+r, t')) with L2 distance,
corrupting either side of each triple with a node of the same role.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .catalog import HeteroGraph
from .config import KGConfig

REL_INTERACT = 0
REL_HAS_ATTR = 1


@dataclass
class KGEmbeddings:
    """Frozen affinity embeddings: one row per user/item/attribute."""

    users: np.ndarray   # (n_users, D)
    items: np.ndarray   # (n_items, D)
    attrs: np.ndarray   # (n_attrs, D)
    relations: np.ndarray  # (2, D)

    def __post_init__(self) -> None:
        for m in (self.users, self.items, self.attrs, self.relations):
            if not np.isfinite(m).all():
                raise ValueError("non-finite affinity embeddings")

    def to_payload(self) -> dict:
        return {
            "users": torch.from_numpy(self.users),
            "items": torch.from_numpy(self.items),
            "attrs": torch.from_numpy(self.attrs),
            "relations": torch.from_numpy(self.relations),
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "KGEmbeddings":
        return cls(
            users=payload["users"].numpy(),
            items=payload["items"].numpy(),
            attrs=payload["attrs"].numpy(),
            relations=payload["relations"].numpy(),
        )


def transe_distance(head: torch.Tensor, rel: torch.Tensor, tail: torch.Tensor) -> torch.Tensor:
    return torch.linalg.vector_norm(head + rel - tail, dim=-1)


def graph_triples(graph: HeteroGraph) -> np.ndarray:
    """(head_node, relation, tail_node) rows; heads are users/attributes, tails items."""
    rows = [(graph.user_node(u), REL_INTERACT, graph.item_node(v)) for u, v in sorted(graph.edges_uv)]
    rows += [(graph.attr_node(a), REL_HAS_ATTR, graph.item_node(v)) for a, v in sorted(graph.edges_av)]
    return np.asarray(rows, dtype=np.int64)


def train_transe(graph: HeteroGraph, config: KGConfig) -> KGEmbeddings:
    """Margin-ranking training, deterministic in config.seed."""
    triples = graph_triples(graph)
    if len(triples) == 0:
        raise ValueError("graph has no edges")

    gen = torch.Generator().manual_seed(config.seed)
    n = graph.n_users + graph.n_items + graph.n_attrs
    bound = 6.0 / np.sqrt(config.dim)
    entities = torch.empty(n, config.dim, dtype=torch.float64).uniform_(-bound, bound, generator=gen)
    relations = torch.empty(2, config.dim, dtype=torch.float64).uniform_(-bound, bound, generator=gen)
    entities = entities / torch.linalg.vector_norm(entities, dim=1, keepdim=True)
    entities.requires_grad_(True)
    relations.requires_grad_(True)

    heads = torch.from_numpy(triples[:, 0])
    rels = torch.from_numpy(triples[:, 1])
    tails = torch.from_numpy(triples[:, 2])
    rel_head_lo = torch.where(rels == REL_INTERACT, 0, graph.n_users + graph.n_items)
    rel_head_hi = torch.where(rels == REL_INTERACT,
                              graph.n_users, graph.n_users + graph.n_items + graph.n_attrs)

    opt = torch.optim.SGD([entities, relations], lr=config.lr)
    m = len(triples)
    for _ in range(config.epochs):
        loss = torch.zeros((), dtype=torch.float64)
        for _ in range(config.negatives):
            corrupt_head = torch.randint(0, 2, (m,), generator=gen, dtype=torch.bool)
            # replacement stays within the head's role; tails are always items
            head_repl = rel_head_lo + torch.floor(
                torch.rand(m, generator=gen, dtype=torch.float64) * (rel_head_hi - rel_head_lo)
            ).long()
            tail_repl = graph.n_users + torch.randint(0, graph.n_items, (m,), generator=gen)
            neg_heads = torch.where(corrupt_head, head_repl, heads)
            neg_tails = torch.where(corrupt_head, tails, tail_repl)

            d_pos = transe_distance(entities[heads], relations[rels], entities[tails])
            d_neg = transe_distance(entities[neg_heads], relations[rels], entities[neg_tails])
            loss = loss + torch.relu(config.margin + d_pos - d_neg).mean()

        opt.zero_grad()
        loss.backward()
        opt.step()
        with torch.no_grad():
            entities /= torch.linalg.vector_norm(entities, dim=1, keepdim=True).clamp_min(1e-12)

    table = entities.detach().numpy()
    return KGEmbeddings(
        users=table[: graph.n_users].copy(),
        items=table[graph.n_users: graph.n_users + graph.n_items].copy(),
        attrs=table[graph.n_users + graph.n_items:].copy(),
        relations=relations.detach().numpy().copy(),
    )
