"""Relation-aware graph convolution over the user/item/attribute graph.

Message passing treats each edge set as two directed relations with their
own weight matrices (users->items and items->users for interactions,
attributes->items and items->attributes for the attribute map), plus a
per-layer self weight. Messages are normalized by 1/sqrt(deg(dst)*deg(src))
under the shared edge type, summed with the self term, and passed through
ReLU. The encoder output is the mean of all layer embeddings including the
input layer.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .catalog import HeteroGraph

RELATIONS = ("user_item", "item_user", "attr_item", "item_attr")


@dataclass
class Propagation:
    """Precomputed directed edge arrays: dst aggregates from src."""

    n_nodes: int
    edges: dict[str, tuple[torch.Tensor, torch.Tensor, torch.Tensor]]  # rel -> (dst, src, norm)

    @classmethod
    def from_graph(cls, graph: HeteroGraph) -> "Propagation":
        deg_u = np.zeros(graph.n_users, dtype=np.int64)
        deg_v_uv = np.zeros(graph.n_items, dtype=np.int64)
        for u, v in graph.edges_uv:
            deg_u[u] += 1
            deg_v_uv[v] += 1
        deg_a = np.zeros(graph.n_attrs, dtype=np.int64)
        deg_v_av = np.zeros(graph.n_items, dtype=np.int64)
        for a, v in graph.edges_av:
            deg_a[a] += 1
            deg_v_av[v] += 1

        uv = sorted(graph.edges_uv)
        av = sorted(graph.edges_av)

        def tensors(dst: list[int], src: list[int], norm: list[float]):
            return (
                torch.tensor(dst, dtype=torch.long),
                torch.tensor(src, dtype=torch.long),
                torch.tensor(norm, dtype=torch.float64),
            )

        norm_uv = [1.0 / np.sqrt(deg_v_uv[v] * deg_u[u]) for u, v in uv]
        norm_av = [1.0 / np.sqrt(deg_v_av[v] * deg_a[a]) for a, v in av]

        edges = {
            "user_item": tensors([graph.item_node(v) for u, v in uv],
                                 [graph.user_node(u) for u, v in uv], norm_uv),
            "item_user": tensors([graph.user_node(u) for u, v in uv],
                                 [graph.item_node(v) for u, v in uv], norm_uv),
            "attr_item": tensors([graph.item_node(v) for a, v in av],
                                 [graph.attr_node(a) for a, v in av], norm_av),
            "item_attr": tensors([graph.attr_node(a) for a, v in av],
                                 [graph.item_node(v) for a, v in av], norm_av),
        }
        return cls(n_nodes=graph.n_nodes, edges=edges)


class RelationalGraphEncoder(nn.Module):
    """Stack of relation-aware conv layers; forward returns the layer mean."""

    def __init__(self, dim: int, n_layers: int):
        super().__init__()
        self.dim = dim
        self.n_layers = n_layers
        bound = 1.0 / np.sqrt(dim)

        def weight() -> nn.Parameter:
            return nn.Parameter(
                torch.empty(dim, dim, dtype=torch.float64).uniform_(-bound, bound))

        self.self_weights = nn.ParameterList(weight() for _ in range(n_layers))
        self.rel_weights = nn.ModuleList()
        for _ in range(n_layers):
            self.rel_weights.append(nn.ParameterDict({rel: weight() for rel in RELATIONS}))

    def layer(self, embs: torch.Tensor, prop: Propagation, layer_idx: int) -> torch.Tensor:
        """One propagation step: relation messages + self term, then ReLU."""
        if embs.shape[0] != prop.n_nodes:
            raise ValueError(f"embedding rows {embs.shape[0]} != graph nodes {prop.n_nodes}")
        out = embs @ self.self_weights[layer_idx].T
        for rel in RELATIONS:
            dst, src, norm = prop.edges[rel]
            if dst.numel() == 0:
                continue
            msg = (embs[src] * norm.unsqueeze(1)) @ self.rel_weights[layer_idx][rel].T
            out = out.index_add(0, dst, msg)
        return torch.relu(out)

    def forward(self, embs: torch.Tensor, prop: Propagation) -> torch.Tensor:
        layers = [embs]
        for l in range(self.n_layers):
            layers.append(self.layer(layers[-1], prop, l))
        return torch.stack(layers).mean(dim=0)
