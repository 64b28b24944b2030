import numpy as np
import pytest
import torch

from convrec.catalog import Catalog, HeteroGraph, IdMap


@pytest.fixture(autouse=True)
def single_thread_torch():
    torch.set_num_threads(1)


def make_catalog(n_users, item_attrs, interactions):
    """Hand-build a catalog from role-local structures."""
    n_items = len(item_attrs)
    n_attrs = max((a for s in item_attrs for a in s), default=-1) + 1
    ids = IdMap(
        users=tuple(f"u{i}" for i in range(n_users)),
        items=tuple(f"i{i}" for i in range(n_items)),
        attrs=tuple(f"a{i}" for i in range(n_attrs)),
    )
    return Catalog(
        n_users=n_users,
        n_items=n_items,
        n_attrs=n_attrs,
        item_attrs=[frozenset(s) for s in item_attrs],
        interactions={u: list(ev) for u, ev in interactions.items()},
        ids=ids,
    )


@pytest.fixture
def tiny_catalog():
    """3 users, 5 items, 4 attributes."""
    return make_catalog(
        n_users=3,
        item_attrs=[{0, 1}, {1, 2}, {2}, {3, 0}, {1, 3}],
        interactions={
            0: [(0, 1), (1, 2), (2, 3), (3, 4)],
            1: [(1, 1), (4, 2)],
            2: [(2, 5), (0, 6), (4, 7)],
        },
    )


def random_graph(rng, max_users=4, max_items=3, max_attrs=3):
    """Random graph of at most 10 nodes where every item has >= 1 attribute."""
    n_users = int(rng.integers(1, max_users + 1))
    n_items = int(rng.integers(1, max_items + 1))
    n_attrs = int(rng.integers(1, max_attrs + 1))
    edges_uv = {(int(u), int(v)) for u in range(n_users) for v in range(n_items)
                if rng.random() < 0.4}
    edges_av = set()
    for v in range(n_items):
        attrs = rng.choice(n_attrs, size=int(rng.integers(1, n_attrs + 1)), replace=False)
        edges_av |= {(int(a), v) for a in attrs}
    return HeteroGraph(n_users=n_users, n_items=n_items, n_attrs=n_attrs,
                       edges_uv=frozenset(edges_uv), edges_av=frozenset(edges_av))


def brute_force_layer(graph: HeteroGraph, emb: np.ndarray, rel_w: dict, w0: np.ndarray) -> np.ndarray:
    """Independent per-node evaluation of one conv layer via explicit
    neighbor lists (double loop, no vectorization)."""
    n = graph.n_nodes
    users_of_item = {v: [] for v in range(graph.n_items)}
    items_of_user = {u: [] for u in range(graph.n_users)}
    for u, v in graph.edges_uv:
        users_of_item[v].append(u)
        items_of_user[u].append(v)
    attrs_of_item = {v: [] for v in range(graph.n_items)}
    items_of_attr = {a: [] for a in range(graph.n_attrs)}
    for a, v in graph.edges_av:
        attrs_of_item[v].append(a)
        items_of_attr[a].append(v)

    out = np.zeros_like(emb)
    for node in range(n):
        acc = w0 @ emb[node]
        if node < graph.n_users:
            u = node
            for v in items_of_user[u]:
                norm = 1.0 / np.sqrt(len(items_of_user[u]) * len(users_of_item[v]))
                acc = acc + norm * (rel_w["item_user"] @ emb[graph.item_node(v)])
        elif node < graph.n_users + graph.n_items:
            v = node - graph.n_users
            for u in users_of_item[v]:
                norm = 1.0 / np.sqrt(len(users_of_item[v]) * len(items_of_user[u]))
                acc = acc + norm * (rel_w["user_item"] @ emb[graph.user_node(u)])
            for a in attrs_of_item[v]:
                norm = 1.0 / np.sqrt(len(attrs_of_item[v]) * len(items_of_attr[a]))
                acc = acc + norm * (rel_w["attr_item"] @ emb[graph.attr_node(a)])
        else:
            a = node - graph.n_users - graph.n_items
            for v in items_of_attr[a]:
                norm = 1.0 / np.sqrt(len(items_of_attr[a]) * len(attrs_of_item[v]))
                acc = acc + norm * (rel_w["item_attr"] @ emb[graph.item_node(v)])
        out[node] = np.maximum(acc, 0.0)
    return out
