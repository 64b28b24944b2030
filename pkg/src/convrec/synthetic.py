"""Synthetic catalogs for tests, demos, and the end-to-end benchmark.

Two flavors: a noise-free catalog where every item has a distinct
equal-size attribute set (so asking all target attributes pins the target
uniquely), and a clustered benchmark with repeat-interaction structure the
models can actually learn from.
"""

from __future__ import annotations

from itertools import combinations

import numpy as np

from .catalog import Catalog, IdMap


def _make_catalog(item_attrs: list[frozenset[int]], interactions: dict[int, list[tuple[int, int]]],
                  n_users: int, n_attrs: int) -> Catalog:
    ids = IdMap(
        users=tuple(f"u{i:04d}" for i in range(n_users)),
        items=tuple(f"i{i:04d}" for i in range(len(item_attrs))),
        attrs=tuple(f"a{i:03d}" for i in range(n_attrs)),
    )
    return Catalog(n_users=n_users, n_items=len(item_attrs), n_attrs=n_attrs,
                   item_attrs=item_attrs, interactions=interactions, ids=ids)


def make_unique_attr_catalog(n_items: int = 50, n_attrs: int = 20, attrs_per_item: int = 4,
                             n_users: int = 30, interactions_per_user: int = 6,
                             seed: int = 0) -> Catalog:
    """Noise-free world: equal-size distinct attribute sets per item.

    Because no attribute set can contain another, accepting every target
    attribute filters the candidates down to exactly the target item.
    """
    rng = np.random.default_rng(seed)
    seen: set[frozenset[int]] = set()
    item_attrs: list[frozenset[int]] = []
    while len(item_attrs) < n_items:
        s = frozenset(rng.choice(n_attrs, size=attrs_per_item, replace=False).tolist())
        if s not in seen:
            seen.add(s)
            item_attrs.append(s)

    interactions = {
        u: [(int(v), t) for t, v in enumerate(
            rng.choice(n_items, size=interactions_per_user, replace=False))]
        for u in range(n_users)
    }
    return _make_catalog(item_attrs, interactions, n_users, n_attrs)


def make_benchmark_catalog(n_users: int = 200, n_items: int = 500, n_attrs: int = 30,
                           clusters: int = 6, item_attr_count: int = 3,
                           interactions_per_user: int = 20, taste_size: int = 12,
                           seed: int = 0) -> Catalog:
    """Clustered world with learnable structure.

    Attributes split into equal clusters; each item carries a few
    attributes of one cluster; each user mostly revisits a small taste set
    inside a preferred cluster, so collaborative, sequential, and
    attribute-preference signals all exist.
    """
    if n_attrs % clusters != 0:
        raise ValueError("attribute count must divide evenly into clusters")
    rng = np.random.default_rng(seed)
    per_cluster = n_attrs // clusters
    cluster_attrs = [list(range(c * per_cluster, (c + 1) * per_cluster)) for c in range(clusters)]
    cluster_items: list[list[int]] = [[] for _ in range(clusters)]

    item_attrs: list[frozenset[int]] = []
    for v in range(n_items):
        c = v * clusters // n_items
        cluster_items[c].append(v)
        attrs = rng.choice(cluster_attrs[c], size=min(item_attr_count, per_cluster),
                           replace=False)
        item_attrs.append(frozenset(int(a) for a in attrs))

    interactions: dict[int, list[tuple[int, int]]] = {}
    for u in range(n_users):
        primary = u % clusters
        secondary = (u + 1 + int(rng.integers(0, clusters - 1))) % clusters
        taste = rng.choice(cluster_items[primary],
                           size=min(taste_size, len(cluster_items[primary])), replace=False)
        side = rng.choice(cluster_items[secondary],
                          size=min(3, len(cluster_items[secondary])), replace=False)
        events = []
        for t in range(interactions_per_user):
            roll = rng.random()
            if roll < 0.75:
                v = int(rng.choice(taste))
            elif roll < 0.9:
                v = int(rng.choice(side))
            else:
                v = int(rng.integers(0, n_items))
            events.append((v, t))
        interactions[u] = events
    return _make_catalog(item_attrs, interactions, n_users, n_attrs)


def all_same_size_subsets(n_attrs: int, size: int, limit: int) -> list[frozenset[int]]:
    """First `limit` equal-size attribute subsets in lexicographic order."""
    out = []
    for combo in combinations(range(n_attrs), size):
        out.append(frozenset(combo))
        if len(out) >= limit:
            break
    return out
