import numpy as np
import torch

from convrec.catalog import HeteroGraph
from convrec.config import KGConfig
from convrec.transe import graph_triples, train_transe, transe_distance


def test_distance_zero_when_translation_exact():
    h = torch.tensor([1.0, 2.0], dtype=torch.float64)
    r = torch.tensor([0.5, -1.0], dtype=torch.float64)
    t = h + r
    assert transe_distance(h, r, t).item() == 0.0


def test_hinge_zero_beyond_margin():
    margin = 1.0
    d_pos = torch.tensor(0.0, dtype=torch.float64)
    d_neg = torch.tensor(1.0, dtype=torch.float64)
    assert torch.relu(margin + d_pos - d_neg).item() == 0.0
    assert torch.relu(margin + d_pos - torch.tensor(2.5)).item() == 0.0


def fixture_graph():
    # 10 positive edges total: 6 interactions + 4 attribute links
    return HeteroGraph(
        n_users=3, n_items=4, n_attrs=2,
        edges_uv=frozenset({(0, 0), (0, 1), (1, 1), (1, 2), (2, 2), (2, 3)}),
        edges_av=frozenset({(0, 0), (0, 1), (1, 2), (1, 3)}),
    )


def test_triples_cover_all_edges():
    g = fixture_graph()
    triples = graph_triples(g)
    assert len(triples) == len(g.edges_uv) + len(g.edges_av)


def test_training_separates_positive_from_corrupted():
    g = fixture_graph()
    cfg = KGConfig(dim=16, epochs=200, lr=0.05, seed=5)
    kg = train_transe(g, cfg)

    table = np.concatenate([kg.users, kg.items, kg.attrs])
    triples = graph_triples(g)
    rng = np.random.default_rng(17)

    def dist(h, r, t):
        return np.linalg.norm(table[h] + kg.relations[r] - table[t])

    pos = [dist(h, r, t) for h, r, t in triples]
    neg = []
    for h, r, t in triples:
        corrupt = g.n_users + rng.integers(0, g.n_items)
        neg.append(dist(h, r, int(corrupt)))
    assert np.mean(pos) < np.mean(neg)


def test_same_seed_bitwise_reproducible():
    g = fixture_graph()
    cfg = KGConfig(dim=8, epochs=50, seed=9)
    a = train_transe(g, cfg)
    b = train_transe(g, cfg)
    assert np.array_equal(a.users, b.users)
    assert np.array_equal(a.items, b.items)
    assert np.array_equal(a.attrs, b.attrs)
    assert np.array_equal(a.relations, b.relations)


def test_different_seed_differs():
    g = fixture_graph()
    a = train_transe(g, KGConfig(dim=8, epochs=10, seed=1))
    b = train_transe(g, KGConfig(dim=8, epochs=10, seed=2))
    assert not np.array_equal(a.users, b.users)
