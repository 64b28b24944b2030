import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.catalog import (ParseError, ValidationError, build_graph, load_dataset,
                             save_dataset, split_interactions)

from conftest import make_catalog


def write_jsonl(path, records):
    path.write_text("\n".join(json.dumps(r) for r in records) + "\n")


FIXTURE = [
    {"type": "item", "item": "i0", "attrs": ["a0", "a1"]},
    {"type": "item", "item": "i1", "attrs": ["a1"]},
    {"type": "item", "item": "i2", "attrs": ["a2", "a3"]},
    {"type": "item", "item": "i3", "attrs": ["a0"]},
    {"type": "item", "item": "i4", "attrs": ["a3"]},
    {"type": "interaction", "user": "u0", "item": "i0", "ts": 1},
    {"type": "interaction", "user": "u0", "item": "i1", "ts": 2},
    {"type": "interaction", "user": "u1", "item": "i2", "ts": 1},
    {"type": "interaction", "user": "u2", "item": "i3", "ts": 9},
    {"type": "interaction", "user": "u2", "item": "i4", "ts": 10},
]


def test_load_counts(tmp_path):
    path = tmp_path / "d.jsonl"
    write_jsonl(path, FIXTURE)
    c = load_dataset(path)
    assert (c.n_users, c.n_items, c.n_attrs) == (3, 5, 4)
    assert c.item_attrs[0] == frozenset({c.ids.attr_index("a0"), c.ids.attr_index("a1")})


def test_load_empty_attrs_rejected(tmp_path):
    path = tmp_path / "d.jsonl"
    write_jsonl(path, [{"type": "item", "item": "i0", "attrs": []}])
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_load_malformed_names_line(tmp_path):
    path = tmp_path / "d.jsonl"
    path.write_text('{"type":"item","item":"i0","attrs":["a0"]}\nnot json\n')
    with pytest.raises(ParseError, match="line 2"):
        load_dataset(path)


def test_load_unknown_item_in_interaction(tmp_path):
    path = tmp_path / "d.jsonl"
    write_jsonl(path, [
        {"type": "item", "item": "i0", "attrs": ["a0"]},
        {"type": "interaction", "user": "u0", "item": "missing", "ts": 1},
    ])
    with pytest.raises(ValidationError):
        load_dataset(path)


def test_tsv_round_trip(tmp_path, tiny_catalog):
    path = tmp_path / "d.tsv"
    save_dataset(tiny_catalog, path, format="tsv")
    again = load_dataset(path, format="tsv")
    assert again.item_attrs == tiny_catalog.item_attrs
    assert again.interactions == tiny_catalog.interactions


def test_jsonl_round_trip(tmp_path, tiny_catalog):
    path = tmp_path / "d.jsonl"
    save_dataset(tiny_catalog, path)
    again = load_dataset(path)
    assert again.ids == tiny_catalog.ids
    assert again.item_attrs == tiny_catalog.item_attrs
    assert again.interactions == tiny_catalog.interactions


def test_lastfm_shaped_counts(tmp_path):
    """A LastFM-sized export (1,801 users / 7,432 items / 33 attrs) loads intact."""
    records = []
    rng = np.random.default_rng(0)
    for v in range(7432):
        attrs = rng.choice(33, size=int(rng.integers(1, 4)), replace=False)
        records.append({"type": "item", "item": f"i{v:05d}", "attrs": [f"a{a:02d}" for a in attrs]})
    for u in range(1801):
        v = int(rng.integers(0, 7432))
        records.append({"type": "interaction", "user": f"u{u:04d}", "item": f"i{v:05d}", "ts": 1})
    path = tmp_path / "lastfm.jsonl"
    write_jsonl(path, records)
    c = load_dataset(path)
    assert (c.n_users, c.n_items, c.n_attrs) == (1801, 7432, 33)


def test_split_20_interactions():
    c = make_catalog(1, [{0}] * 20, {0: [(v, t) for t, v in enumerate(range(20))]})
    split = split_interactions(c, (0.7, 0.15, 0.15), seed=1)
    assert len(split.train.interactions[0]) == 14
    assert len(split.valid.interactions[0]) == 3
    assert len(split.test.interactions[0]) == 3


def test_split_degenerate_ratio(tiny_catalog):
    split = split_interactions(tiny_catalog, (1.0, 0.0, 0.0), seed=0)
    for u in tiny_catalog.users:
        assert split.valid.interactions[u] == []
        assert split.test.interactions[u] == []
        assert split.train.interactions[u] == sorted(tiny_catalog.interactions[u],
                                                     key=lambda e: e[1])


def test_split_deterministic(tiny_catalog):
    a = split_interactions(tiny_catalog, (0.7, 0.15, 0.15), seed=42)
    b = split_interactions(tiny_catalog, (0.7, 0.15, 0.15), seed=42)
    assert a.train.interactions == b.train.interactions
    assert a.valid.interactions == b.valid.interactions
    assert a.test.interactions == b.test.interactions


def test_split_few_interactions_stay_in_train(tiny_catalog):
    split = split_interactions(tiny_catalog, (0.7, 0.15, 0.15), seed=0)
    # user 1 has 2 interactions: all in train
    assert len(split.train.interactions[1]) == 2
    assert split.valid.interactions[1] == [] and split.test.interactions[1] == []


def test_split_bad_ratios(tiny_catalog):
    with pytest.raises(ValueError):
        split_interactions(tiny_catalog, (0.5, 0.2, 0.2), seed=0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=1, max_value=40), seed=st.integers(min_value=0, max_value=2**16))
def test_split_partition_properties(n, seed):
    ts = np.random.default_rng(seed).integers(0, 10, size=n)
    c = make_catalog(1, [{0}] * max(n, 1), {0: sorted(((v, int(ts[v])) for v in range(n)),
                                                      key=lambda e: e[1])})
    split = split_interactions(c, (0.7, 0.15, 0.15), seed=seed)
    parts = [split.train.interactions[0], split.valid.interactions[0], split.test.interactions[0]]
    merged = [e for p in parts for e in p]
    assert sorted(merged) == sorted(c.interactions[0])
    assert len(merged) == len(set(merged)) or len(merged) == n  # duplicates only if input had them
    for p in parts:
        stamps = [t for _, t in p]
        assert stamps == sorted(stamps)


def test_build_graph_edge_counts():
    c = make_catalog(1, [{0, 1}, {2, 3}], {0: [(0, 1), (1, 2)]})
    g = build_graph(c)
    assert len(g.edges_uv) == 2
    assert len(g.edges_av) == 4


def test_build_graph_duplicate_interactions_single_edge():
    c = make_catalog(1, [{0}], {0: [(0, 1), (0, 2), (0, 3)]})
    g = build_graph(c)
    assert g.edges_uv == frozenset({(0, 0)})


def test_build_graph_empty_interactions_keeps_attr_edges():
    item_attrs = [{0, 1}, {1}, {0, 2}]
    c = make_catalog(2, item_attrs, {0: [], 1: []})
    g = build_graph(c)
    assert g.edges_uv == frozenset()
    expected = {(a, v) for v, attrs in enumerate(item_attrs) for a in attrs}
    assert g.edges_av == frozenset(expected)


def test_attr_item_degree_matches_attr_set(tiny_catalog):
    g = build_graph(tiny_catalog)
    for v in range(tiny_catalog.n_items):
        degree = sum(1 for a, vv in g.edges_av if vv == v)
        assert degree == len(tiny_catalog.item_attrs[v])


def test_catalog_validates_empty_attr_set():
    with pytest.raises(ValidationError):
        make_catalog(1, [set()], {0: [(0, 1)]})


def test_catalog_validates_sorted_interactions():
    with pytest.raises(ValidationError):
        make_catalog(1, [{0}, {0}], {0: [(0, 5), (1, 1)]})
