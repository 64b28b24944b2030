"""Dataset loading, train/valid/test splitting, and graph construction.

External records use string ids; everything downstream works on dense
integer indices. Interning order is users, then items, then attributes,
each sorted by external id, so node indices are stable across reloads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class DatasetError(Exception):
    """Base error for dataset problems."""


class ParseError(DatasetError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class ValidationError(DatasetError):
    pass


@dataclass(frozen=True)
class IdMap:
    """External string ids <-> dense indices, per role."""

    users: tuple[str, ...]
    items: tuple[str, ...]
    attrs: tuple[str, ...]

    def user_index(self, uid: str) -> int:
        return self._lookup("users", uid)

    def item_index(self, iid: str) -> int:
        return self._lookup("items", iid)

    def attr_index(self, aid: str) -> int:
        return self._lookup("attrs", aid)

    def _lookup(self, role: str, external: str) -> int:
        table = getattr(self, f"_{role}_rev", None)
        if table is None:
            table = {ext: i for i, ext in enumerate(getattr(self, role))}
            object.__setattr__(self, f"_{role}_rev", table)
        try:
            return table[external]
        except KeyError:
            raise KeyError(f"unknown {role[:-1]} id {external!r}") from None

    def to_dict(self) -> dict:
        return {"users": list(self.users), "items": list(self.items), "attrs": list(self.attrs)}

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "IdMap":
        raw = json.loads(Path(path).read_text())
        return cls(users=tuple(raw["users"]), items=tuple(raw["items"]), attrs=tuple(raw["attrs"]))


@dataclass
class Catalog:
    """Users, items, attributes, and per-user chronological interactions.

    `item_attrs[v]` is the item's attribute set and is non-empty for every
    item. `interactions[u]` is sorted non-decreasing by timestamp.
    """

    n_users: int
    n_items: int
    n_attrs: int
    item_attrs: list[frozenset[int]]
    interactions: dict[int, list[tuple[int, int]]]  # user -> [(item, ts)]
    ids: IdMap

    def __post_init__(self) -> None:
        if len(self.item_attrs) != self.n_items:
            raise ValidationError("item_attrs length does not match item count")
        for v, attrs in enumerate(self.item_attrs):
            if not attrs:
                raise ValidationError(f"item {self.ids.items[v]!r} has an empty attribute set")
            bad = [a for a in attrs if not (0 <= a < self.n_attrs)]
            if bad:
                raise ValidationError(f"item {self.ids.items[v]!r} references unknown attributes")
        for u, events in self.interactions.items():
            if not (0 <= u < self.n_users):
                raise ValidationError("interaction references unknown user")
            for v, _ in events:
                if not (0 <= v < self.n_items):
                    raise ValidationError("interaction references unknown item")
            ts = [t for _, t in events]
            if any(a > b for a, b in zip(ts, ts[1:])):
                raise ValidationError(f"interactions of user {self.ids.users[u]!r} are not sorted")

    @property
    def users(self) -> range:
        return range(self.n_users)

    def attr_items(self) -> list[frozenset[int]]:
        """Inverse of item_attrs: attribute -> set of items carrying it."""
        out: list[set[int]] = [set() for _ in range(self.n_attrs)]
        for v, attrs in enumerate(self.item_attrs):
            for a in attrs:
                out[a].add(v)
        return [frozenset(s) for s in out]

    def item_attr_matrix(self) -> np.ndarray:
        """Boolean (n_items, n_attrs) membership matrix."""
        m = np.zeros((self.n_items, self.n_attrs), dtype=bool)
        for v, attrs in enumerate(self.item_attrs):
            m[v, list(attrs)] = True
        return m

    def interacted_items(self, user: int) -> list[int]:
        return [v for v, _ in self.interactions.get(user, [])]


@dataclass
class SplitCatalog:
    """Train/valid/test catalogs sharing users, items, and attributes."""

    train: Catalog
    valid: Catalog
    test: Catalog

    def part(self, name: str) -> Catalog:
        if name not in ("train", "valid", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


@dataclass
class HeteroGraph:
    """User/item/attribute graph with user-item and attribute-item edges.

    Node indices are contiguous: users first, then items, then attributes.
    """

    n_users: int
    n_items: int
    n_attrs: int
    edges_uv: frozenset[tuple[int, int]]  # (user, item), role-local indices
    edges_av: frozenset[tuple[int, int]]  # (attr, item)

    @property
    def n_nodes(self) -> int:
        return self.n_users + self.n_items + self.n_attrs

    def user_node(self, u: int) -> int:
        return u

    def item_node(self, v: int) -> int:
        return self.n_users + v

    def attr_node(self, a: int) -> int:
        return self.n_users + self.n_items + a


def _intern(records_items: dict[str, set[str]], interactions: list[tuple[str, str, int]]) -> tuple[IdMap, Catalog]:
    users = sorted({u for u, _, _ in interactions})
    items = sorted(records_items)
    attrs = sorted({a for attrs in records_items.values() for a in attrs})
    ids = IdMap(users=tuple(users), items=tuple(items), attrs=tuple(attrs))

    item_rev = {ext: i for i, ext in enumerate(items)}
    attr_rev = {ext: i for i, ext in enumerate(attrs)}
    user_rev = {ext: i for i, ext in enumerate(users)}

    item_attrs = [frozenset(attr_rev[a] for a in records_items[ext]) for ext in items]

    per_user: dict[int, list[tuple[int, int]]] = {u: [] for u in range(len(users))}
    for u_ext, v_ext, ts in interactions:
        if v_ext not in item_rev:
            raise ValidationError(f"interaction references undefined item {v_ext!r}")
        per_user[user_rev[u_ext]].append((item_rev[v_ext], ts))
    for u in per_user:
        per_user[u].sort(key=lambda e: e[1])  # stable: keeps file order on ties

    catalog = Catalog(
        n_users=len(users),
        n_items=len(items),
        n_attrs=len(attrs),
        item_attrs=item_attrs,
        interactions=per_user,
        ids=ids,
    )
    return ids, catalog


def load_dataset(path: str | Path, format: str = "jsonl") -> Catalog:
    """Parse a dataset file into a validated Catalog.

    jsonl records: {"type":"interaction","user":u,"item":v,"ts":int} and
    {"type":"item","item":v,"attrs":[...]}. tsv lines mirror the same two
    record types.
    """
    path = Path(path)
    if format not in ("jsonl", "tsv"):
        raise ValueError(f"unknown format {format!r}")

    records_items: dict[str, set[str]] = {}
    interactions: list[tuple[str, str, int]] = []

    for line_no, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if format == "jsonl":
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, f"invalid JSON ({exc.msg})") from None
            kind = rec.get("type")
            if kind == "interaction":
                try:
                    interactions.append((str(rec["user"]), str(rec["item"]), int(rec["ts"])))
                except (KeyError, TypeError, ValueError):
                    raise ParseError(line_no, "interaction needs user, item, integer ts") from None
            elif kind == "item":
                try:
                    item, attrs = str(rec["item"]), [str(a) for a in rec["attrs"]]
                except (KeyError, TypeError):
                    raise ParseError(line_no, "item needs item id and attrs list") from None
                if item in records_items:
                    raise ParseError(line_no, f"item {item!r} defined twice")
                if not attrs:
                    raise ValidationError(f"line {line_no}: item {item!r} has no attributes")
                records_items[item] = set(attrs)
            else:
                raise ParseError(line_no, f"unknown record type {kind!r}")
        else:
            fields = line.rstrip("\n").split("\t")
            if fields[0] == "interaction":
                if len(fields) != 4:
                    raise ParseError(line_no, "interaction row needs 4 tab-separated fields")
                try:
                    interactions.append((fields[1], fields[2], int(fields[3])))
                except ValueError:
                    raise ParseError(line_no, "interaction ts must be an integer") from None
            elif fields[0] == "item":
                if len(fields) != 3:
                    raise ParseError(line_no, "item row needs 3 tab-separated fields")
                item = fields[1]
                attrs = [a for a in fields[2].split(",") if a]
                if item in records_items:
                    raise ParseError(line_no, f"item {item!r} defined twice")
                if not attrs:
                    raise ValidationError(f"line {line_no}: item {item!r} has no attributes")
                records_items[item] = set(attrs)
            else:
                raise ParseError(line_no, f"unknown record type {fields[0]!r}")

    _, catalog = _intern(records_items, interactions)
    return catalog


def save_dataset(catalog: Catalog, path: str | Path, format: str = "jsonl") -> None:
    """Serialize back to the on-disk record format (inverse of load_dataset)."""
    lines: list[str] = []
    for v in range(catalog.n_items):
        attrs = sorted(catalog.ids.attrs[a] for a in catalog.item_attrs[v])
        if format == "jsonl":
            lines.append(json.dumps(
                {"type": "item", "item": catalog.ids.items[v], "attrs": attrs}, sort_keys=True))
        else:
            lines.append("\t".join(["item", catalog.ids.items[v], ",".join(attrs)]))
    for u in range(catalog.n_users):
        for v, ts in catalog.interactions.get(u, []):
            if format == "jsonl":
                lines.append(json.dumps(
                    {"type": "interaction", "user": catalog.ids.users[u],
                     "item": catalog.ids.items[v], "ts": ts}, sort_keys=True))
            else:
                lines.append("\t".join(
                    ["interaction", catalog.ids.users[u], catalog.ids.items[v], str(ts)]))
    Path(path).write_text("\n".join(lines) + "\n")


def split_interactions(catalog: Catalog, ratios: tuple[float, float, float] = (0.7, 0.15, 0.15),
                       seed: int = 0) -> SplitCatalog:
    """Per-user chronological split into train/valid/test.

    Each user's list is cut at the cumulative ratio boundaries (earliest
    part goes to train). Equal timestamps are tie-broken with a seeded
    shuffle so "random division" is reproducible. Users with fewer than 3
    interactions stay entirely in train.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ValueError("ratios must be non-negative")
    for u in catalog.users:
        if not catalog.interactions.get(u):
            raise ValueError(f"user {catalog.ids.users[u]!r} has no interactions")

    parts: dict[str, dict[int, list[tuple[int, int]]]] = {"train": {}, "valid": {}, "test": {}}
    for u in catalog.users:
        events = list(catalog.interactions[u])
        rng = np.random.default_rng([seed, u])
        jitter = rng.random(len(events))
        order = sorted(range(len(events)), key=lambda i: (events[i][1], jitter[i]))
        events = [events[i] for i in order]

        n = len(events)
        if n < 3:
            cut1, cut2 = n, n
        else:
            cut1 = int(np.floor(n * ratios[0] + 0.5))
            cut2 = int(np.floor(n * (ratios[0] + ratios[1]) + 0.5))
            cut1, cut2 = min(cut1, n), min(max(cut2, cut1), n)
        parts["train"][u] = events[:cut1]
        parts["valid"][u] = events[cut1:cut2]
        parts["test"][u] = events[cut2:]

    def make(part: dict[int, list[tuple[int, int]]]) -> Catalog:
        return Catalog(
            n_users=catalog.n_users,
            n_items=catalog.n_items,
            n_attrs=catalog.n_attrs,
            item_attrs=catalog.item_attrs,
            interactions=part,
            ids=catalog.ids,
        )

    return SplitCatalog(train=make(parts["train"]), valid=make(parts["valid"]), test=make(parts["test"]))


def build_graph(train: Catalog) -> HeteroGraph:
    """User-item edges from distinct interacted pairs, attribute-item edges
    from the full item->attribute map."""
    edges_uv = {(u, v) for u, events in train.interactions.items() for v, _ in events}
    edges_av = {(a, v) for v, attrs in enumerate(train.item_attrs) for a in attrs}
    return HeteroGraph(
        n_users=train.n_users,
        n_items=train.n_items,
        n_attrs=train.n_attrs,
        edges_uv=frozenset(edges_uv),
        edges_av=frozenset(edges_av),
    )
