"""Session construction and the simulated user.

A session is a short run of subsessions whose targets are consecutive items
from one user's chronological history; the last subsession is the one
actually played out. The simulated user starts vague: until the system asks
one of the session's activation attributes, every attribute question gets
"unknown". After activation, answers follow the target item's attribute set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .catalog import Catalog, IdMap
from .config import EnvConfig
from .transe import KGEmbeddings

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Session:
    """Ordered subsession targets for one user; the last one is current."""

    user: int
    targets: tuple[int, ...]
    oracle: tuple[frozenset[int], ...]
    activation: frozenset[int] | None = None

    def __post_init__(self) -> None:
        if len(self.targets) < 2:
            raise ValueError("a session needs at least one previous subsession")
        if len(self.oracle) != len(self.targets):
            raise ValueError("oracle attribute sets must align with targets")
        if self.activation is not None:
            if not self.activation:
                raise ValueError("activation set cannot be empty")
            if not self.activation <= self.oracle[-1]:
                raise ValueError("activation attributes must belong to the current target")

    @property
    def n(self) -> int:
        return len(self.targets)

    @property
    def target(self) -> int:
        return self.targets[-1]

    @property
    def prev_targets(self) -> tuple[int, ...]:
        return self.targets[:-1]

    @property
    def prev_oracle(self) -> tuple[frozenset[int], ...]:
        return self.oracle[:-1]


def build_sessions(catalog: Catalog, config: EnvConfig, seed: int) -> list[Session]:
    """Cut each user's history into consecutive non-overlapping sessions.

    Session length is min(Random(session_min, session_max), remaining
    history); users with fewer than two interactions are skipped. The draw
    stream is per-user, so results do not depend on user iteration order.
    """
    sessions: list[Session] = []
    for u in catalog.users:
        items = catalog.interacted_items(u)
        if len(items) < 2:
            logger.info("skipping user %s: only %d interaction(s)",
                        catalog.ids.users[u], len(items))
            continue
        rng = np.random.default_rng([seed, u])
        start = 0
        for _ in range(config.sessions_per_user):
            remaining = len(items) - start
            if remaining < 2:
                break
            n = min(int(rng.integers(config.session_min, config.session_max, endpoint=True)),
                    remaining)
            targets = tuple(items[start: start + n])
            oracle = tuple(catalog.item_attrs[v] for v in targets)
            sessions.append(Session(user=u, targets=targets, oracle=oracle))
            start += n
    return sessions


def generate_activation_attributes(session: Session, kg: KGEmbeddings,
                                   count: int = 2) -> frozenset[int]:
    """Top attributes of the current target by user+context affinity.

    The affinity of attribute a is the user-attribute dot product plus the
    mean dot product between the previous targets and a. Ties break toward
    the lower attribute index.
    """
    cand = sorted(session.oracle[-1])
    a_vecs = kg.attrs[cand]                      # (m, D)
    user_part = a_vecs @ kg.users[session.user]
    prev = kg.items[list(session.prev_targets)]  # (n-1, D)
    context_part = (a_vecs @ prev.T).mean(axis=1)
    affinity = user_part + context_part
    order = sorted(range(len(cand)), key=lambda i: (-affinity[i], cand[i]))
    take = min(count, len(cand))
    return frozenset(cand[i] for i in order[:take])


def attach_activation(sessions: Sequence[Session], kg: KGEmbeddings,
                      count: int = 2) -> list[Session]:
    return [replace(s, activation=generate_activation_attributes(s, kg, count))
            for s in sessions]


class AttributeResponse(Enum):
    ACCEPT = "accept"
    REJECT = "reject"
    UNKNOWN = "unknown"


@dataclass
class SimUserState:
    """Mutable per-episode user: activation flips false->true exactly once."""

    session: Session
    activated: bool = False

    def __post_init__(self) -> None:
        if self.session.activation is None:
            raise ValueError("session has no activation attributes")

    @property
    def target(self) -> int:
        return self.session.target

    @property
    def oracle(self) -> frozenset[int]:
        return self.session.oracle[-1]

    @property
    def activation(self) -> frozenset[int]:
        assert self.session.activation is not None
        return self.session.activation


def respond_attribute(state: SimUserState, asked: int) -> AttributeResponse:
    """Vague until an activation attribute is hit, explicit afterwards."""
    if not state.activated:
        if asked in state.activation:
            state.activated = True
            return AttributeResponse.ACCEPT
        return AttributeResponse.UNKNOWN
    if asked in state.oracle:
        return AttributeResponse.ACCEPT
    return AttributeResponse.REJECT


def respond_recommendation(state: SimUserState, items: Sequence[int]) -> int | None:
    """1-based rank of the target in the list, or None for reject-all."""
    if not items:
        raise ValueError("recommendation list is empty")
    if len(set(items)) != len(items):
        raise ValueError("recommendation list contains duplicates")
    for rank, v in enumerate(items, start=1):
        if v == state.target:
            return rank
    return None


# -- serialization ----------------------------------------------------------


def session_to_dict(session: Session, ids: IdMap) -> dict:
    return {
        "user": ids.users[session.user],
        "targets": [ids.items[v] for v in session.targets],
        "activation": sorted(ids.attrs[a] for a in session.activation or ()),
    }


def session_from_dict(raw: dict, catalog: Catalog) -> Session:
    user = catalog.ids.user_index(raw["user"])
    targets = tuple(catalog.ids.item_index(v) for v in raw["targets"])
    oracle = tuple(catalog.item_attrs[v] for v in targets)
    activation_ids = raw.get("activation") or []
    activation = frozenset(catalog.ids.attr_index(a) for a in activation_ids) or None
    return Session(user=user, targets=targets, oracle=oracle, activation=activation)


def save_sessions(sessions: Sequence[Session], ids: IdMap, path) -> None:
    with open(path, "w") as fh:
        for s in sessions:
            fh.write(json.dumps(session_to_dict(s, ids), sort_keys=True) + "\n")


def load_sessions(path, catalog: Catalog) -> list[Session]:
    out = []
    with open(path) as fh:
        for line in fh:
            if line.strip():
                out.append(session_from_dict(json.loads(line), catalog))
    return out
