"""Context-aware recommendation model.

User interest is assembled from three sources: a long-term vector from the
graph encoder, short-term item/attribute vectors from two GRUs over the
previous subsessions, and aggregated feedback from the current subsession.
A small transformer fuses the six slots (empty feedback slots are masked
out of attention); items and attributes are scored with tanh of the dot
product between the fused interest and the node embedding.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .catalog import Catalog
from .config import ModelConfig
from .rgcn import Propagation, RelationalGraphEncoder
from .simulator import Session

logger = logging.getLogger(__name__)

# fusion slot order: long-term user, item interest, attr interest,
# rejected-items mean, accepted-attrs mean, rejected-attrs mean
SLOT_USER, SLOT_ITEM, SLOT_ATTR, SLOT_V_REJ, SLOT_A_ACC, SLOT_A_REJ = range(6)


@dataclass
class ScoreTable:
    """tanh-squashed preference scores for exactly the candidate sets."""

    item_scores: dict[int, float]
    attr_scores: dict[int, float]


class FusionLayer(nn.Module):
    """Pre-norm self-attention block with a masked key set."""

    def __init__(self, dim: int, heads: int, ffn_mult: int):
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.ln_attn = nn.LayerNorm(dim)
        self.ln_ffn = nn.LayerNorm(dim)
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_mult * dim), nn.ReLU(),
                                 nn.Linear(ffn_mult * dim, dim))

    def forward(self, x: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        b, s, d = x.shape
        h = self.ln_attn(x)
        q = self.q(h).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        k = self.k(h).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        v = self.v(h).view(b, s, self.heads, self.head_dim).transpose(1, 2)
        scores = q @ k.transpose(-2, -1) / np.sqrt(self.head_dim)
        scores = scores.masked_fill(~present[:, None, None, :], float("-inf"))
        ctx = torch.softmax(scores, dim=-1) @ v
        ctx = ctx.transpose(1, 2).reshape(b, s, d)
        x = x + self.out(ctx)
        return x + self.ffn(self.ln_ffn(x))


class InterestFusion(nn.Module):
    """Transformer over the six interest slots with learned slot-type embeddings."""

    def __init__(self, dim: int, n_layers: int, heads: int, ffn_mult: int):
        super().__init__()
        self.slot_types = nn.Parameter(torch.zeros(6, dim).uniform_(-1.0 / np.sqrt(dim),
                                                                    1.0 / np.sqrt(dim)))
        self.layers = nn.ModuleList(FusionLayer(dim, heads, ffn_mult) for _ in range(n_layers))

    def forward(self, slots: torch.Tensor, present: torch.Tensor) -> torch.Tensor:
        x = slots + self.slot_types
        for layer in self.layers:
            x = layer(x, present)
        return x


@dataclass
class EpisodeContext:
    """Per-episode constants: the graph table plus pre-fusion interests."""

    embs: torch.Tensor
    user: int
    e_user: torch.Tensor
    e_item_pre: torch.Tensor
    e_attr_pre: torch.Tensor


class ContextRecommender(nn.Module):
    def __init__(self, n_users: int, n_items: int, n_attrs: int, config: ModelConfig):
        super().__init__()
        self.n_users, self.n_items, self.n_attrs = n_users, n_items, n_attrs
        self.config = config
        d = config.dim
        n_nodes = n_users + n_items + n_attrs
        self.node_emb = nn.Parameter(torch.zeros(n_nodes, d).uniform_(-1.0 / np.sqrt(d),
                                                                      1.0 / np.sqrt(d)))
        self.graph_encoder = RelationalGraphEncoder(d, config.graph_layers)
        self.gru_item = nn.GRU(d, d, batch_first=True)
        self.gru_attr = nn.GRU(d, d, batch_first=True)
        self.fusion = InterestFusion(d, config.fusion_layers, config.heads, config.ffn_mult)
        self.double()

    # -- node index helpers ------------------------------------------------
    def item_node(self, v: int) -> int:
        return self.n_users + v

    def attr_node(self, a: int) -> int:
        return self.n_users + self.n_items + a

    def item_rows(self, embs: torch.Tensor) -> torch.Tensor:
        return embs[self.n_users: self.n_users + self.n_items]

    def attr_rows(self, embs: torch.Tensor) -> torch.Tensor:
        return embs[self.n_users + self.n_items:]

    # -- encoders ------------------------------------------------------------
    def node_embeddings(self, prop: Propagation) -> torch.Tensor:
        return self.graph_encoder(self.node_emb, prop)

    def short_term(self, embs: torch.Tensor, prev_items: Sequence[Sequence[int]],
                   prev_attr_sets: Sequence[Sequence[Iterable[int]]]) -> tuple[torch.Tensor, torch.Tensor]:
        """Final GRU states over the previous targets and their attribute-set means."""
        if len(prev_items) != len(prev_attr_sets):
            raise ValueError("item and attribute sequences must align")
        lengths = [len(s) for s in prev_items]
        if any(n < 1 for n in lengths) or any(len(a) != n for a, n in zip(prev_attr_sets, lengths)):
            raise ValueError("each session needs at least one previous subsession")
        b, lmax, d = len(prev_items), max(lengths), embs.shape[1]

        item_in = embs.new_zeros(b, lmax, d)
        attr_in = embs.new_zeros(b, lmax, d)
        for i, (items, attr_sets) in enumerate(zip(prev_items, prev_attr_sets)):
            for j, (v, attrs) in enumerate(zip(items, attr_sets)):
                attrs = sorted(attrs)
                if not attrs:
                    raise ValueError("previous subsession has an empty attribute set")
                item_in[i, j] = embs[self.item_node(v)]
                attr_in[i, j] = embs[[self.attr_node(a) for a in attrs]].mean(dim=0)

        out_item, _ = self.gru_item(item_in)
        out_attr, _ = self.gru_attr(attr_in)
        idx = torch.tensor(lengths) - 1
        rows = torch.arange(b)
        return out_item[rows, idx], out_attr[rows, idx]

    def aggregate_feedback(self, embs: torch.Tensor, v_rej: Iterable[int], a_acc: Iterable[int],
                           a_rej: Iterable[int]) -> tuple[torch.Tensor, torch.Tensor]:
        """Mean vectors for the three feedback slots and their present flags."""
        d = embs.shape[1]
        vecs = embs.new_zeros(3, d)
        present = torch.zeros(3, dtype=torch.bool)
        groups = (
            [self.item_node(v) for v in sorted(v_rej)],
            [self.attr_node(a) for a in sorted(a_acc)],
            [self.attr_node(a) for a in sorted(a_rej)],
        )
        for i, rows in enumerate(groups):
            if rows:
                vecs[i] = embs[rows].mean(dim=0)
                present[i] = True
        return vecs, present

    def fuse(self, e_user: torch.Tensor, e_item_pre: torch.Tensor, e_attr_pre: torch.Tensor,
             fb_vecs: torch.Tensor, fb_present: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Run fusion for a batch; returns final item and attribute interests."""
        slots = torch.stack([e_user, e_item_pre, e_attr_pre,
                             fb_vecs[:, 0], fb_vecs[:, 1], fb_vecs[:, 2]], dim=1)
        present = torch.cat([torch.ones(len(e_user), 3, dtype=torch.bool), fb_present], dim=1)
        out = self.fusion(slots, present)
        return out[:, SLOT_ITEM], out[:, SLOT_ATTR]

    def batch_interests(self, embs: torch.Tensor, users: Sequence[int],
                        prev_items: Sequence[Sequence[int]],
                        prev_attr_sets: Sequence[Sequence[Iterable[int]]],
                        feedback: Sequence[tuple[Iterable[int], Iterable[int], Iterable[int]]],
                        ) -> tuple[torch.Tensor, torch.Tensor]:
        e_user = embs[list(users)]
        e_item_pre, e_attr_pre = self.short_term(embs, prev_items, prev_attr_sets)
        fb_vecs = embs.new_zeros(len(users), 3, embs.shape[1])
        fb_present = torch.zeros(len(users), 3, dtype=torch.bool)
        for i, (v_rej, a_acc, a_rej) in enumerate(feedback):
            vecs, present = self.aggregate_feedback(embs, v_rej, a_acc, a_rej)
            fb_vecs[i] = vecs
            fb_present[i] = present
        return self.fuse(e_user, e_item_pre, e_attr_pre, fb_vecs, fb_present)

    # -- per-episode inference ------------------------------------------------
    def episode_context(self, embs: torch.Tensor, user: int, prev_items: Sequence[int],
                        prev_attr_sets: Sequence[Iterable[int]]) -> EpisodeContext:
        e_item_pre, e_attr_pre = self.short_term(embs, [prev_items], [prev_attr_sets])
        return EpisodeContext(embs=embs, user=user, e_user=embs[user],
                              e_item_pre=e_item_pre[0], e_attr_pre=e_attr_pre[0])

    def turn_interests(self, ctx: EpisodeContext, v_rej: Iterable[int], a_acc: Iterable[int],
                       a_rej: Iterable[int]) -> tuple[torch.Tensor, torch.Tensor]:
        fb_vecs, fb_present = self.aggregate_feedback(ctx.embs, v_rej, a_acc, a_rej)
        e_item, e_attr = self.fuse(ctx.e_user.unsqueeze(0), ctx.e_item_pre.unsqueeze(0),
                                   ctx.e_attr_pre.unsqueeze(0), fb_vecs.unsqueeze(0),
                                   fb_present.unsqueeze(0))
        return e_item[0], e_attr[0]

    # -- scoring ------------------------------------------------------------
    def score_items(self, e_item: torch.Tensor, embs: torch.Tensor,
                    items: Sequence[int]) -> torch.Tensor:
        rows = embs[[self.item_node(v) for v in items]]
        return torch.tanh(rows @ e_item)

    def score_attrs(self, e_attr: torch.Tensor, embs: torch.Tensor,
                    attrs: Sequence[int]) -> torch.Tensor:
        rows = embs[[self.attr_node(a) for a in attrs]]
        return torch.tanh(rows @ e_attr)

    def score_table(self, e_item: torch.Tensor, e_attr: torch.Tensor, embs: torch.Tensor,
                    v_cand: Sequence[int], a_cand: Sequence[int]) -> ScoreTable:
        if len(v_cand) == 0 or len(a_cand) == 0:
            raise ValueError("candidate sets must be non-empty")
        iv = self.score_items(e_item, embs, v_cand).detach().numpy()
        av = self.score_attrs(e_attr, embs, a_cand).detach().numpy()
        return ScoreTable(item_scores=dict(zip(v_cand, iv.tolist())),
                          attr_scores=dict(zip(a_cand, av.tolist())))


def build_model(n_users: int, n_items: int, n_attrs: int, config: ModelConfig) -> ContextRecommender:
    torch.manual_seed(config.seed)
    return ContextRecommender(n_users, n_items, n_attrs, config)


# -- losses ------------------------------------------------------------------

def loss_item(pos_scores: torch.Tensor, neg_scores: torch.Tensor) -> torch.Tensor:
    """Pairwise ranking loss: sum of -ln(sigmoid(pos - neg))."""
    if pos_scores.numel() == 0:
        raise ValueError("no ranking pairs")
    return -F.logsigmoid(pos_scores - neg_scores).sum()


def loss_attr(attr_scores: torch.Tensor, target_attrs: Sequence[int],
              activation_attrs: Sequence[int],
              negative_attrs: Sequence[Sequence[int]]) -> torch.Tensor:
    """Attribute ranking loss over a full per-attribute score vector.

    Targets rank above the sampled non-target attributes; activation
    attributes additionally rank above the remaining target attributes.
    """
    act = set(activation_attrs)
    if not act <= set(target_attrs):
        raise ValueError("activation attributes must be target attributes")
    pos, neg = [], []
    for t, negs in zip(target_attrs, negative_attrs):
        for a_neg in negs:
            pos.append(t)
            neg.append(a_neg)
    others = [a for a in target_attrs if a not in act]
    for a in sorted(act):
        for a_other in others:
            pos.append(a)
            neg.append(a_other)
    if not pos:
        return attr_scores.sum() * 0.0
    return -F.logsigmoid(attr_scores[pos] - attr_scores[neg]).sum()


def loss_infonce(e_item: torch.Tensor, e_attr: torch.Tensor, temperature: float) -> torch.Tensor:
    """Contrastive alignment of item-level and attribute-level interest.

    Each item interest's positive is its own attribute interest; all other
    attribute interests in the batch are negatives.
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    logits = e_item @ e_attr.T / temperature
    return -(logits.diagonal() - logits.logsumexp(dim=1)).sum()


# -- pretraining ----------------------------------------------------------------


@dataclass
class TrainingExample:
    """One session plus everything sampled for its loss terms."""

    user: int
    prev_items: tuple[int, ...]
    prev_attr_sets: tuple[frozenset[int], ...]
    target: int
    target_attrs: tuple[int, ...]
    activation: tuple[int, ...]
    neg_items: tuple[int, ...]
    neg_attrs: tuple[tuple[int, ...], ...]
    fb_v_rej: tuple[int, ...] = ()
    fb_a_acc: tuple[int, ...] = ()
    fb_a_rej: tuple[int, ...] = ()


def sample_training_example(session: Session, interacted: frozenset[int], n_items: int,
                            n_attrs: int, config: ModelConfig,
                            rng: np.random.Generator) -> TrainingExample:
    """Draw negatives and a synthetic current-subsession feedback state.

    Feedback mimics an arbitrary mid-conversation turn: some target
    attributes already accepted, a few off-target attributes rejected, and
    a handful of non-target items rejected.
    """
    target_attrs = tuple(sorted(session.oracle[-1]))

    non_interacted = np.setdiff1d(np.arange(n_items), np.fromiter(interacted, dtype=np.int64))
    pool = non_interacted if len(non_interacted) else np.setdiff1d(np.arange(n_items), [session.target])
    neg_items = tuple(rng.choice(pool, size=config.negatives_item, replace=True).tolist())

    off_target = np.setdiff1d(np.arange(n_attrs), np.asarray(target_attrs))
    neg_attrs = tuple(
        tuple(rng.choice(off_target, size=min(config.negatives_attr, len(off_target)),
                         replace=False).tolist()) if len(off_target) else ()
        for _ in target_attrs
    )

    k_acc = int(rng.integers(0, len(target_attrs) + 1))
    fb_a_acc = tuple(sorted(rng.choice(target_attrs, size=k_acc, replace=False).tolist()))
    k_rej = int(rng.integers(0, config.rejected_attrs_max + 1))
    fb_a_rej = tuple(sorted(rng.choice(off_target, size=min(k_rej, len(off_target)),
                                       replace=False).tolist())) if len(off_target) else ()
    non_target = np.setdiff1d(np.arange(n_items), [session.target])
    k_vrej = int(rng.integers(0, config.rejected_items_max + 1))
    fb_v_rej = tuple(sorted(rng.choice(non_target, size=min(k_vrej, len(non_target)),
                                       replace=False).tolist()))

    return TrainingExample(
        user=session.user,
        prev_items=tuple(session.targets[:-1]),
        prev_attr_sets=tuple(session.oracle[:-1]),
        target=session.target,
        target_attrs=target_attrs,
        activation=tuple(sorted(session.activation or ())),
        neg_items=neg_items,
        neg_attrs=neg_attrs,
        fb_v_rej=fb_v_rej,
        fb_a_acc=fb_a_acc,
        fb_a_rej=fb_a_rej,
    )


def rec_loss(model: ContextRecommender, prop: Propagation, batch: Sequence[TrainingExample],
             config: ModelConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """Joint loss over a batch: item ranking + attribute ranking + contrastive."""
    embs = model.node_embeddings(prop)
    e_item, e_attr = model.batch_interests(
        embs,
        [ex.user for ex in batch],
        [ex.prev_items for ex in batch],
        [ex.prev_attr_sets for ex in batch],
        [(ex.fb_v_rej, ex.fb_a_acc, ex.fb_a_rej) for ex in batch],
    )

    pos_scores, neg_scores = [], []
    for i, ex in enumerate(batch):
        pos = model.score_items(e_item[i], embs, [ex.target] * len(ex.neg_items))
        neg = model.score_items(e_item[i], embs, list(ex.neg_items))
        pos_scores.append(pos)
        neg_scores.append(neg)
    l_item = loss_item(torch.cat(pos_scores), torch.cat(neg_scores))

    attr_table = torch.tanh(model.attr_rows(embs) @ e_attr.T).T  # (B, n_attrs)
    l_attr = sum(
        loss_attr(attr_table[i], ex.target_attrs, ex.activation, ex.neg_attrs)
        for i, ex in enumerate(batch)
    )

    l_cont = loss_infonce(e_item, e_attr, config.temperature)
    total = l_item + l_attr + config.contrastive_weight * l_cont
    parts = {"item": l_item.detach().item(), "attr": float(l_attr.detach()),
             "contrastive": l_cont.detach().item(), "total": total.detach().item()}
    return total, parts


@dataclass
class PretrainResult:
    model: ContextRecommender
    history: list[dict[str, float]] = field(default_factory=list)


def pretrain_recommender(sessions: Sequence[Session], train: Catalog, prop: Propagation,
                         config: ModelConfig) -> PretrainResult:
    """Seeded joint training of the graph encoder, GRUs, and fusion stack."""
    if not sessions:
        raise ValueError("need at least one training session")
    model = build_model(train.n_users, train.n_items, train.n_attrs, config)
    params = list(model.parameters())
    if config.freeze_graph:
        frozen = {id(model.node_emb)} | {id(p) for p in model.graph_encoder.parameters()}
        for p in model.parameters():
            if id(p) in frozen:
                p.requires_grad_(False)
        params = [p for p in params if id(p) not in frozen]
    opt = torch.optim.Adam(params, lr=config.lr)

    interacted = {u: frozenset(train.interacted_items(u)) for u in train.users}
    rng = np.random.default_rng(config.seed)
    history: list[dict[str, float]] = []
    order = np.arange(len(sessions))
    for epoch in range(config.epochs):
        rng.shuffle(order)
        epoch_total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start: start + config.batch_size]
            batch = [
                sample_training_example(sessions[i], interacted[sessions[i].user],
                                        train.n_items, train.n_attrs, config, rng)
                for i in idx
            ]
            total, parts = rec_loss(model, prop, batch, config)
            if not torch.isfinite(total):
                raise RuntimeError(
                    f"pretraining diverged at epoch {epoch}: loss parts {parts}")
            opt.zero_grad()
            total.backward()
            opt.step()
            epoch_total += parts["total"]
        history.append({"epoch": epoch, "loss": epoch_total})
        logger.debug("pretrain epoch %d loss %.4f", epoch, epoch_total)
    return PretrainResult(model=model, history=history)
