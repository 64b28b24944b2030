"""Versioned checkpoint container shared by all trained artifacts.

One binary file per artifact: a format version, a kind tag, and a payload
of tensors plus plain-python config dicts. Round-trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import torch

from .config import ModelConfig, PolicyConfig, _merge
from .policy import MLPPolicy, PolicyBundle
from .recommender import ContextRecommender
from .transe import KGEmbeddings

FORMAT_VERSION = 1


def save_checkpoint(path: str | Path, kind: str, payload: dict) -> None:
    torch.save({"format_version": FORMAT_VERSION, "kind": kind, "payload": payload}, path)


def load_checkpoint(path: str | Path, kind: str) -> dict:
    raw = torch.load(path, weights_only=True)
    if raw.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {raw.get('format_version')!r}")
    if raw.get("kind") != kind:
        raise ValueError(f"expected {kind!r} checkpoint, found {raw.get('kind')!r}")
    return raw["payload"]


# -- affinity embeddings ------------------------------------------------------


def save_kg(kg: KGEmbeddings, path: str | Path) -> None:
    save_checkpoint(path, "kg", kg.to_payload())


def load_kg(path: str | Path) -> KGEmbeddings:
    return KGEmbeddings.from_payload(load_checkpoint(path, "kg"))


# -- recommender --------------------------------------------------------------


def save_recommender(model: ContextRecommender, path: str | Path) -> None:
    save_checkpoint(path, "recommender", {
        "sizes": [model.n_users, model.n_items, model.n_attrs],
        "config": dataclasses.asdict(model.config),
        "state": model.state_dict(),
    })


def load_recommender(path: str | Path) -> ContextRecommender:
    payload = load_checkpoint(path, "recommender")
    config = _merge(ModelConfig, ModelConfig(), payload["config"])
    model = ContextRecommender(*payload["sizes"], config)
    model.load_state_dict(payload["state"])
    model.eval()
    return model


# -- policies -----------------------------------------------------------------


def save_policies(bundle: PolicyBundle, path: str | Path) -> None:
    attr_in = bundle.attr_policy.net[0].in_features
    attr_out = bundle.attr_policy.net[2].out_features
    conv_in = bundle.conv_policy.net[0].in_features
    save_checkpoint(path, "policy", {
        "dims": [attr_in, attr_out, conv_in],
        "config": dataclasses.asdict(bundle.config),
        "attr_state": bundle.attr_policy.state_dict(),
        "conv_state": bundle.conv_policy.state_dict(),
    })


def load_policies(path: str | Path) -> PolicyBundle:
    payload = load_checkpoint(path, "policy")
    config = _merge(PolicyConfig, PolicyConfig(), payload["config"])
    attr_in, attr_out, conv_in = payload["dims"]
    attr_policy = MLPPolicy(attr_in, attr_out, config.hidden)
    conv_policy = MLPPolicy(conv_in, 2, config.hidden)
    attr_policy.load_state_dict(payload["attr_state"])
    conv_policy.load_state_dict(payload["conv_state"])
    attr_policy.eval()
    conv_policy.eval()
    return PolicyBundle(attr_policy=attr_policy, conv_policy=conv_policy, config=config)
