import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from convrec.agents import ScoringRuntime
from convrec.catalog import build_graph
from convrec.config import Config, ModelConfig, PolicyConfig
from convrec.environment import ConversationEnv, read_episode_log
from convrec.evalkit import compute_metrics
from convrec.policy import build_policies
from convrec.recommender import build_model
from convrec.rgcn import Propagation
from convrec.service import ServiceContext, create_app
from convrec.synthetic import make_unique_attr_catalog
from convrec.transe import KGEmbeddings


def make_context(tmp_path, agent="rule") -> ServiceContext:
    catalog = make_unique_attr_catalog(n_items=15, n_attrs=8, attrs_per_item=3,
                                       n_users=6, interactions_per_user=5, seed=3)
    cfg = Config()
    cfg.service.agent = agent
    cfg.eval.split = "all"
    model = build_model(catalog.n_users, catalog.n_items, catalog.n_attrs,
                        ModelConfig(dim=8, heads=2, seed=2))
    runtime = ScoringRuntime(model, Propagation.from_graph(build_graph(catalog)))
    policies = build_policies(catalog.n_attrs, cfg.env.max_turns, cfg.env.list_size,
                              PolicyConfig(seed=4))
    rng = np.random.default_rng(1)
    kg = KGEmbeddings(users=rng.normal(size=(catalog.n_users, 4)),
                      items=rng.normal(size=(catalog.n_items, 4)),
                      attrs=rng.normal(size=(catalog.n_attrs, 4)),
                      relations=np.zeros((2, 4)))
    return ServiceContext(
        cfg=cfg, catalog=catalog, env=ConversationEnv(catalog, cfg.env),
        runtime=runtime, policies=policies, kg=kg,
        history={u: catalog.interacted_items(u) for u in catalog.users},
        log_path=tmp_path / "service_episodes.jsonl",
    )


@pytest.fixture
def client(tmp_path):
    return TestClient(create_app(make_context(tmp_path))), tmp_path


def create_session(client, **kwargs):
    payload = {"user": "u0000", "previous_items": ["i0001", "i0002"], "mode": "human"}
    payload.update(kwargs)
    resp = client.post("/v1/sessions", json=payload)
    assert resp.status_code == 201, resp.text
    return resp.json()


def test_health(client):
    c, _ = client
    assert c.get("/v1/health").json() == {"status": "ok"}


def test_create_echoes_context_and_unknown_user_404(client):
    c, _ = client
    body = create_session(c)
    assert body["previous_items"] == ["i0001", "i0002"]
    assert body["turn"] == 1 and body["awaiting"] == "system"
    assert c.post("/v1/sessions", json={"user": "nobody"}).status_code == 404
    other = create_session(c)
    assert other["id"] != body["id"]


def test_turn_alternation_enforced(client):
    c, _ = client
    sid = create_session(c)["id"]
    # feedback before any system action -> 409
    resp = c.post(f"/v1/sessions/{sid}/feedback",
                  json={"type": "attribute", "value": "accept"})
    assert resp.status_code == 409
    action = c.post(f"/v1/sessions/{sid}/turn").json()
    assert action["kind"] in ("ask", "recommend")
    # second turn without feedback -> 409
    assert c.post(f"/v1/sessions/{sid}/turn").status_code == 409


def test_unknown_session_404(client):
    c, _ = client
    assert c.get("/v1/sessions/zzz").status_code == 404
    assert c.post("/v1/sessions/zzz/turn").status_code == 404


def test_feedback_type_must_match(client):
    c, _ = client
    sid = create_session(c)["id"]
    action = c.post(f"/v1/sessions/{sid}/turn").json()
    assert action["kind"] == "ask"  # 15 items > K with the rule agent
    resp = c.post(f"/v1/sessions/{sid}/feedback",
                  json={"type": "recommendation", "reject_all": True})
    assert resp.status_code == 400


def test_ask_accept_grows_accepted_set(client):
    c, _ = client
    sid = create_session(c)["id"]
    action = c.post(f"/v1/sessions/{sid}/turn").json()
    asked = action["attribute"]
    out = c.post(f"/v1/sessions/{sid}/feedback",
                 json={"type": "attribute", "value": "accept"}).json()
    session = c.get(f"/v1/sessions/{sid}").json()
    assert asked in session["accepted_attributes"]
    assert out["candidates"] == session["candidates"] <= 15


def test_unknown_changes_only_ask_pool(client):
    c, _ = client
    sid = create_session(c)["id"]
    before = c.get(f"/v1/sessions/{sid}").json()["candidates"]
    action = c.post(f"/v1/sessions/{sid}/turn").json()
    out = c.post(f"/v1/sessions/{sid}/feedback",
                 json={"type": "attribute", "value": "unknown"}).json()
    assert out["candidates"] == before
    session = c.get(f"/v1/sessions/{sid}").json()
    assert session["unknown_attributes"] == [action["attribute"]]
    assert session["accepted_attributes"] == [] and session["rejected_attributes"] == []


def test_human_session_to_success_and_persisted_record(client):
    c, tmp = client
    sid = create_session(c)["id"]
    # accept asks (flagging activation on the first) until a recommendation
    for turn in range(10):
        action = c.post(f"/v1/sessions/{sid}/turn").json()
        if action["kind"] == "recommend":
            item = action["items"][2]["item"]
            out = c.post(f"/v1/sessions/{sid}/feedback",
                         json={"type": "recommendation", "accepted_item": item}).json()
            assert out["done"] and out["success"]
            assert out["summary"]["rank"] == 3
            assert out["summary"]["turn"] == turn + 1
            assert 0 < out["summary"]["hn"] <= 1.0
            break
        out = c.post(f"/v1/sessions/{sid}/feedback",
                     json={"type": "attribute", "value": "accept",
                           "activated": turn == 0}).json()
        assert not out["done"]
    else:
        pytest.fail("never saw a recommendation")

    # terminated session rejects further turns
    assert c.post(f"/v1/sessions/{sid}/turn").status_code == 409

    records = read_episode_log(tmp / "service_episodes.jsonl")
    assert len(records) == 1
    assert records[0].mode == "human"
    assert records[0].activation_turn == 1
    m = compute_metrics(records, 10, 10)
    assert m.sr == 1.0


def test_accepted_item_must_be_recommended(client):
    c, _ = client
    sid = create_session(c)["id"]
    action = c.post(f"/v1/sessions/{sid}/turn").json()
    while action["kind"] == "ask":
        c.post(f"/v1/sessions/{sid}/feedback", json={"type": "attribute", "value": "accept"})
        action = c.post(f"/v1/sessions/{sid}/turn").json()
    offered = {entry["item"] for entry in action["items"]}
    outside = next(f"i{k:04d}" for k in range(15) if f"i{k:04d}" not in offered)
    resp = c.post(f"/v1/sessions/{sid}/feedback",
                  json={"type": "recommendation", "accepted_item": outside})
    assert resp.status_code == 400


def test_simulated_mode_samples_history(tmp_path):
    ctx = make_context(tmp_path)
    # users may re-interact with the same item; the sampled target is the
    # chronologically next event, not a set difference
    ctx.history[0] = [1, 2, 1, 2, 1]
    c = TestClient(create_app(ctx))
    resp = c.post("/v1/sessions", json={"user": "u0000", "mode": "simulated"})
    assert resp.status_code == 201, resp.text
    body = resp.json()
    assert len(body["previous_items"]) >= 1

    resp = c.post("/v1/sessions", json={"user": "u0000", "mode": "simulated",
                                        "previous_items": ["i0001"]})
    assert resp.status_code == 400  # explicit context needs an explicit target


def test_simulated_mode_plays_full_turns(client):
    c, tmp = client
    body = create_session(c, mode="simulated", previous_items=["i0001"], target="i0004")
    sid = body["id"]
    resp = c.post(f"/v1/sessions/{sid}/feedback",
                  json={"type": "attribute", "value": "accept"})
    assert resp.status_code == 409  # simulator owns the feedback
    for _ in range(10):
        out = c.post(f"/v1/sessions/{sid}/turn").json()
        assert "feedback" in out and "action" in out
        if out["state"]["done"]:
            break
    assert out["state"]["done"]
    records = read_episode_log(tmp / "service_episodes.jsonl")
    assert records and records[-1].mode == "simulated"


def test_metrics_endpoint_aggregates_log(client):
    c, tmp = client
    body = create_session(c, mode="simulated", previous_items=["i0001"], target="i0004")
    sid = body["id"]
    while True:
        out = c.post(f"/v1/sessions/{sid}/turn").json()
        if out["state"]["done"]:
            break
    metrics = c.get("/v1/metrics").json()
    assert metrics["episodes"] == 1
    assert "simulated" in metrics["by_mode"]
    assert "sr" in metrics["by_mode"]["simulated"]


def test_concurrent_sessions_do_not_interfere(client):
    c, _ = client
    a = create_session(c)["id"]
    b = create_session(c, user="u0001", previous_items=["i0003", "i0005"])["id"]
    act_a = c.post(f"/v1/sessions/{a}/turn").json()
    act_b = c.post(f"/v1/sessions/{b}/turn").json()
    c.post(f"/v1/sessions/{a}/feedback", json={"type": "attribute", "value": "accept"})
    state_a = c.get(f"/v1/sessions/{a}").json()
    state_b = c.get(f"/v1/sessions/{b}").json()
    assert state_a["accepted_attributes"] == [act_a["attribute"]]
    assert state_b["accepted_attributes"] == []
    assert state_b["awaiting"] == "user"
    c.post(f"/v1/sessions/{b}/feedback", json={"type": "attribute", "value": "reject"})
    assert c.get(f"/v1/sessions/{b}").json()["rejected_attributes"] == [act_b["attribute"]]


def test_parallel_requests_distinct_sessions(client):
    c, _ = client
    sids = [create_session(c)["id"] for _ in range(4)]
    errors = []

    def play(sid):
        try:
            for _ in range(3):
                action = c.post(f"/v1/sessions/{sid}/turn").json()
                if action.get("kind") == "ask":
                    c.post(f"/v1/sessions/{sid}/feedback",
                           json={"type": "attribute", "value": "unknown"})
                else:
                    c.post(f"/v1/sessions/{sid}/feedback",
                           json={"type": "recommendation", "reject_all": True})
        except Exception as exc:  # pragma: no cover
            errors.append(exc)

    threads = [threading.Thread(target=play, args=(sid,)) for sid in sids]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert not errors
    for sid in sids:
        state = c.get(f"/v1/sessions/{sid}").json()
        assert len(state["unknown_attributes"]) + len(state["rejected_items"]) >= 1


def test_env_overrides_beat_config():
    from convrec.config import Config
    from convrec.service import apply_env_overrides

    cfg = apply_env_overrides(Config(), env={
        "CONVREC_HOST": "0.0.0.0", "CONVREC_PORT": "9999",
        "CONVREC_WORKDIR": "/elsewhere", "CONVREC_LOG_PATH": "/var/log/x.jsonl",
    })
    assert cfg.service.host == "0.0.0.0"
    assert cfg.service.port == 9999
    assert cfg.data.workdir == "/elsewhere"
    assert cfg.service.log_path == "/var/log/x.jsonl"


def test_idle_sessions_expire():
    import time

    from fastapi import HTTPException

    from convrec.service import LiveSession, SessionStore

    store = SessionStore(ttl_seconds=3600)
    stale = LiveSession(id="old", mode="human", session=None, state=None, agent=None,
                        sim=None, created=0.0, updated=time.time() - 7200)
    fresh = LiveSession(id="new", mode="human", session=None, state=None, agent=None,
                        sim=None, created=0.0, updated=time.time())
    store.add(stale)
    store.add(fresh)
    assert store.get("new").id == "new"
    with pytest.raises(HTTPException) as err:
        store.get("old")
    assert err.value.status_code == 404


def test_session_restore_from_get(client):
    c, _ = client
    sid = create_session(c)["id"]
    action = c.post(f"/v1/sessions/{sid}/turn").json()
    snapshot = c.get(f"/v1/sessions/{sid}").json()
    assert snapshot["pending_action"] == action
    c.post(f"/v1/sessions/{sid}/feedback", json={"type": "attribute", "value": "unknown"})
    snapshot = c.get(f"/v1/sessions/{sid}").json()
    assert len(snapshot["transcript"]) == 1
    assert snapshot["transcript"][0]["feedback"]["value"] == "unknown"
