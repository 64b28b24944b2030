import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convrec.config import EnvConfig
from convrec.environment import (Action, ConversationEnv, EpisodeRecord,
                                 discounted_returns, episode_record, read_episode_log,
                                 write_episode_log)
from convrec.simulator import Session, SimUserState

from conftest import make_catalog


@pytest.fixture
def catalog():
    return make_catalog(
        n_users=2,
        item_attrs=[{0, 1}, {1, 2}, {2, 3}, {0, 3}, {1, 3}],
        interactions={0: [(0, 1), (1, 2), (2, 3)], 1: [(3, 1), (4, 2)]},
    )


@pytest.fixture
def env(catalog):
    return ConversationEnv(catalog, EnvConfig())


def make_sim(catalog, targets=(0, 1), activation=frozenset({1})):
    session = Session(user=0, targets=tuple(targets),
                      oracle=tuple(catalog.item_attrs[v] for v in targets),
                      activation=activation)
    return session, SimUserState(session)


def test_reset_initializes_full_candidate_sets(catalog, env):
    state = env.reset()
    assert state.turn == 1
    assert state.v_cand.all() and state.a_cand.all()
    assert not state.a_acc and not state.a_rej and not state.a_unknown and not state.v_rej
    assert state.transcript == []
    other = env.reset()
    assert np.array_equal(state.v_cand, other.v_cand)
    assert state.turn == other.turn


def test_ask_accept_filters_and_prunes(catalog, env):
    # item 1 = {1, 2}; activation {1}
    session, sim = make_sim(catalog)
    state = env.reset()
    feedback, reward, done = env.step(state, Action.ask(1), sim)
    assert feedback.value == "accept"
    assert reward == pytest.approx(0.01)
    assert not done
    # items carrying attr 1: 0, 1, 4
    assert set(state.candidate_items()) == {0, 1, 4}
    assert not state.a_cand[1]          # asked attribute leaves the pool
    assert state.a_acc == {1}
    assert state.activated and state.activation_turn == 1
    # attr 2 is carried by candidate item 1; attr 3 by item 4; attr 0 by item 0
    assert state.a_cand[0] and state.a_cand[2] and state.a_cand[3]
    assert state.turn == 2


def test_ask_accept_prunes_dead_attributes(catalog):
    c = make_catalog(1, [{0, 1}, {2}], {0: [(0, 1), (1, 2)]})
    env = ConversationEnv(c, EnvConfig())
    session = Session(user=0, targets=(1, 0), oracle=(c.item_attrs[1], c.item_attrs[0]),
                      activation=frozenset({0}))
    sim = SimUserState(session)
    state = env.reset()
    env.step(state, Action.ask(0), sim)
    assert set(state.candidate_items()) == {0}
    assert not state.a_cand[2]  # attribute 2 has no remaining candidate


def test_ask_unknown_changes_only_ask_pool(catalog, env):
    session, sim = make_sim(catalog)  # activation {1}
    state = env.reset()
    v_before = state.v_cand.copy()
    feedback, reward, done = env.step(state, Action.ask(3), sim)
    assert feedback.value == "unknown"
    assert reward == pytest.approx(-0.1)
    assert np.array_equal(state.v_cand, v_before)
    assert not state.a_cand[3]
    assert state.a_unknown == {3}
    assert not state.a_acc and not state.a_rej and not state.v_rej
    assert not state.activated


def test_ask_reject_keeps_items_by_default(catalog, env):
    session, sim = make_sim(catalog)
    state = env.reset()
    env.step(state, Action.ask(1), sim)   # activate
    v_before = state.v_cand.copy()
    feedback, reward, _ = env.step(state, Action.ask(0), sim)  # 0 not in oracle {1,2}
    assert feedback.value == "reject"
    assert reward == pytest.approx(-0.1)
    assert np.array_equal(state.v_cand, v_before)
    assert state.a_rej == {0}


def test_ask_reject_filters_items_when_enabled(catalog):
    env = ConversationEnv(catalog, EnvConfig(reject_filters_items=True))
    session, sim = make_sim(catalog)
    state = env.reset()
    env.step(state, Action.ask(1), sim)
    env.step(state, Action.ask(0), sim)  # reject -> drop items with attr 0
    assert set(state.candidate_items()) == {1, 4}


def test_recommend_success_terminal(catalog, env):
    session, sim = make_sim(catalog)
    state = env.reset()
    feedback, reward, done = env.step(state, Action.recommend((3, 1, 4)), sim)
    assert done and state.success
    assert reward == pytest.approx(1.0)
    assert state.success_turn == 1 and state.accepted_rank == 2
    with pytest.raises(ValueError):
        env.step(state, Action.ask(0), sim)


def test_recommend_reject_shrinks_pool(catalog, env):
    session, sim = make_sim(catalog)
    state = env.reset()
    feedback, reward, done = env.step(state, Action.recommend((3, 4)), sim)
    assert feedback.accepted_rank is None
    assert reward == pytest.approx(-0.1)
    assert state.v_rej == {3, 4}
    assert set(state.candidate_items()) == {0, 1, 2}


def test_quit_penalty_composes_on_final_turn(catalog):
    env = ConversationEnv(catalog, EnvConfig(max_turns=2))
    session, sim = make_sim(catalog)
    state = env.reset()
    _, r1, done = env.step(state, Action.ask(0), sim)
    assert not done and r1 == pytest.approx(-0.1)
    _, r2, done = env.step(state, Action.ask(3), sim)
    assert done and not state.success
    assert r2 == pytest.approx(-0.1 + -0.3)


def test_action_validation(catalog, env):
    session, sim = make_sim(catalog)
    state = env.reset()
    with pytest.raises(ValueError):
        env.step(state, Action.recommend(tuple()), sim)
    with pytest.raises(ValueError):
        env.step(state, Action.recommend((1, 1)), sim)
    with pytest.raises(ValueError):
        env.step(state, Action.recommend(tuple(range(11))), sim)
    env.step(state, Action.ask(1), sim)
    with pytest.raises(ValueError):
        env.step(state, Action.ask(1), sim)  # no longer a candidate
    state2 = env.reset()
    env.step(state2, Action.recommend((2,)), sim)
    with pytest.raises(ValueError):
        env.step(state2, Action.recommend((2,)), sim)  # 2 was rejected


def test_discounted_returns_values():
    assert discounted_returns([0.0, 0.0, 1.0], 0.7) == pytest.approx([0.49, 0.7, 1.0])
    assert discounted_returns([1.0, 2.0, 3.0], 0.0) == [1.0, 2.0, 3.0]
    assert discounted_returns([0.0, 0.0], 0.9) == [0.0, 0.0]
    with pytest.raises(ValueError):
        discounted_returns([1.0], 1.5)


@settings(max_examples=50, deadline=None)
@given(rewards=st.lists(st.floats(min_value=-5, max_value=5), min_size=1, max_size=12),
       gamma=st.floats(min_value=0.0, max_value=1.0))
def test_discounted_returns_recursion_property(rewards, gamma):
    out = discounted_returns(rewards, gamma)
    assert out[-1] == pytest.approx(rewards[-1])
    for t in range(len(rewards) - 1):
        assert out[t] == pytest.approx(rewards[t] + gamma * out[t + 1])


def random_episode_invariants(catalog, env, rng):
    """One random episode; returns the violated invariant names."""
    targets = rng.choice(catalog.n_items, size=2, replace=False)
    oracle = catalog.item_attrs[int(targets[-1])]
    activation = frozenset(rng.choice(sorted(oracle),
                                      size=min(2, len(oracle)), replace=False).tolist())
    session = Session(user=0, targets=tuple(int(t) for t in targets),
                      oracle=tuple(catalog.item_attrs[int(v)] for v in targets),
                      activation=activation)
    sim = SimUserState(session)
    state = env.reset()
    rewards = env.config.rewards
    allowed = set(rewards.as_list())
    done = False
    steps = 0
    while not done:
        v_size, a_size = state.v_cand.sum(), state.a_cand.sum()
        cand_attrs = state.candidate_attrs()
        if len(cand_attrs) and rng.random() < 0.6:
            action = Action.ask(int(rng.choice(cand_attrs)))
        else:
            items = state.candidate_items()
            k = min(env.config.list_size, len(items))
            action = Action.recommend(tuple(int(v) for v in rng.choice(items, size=k,
                                                                       replace=False)))
        pre_activated = sim.activated
        feedback, reward, done = env.step(state, action, sim)
        steps += 1
        assert steps <= env.config.max_turns, "episode exceeded the turn budget"
        assert state.v_cand[session.target], "target left the candidate set"
        assert state.v_cand.sum() <= v_size and state.a_cand.sum() <= a_size, "candidates grew"
        if action.kind == "ask" and not pre_activated and action.attribute not in activation:
            assert feedback.value == "unknown", "pre-activation ask leaked accept/reject"
        if done and not state.success:
            assert any(abs(reward - (r + rewards.quit)) < 1e-12 for r in allowed)
        else:
            assert any(abs(reward - r) < 1e-12 for r in allowed)
    return state


def test_randomized_episode_invariants(catalog, env):
    rng = np.random.default_rng(123)
    for _ in range(200):
        random_episode_invariants(catalog, env, rng)


def test_episode_record_round_trip(catalog, env):
    session, sim = make_sim(catalog)
    state = env.reset()
    env.step(state, Action.ask(1), sim)
    env.step(state, Action.recommend((1,)), sim)
    record = episode_record(state, session, catalog.ids)
    line = record.to_json_line()
    back = EpisodeRecord.from_dict(json.loads(line))
    assert back == record
    assert back.success and back.success_turn == 2 and back.accepted_rank == 1
    assert back.activation_turn == 1


def test_episode_log_round_trip(catalog, env, tmp_path):
    session, sim = make_sim(catalog)
    state = env.reset()
    env.step(state, Action.recommend((1,)), sim)
    records = [episode_record(state, session, catalog.ids)]
    path = tmp_path / "episodes.jsonl"
    write_episode_log(records, path)
    assert read_episode_log(path) == records
