import numpy as np
import pytest

from convrec.environment import EpisodeRecord
from convrec.evalkit import compute_metrics, format_metrics_table, hn_score


def record(success, turn=None, rank=None, activation_turn=None, mode="simulated"):
    return EpisodeRecord(user="u0", targets=["i0", "i1"], activation=["a0"], turns=[],
                         success=success, success_turn=turn, accepted_rank=rank,
                         activation_turn=activation_turn, mode=mode)


def test_hn_score_values():
    assert hn_score(1, 1) == pytest.approx(1.0, abs=1e-12)
    assert hn_score(1, 2) == pytest.approx(0.8638, abs=1e-4)
    assert hn_score(10, 1) == pytest.approx(0.2891, abs=1e-4)
    assert hn_score(10, 1) == pytest.approx(1.0 / np.log2(11))


def test_hn_score_strictly_decreasing():
    for t in range(1, 10):
        assert hn_score(t, 1) > hn_score(t + 1, 1)
    for k in range(1, 10):
        assert hn_score(3, k) > hn_score(3, k + 1)
    with pytest.raises(ValueError):
        hn_score(0, 1)


def test_metrics_all_first_turn_successes():
    records = [record(True, 1, 1, activation_turn=1) for _ in range(5)]
    m = compute_metrics(records, 10, 10)
    assert m.sr == 1.0 and m.at == 1.0 and m.hn == pytest.approx(1.0)
    assert m.ar == 1.0
    assert (m.sr_at == 1.0).all()


def test_metrics_failure_counts_full_budget():
    records = [record(True, 3, 1), record(False)]
    m = compute_metrics(records, 10, 10)
    assert m.at == pytest.approx(6.5)
    assert m.sr == pytest.approx(0.5)
    assert m.sr_at[0] == 0.0 and m.sr_at[2] == pytest.approx(0.5)


def test_metrics_crafted_log_hand_computed():
    records = [
        record(True, 1, 1, activation_turn=1),
        record(True, 3, 2, activation_turn=2),
        record(False, activation_turn=4),
        record(True, 10, 10, activation_turn=1),
    ]
    m = compute_metrics(records, 10, 10)
    assert m.episodes == 4
    assert m.at == pytest.approx((1 + 3 + 10 + 10) / 4)
    expected_hn = (hn_score(1, 1) + hn_score(3, 2) + 0.0 + hn_score(10, 10)) / 4
    assert m.hn == pytest.approx(expected_hn, abs=1e-12)
    np.testing.assert_allclose(m.sr_at, np.array([1, 1, 2, 2, 2, 2, 2, 2, 2, 3]) / 4)
    np.testing.assert_allclose(m.ar_at, np.array([2, 3, 3, 4, 4, 4, 4, 4, 4, 4]) / 4)


def test_metrics_permutation_invariant():
    records = [record(True, 2, 1), record(False), record(True, 7, 3, activation_turn=5)]
    m1 = compute_metrics(records, 10, 10)
    m2 = compute_metrics(records[::-1], 10, 10)
    assert m1.at == m2.at and m1.hn == m2.hn
    assert np.array_equal(m1.sr_at, m2.sr_at) and np.array_equal(m1.ar_at, m2.ar_at)


def test_metrics_monotone_and_all_failure():
    records = [record(False) for _ in range(4)]
    m = compute_metrics(records, 10, 10)
    assert m.at == 10.0 and m.hn == 0.0 and m.sr == 0.0
    records = [record(True, t, 1) for t in (2, 5, 5, 9)]
    m = compute_metrics(records, 10, 10)
    assert (np.diff(m.sr_at) >= 0).all()
    assert (np.diff(m.ar_at) >= 0).all()
    assert m.hn > 0.0  # zero only when no episode succeeded


def test_metrics_bounds_checked():
    with pytest.raises(ValueError):
        compute_metrics([record(True, 11, 1)], 10, 10)
    with pytest.raises(ValueError):
        compute_metrics([], 10, 10)


def test_format_table_contains_values():
    m = compute_metrics([record(True, 1, 1)], 10, 10)
    text = format_metrics_table(m, "oracle")
    assert "SR" in text and "1.000" in text and "oracle" in text
