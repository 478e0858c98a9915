import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_history
from sleepfair.core import (
    MAX_GROUPS,
    Distribution,
    MalformedRoundError,
    Round,
    Stream,
    StreamMeta,
    expected_loss,
    group_mask,
    group_members,
    overall_regret,
    read_stream,
    regret_trajectory,
    sleeping_regret,
    subgroup_regret,
    write_stream,
)


def test_expected_loss_examples():
    assert expected_loss(Distribution({0: 1.0}), {0: 0.7}) == 0.7
    assert expected_loss(Distribution({0: 0.5, 1: 0.5}), {0: 0.0, 1: 1.0}) == 0.5
    assert expected_loss(Distribution({0: 0.5, 1: 0.5}), {0: 0.3, 1: 0.3}) == pytest.approx(0.3, abs=1e-15)


def test_expected_loss_needs_support_losses():
    with pytest.raises(MalformedRoundError):
        expected_loss(Distribution({0: 0.5, 1: 0.5}), {0: 0.2})


def test_distribution_validation():
    with pytest.raises(MalformedRoundError):
        Distribution({0: 0.6, 1: 0.6})
    with pytest.raises(MalformedRoundError):
        Distribution({0: 1.5, 1: -0.5})
    assert Distribution({0: 1.0, 1: 0.0}).support == {0}


def test_round_rejects_out_of_range_loss():
    with pytest.raises(MalformedRoundError) as err:
        Round(7, 0, {0: 1.2})
    assert err.value.t == 7
    with pytest.raises(MalformedRoundError):
        Round(1, 0, {0: -0.1})


def test_group_masks():
    assert group_mask([0, 2]) == 0b101
    assert group_members(0b101) == (0, 2)
    with pytest.raises(ValueError):
        group_mask([MAX_GROUPS])


def test_overall_regret_examples(two_round):
    assert overall_regret(two_round, [0, 1]) == 0.0
    h = make_history([[1, 0], [1, 0]], [[1, 0], [1, 0]])
    assert overall_regret(h, [0, 1]) == 2.0
    single = make_history([[1.0]] * 3, [[0.2], [0.9], [0.4]])
    assert overall_regret(single, [0]) == 0.0


def test_subgroup_regret_examples(two_round):
    # group 0 only in round 1, where the best comparator has loss 0
    assert subgroup_regret(two_round, 0, [0, 1]) == 0.5
    assert subgroup_regret(two_round, 5, [0, 1]) == 0.0
    everyone = make_history([[0.5, 0.5], [0.5, 0.5]], [[0, 1], [1, 0]], groups=[1, 1])
    assert subgroup_regret(everyone, 0, [0, 1]) == overall_regret(everyone, [0, 1])


def test_subgroup_regret_empty_comparators_errors(two_round):
    with pytest.raises(ValueError):
        subgroup_regret(two_round, 0, [])


def test_sleeping_regret_examples():
    h = make_history([[0.5, 0.5], [1.0, 0.0]], [[1.0, 0.0], [0.3, np.nan]])
    assert sleeping_regret(h, 1) == 0.5
    never = make_history([[1.0, 0.0]], [[0.4, np.nan]])
    assert sleeping_regret(never, 1) == 0.0
    always = make_history([[0.5, 0.5], [0.2, 0.8]], [[0.1, 0.9], [0.6, 0.2]])
    assert sleeping_regret(always, 0) == overall_regret(always, [0])
    with pytest.raises(KeyError):
        sleeping_regret(always, 9)


def test_negative_regret_reported_as_is():
    h = make_history([[0.5, 0.5]], [[0.0, 1.0]])
    assert sleeping_regret(h, 1) == -0.5


def test_comparator_must_be_awake():
    h = make_history([[1.0, 0.0]], [[0.4, np.nan]])
    with pytest.raises(ValueError):
        overall_regret(h, [0, 1])


def test_trajectory_ends_at_metric(two_round):
    traj = regret_trajectory(two_round, [0, 1])
    assert traj[-1] == overall_regret(two_round, [0, 1])
    rows = np.array([True, False])
    assert regret_trajectory(two_round, [0, 1], rows)[-1] == subgroup_regret(two_round, 0, [0, 1])


@st.composite
def histories(draw, max_T=12, max_n=4):
    T = draw(st.integers(1, max_T))
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    losses = rng.random((T, n))
    w = rng.random((T, n)) + 1e-3
    probs = w / w.sum(axis=1, keepdims=True)
    groups = rng.integers(0, 4, T)
    return make_history(probs, losses, groups=groups)


@settings(max_examples=200, deadline=None)
@given(histories())
def test_overall_regret_is_max_sleeping_regret(h):
    everyone = range(h.n_experts)
    best = max(sleeping_regret(h, f) for f in everyone)
    assert overall_regret(h, everyone) == pytest.approx(best, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(histories())
def test_metrics_are_pure(h):
    ids = list(range(h.n_experts))
    assert overall_regret(h, ids) == overall_regret(h, ids)
    assert subgroup_regret(h, 1, ids) == subgroup_regret(h, 1, ids)


@settings(max_examples=200, deadline=None)
@given(histories())
def test_partition_subgroup_regret_dominates(h):
    # bit 0 of the group mask splits the stream in two
    ids = list(range(h.n_experts))
    parts = subgroup_regret(h, 0, ids) + _complement_regret(h, ids)
    assert parts >= overall_regret(h, ids) - 1e-12


def _complement_regret(h, ids):
    rows = ~((h.groups & np.uint64(1)).astype(bool))
    if not rows.any():
        return 0.0
    return float(h.expected_losses[rows].sum() - np.nan_to_num(h.losses[rows][:, ids]).sum(axis=0).min())


def test_stream_validation():
    with pytest.raises(ValueError):
        Stream(np.array([0b100], dtype=np.uint64), np.zeros((1, 1)), ("r",), ("a", "b"))


def test_stream_meta_counts():
    groups = np.array([0b01, 0b11, 0b10, 0b11], dtype=np.uint64)
    meta = StreamMeta.from_groups(groups, 2)
    assert meta.group_sizes == {0: 3, 1: 3}
    assert meta.intersection_sizes == {1: 1, 2: 1, 3: 2}


def test_stream_roundtrip(tmp_path):
    losses = np.array([[0.25, np.nan], [1.0, 0.0], [0.1, 0.3]])
    stream = Stream(np.array([1, 3, 0], dtype=np.uint64), losses, ("f", "g"), ("A", "B"), labels=np.array([1, -1, 1], dtype=np.int8))
    path = tmp_path / "s.jsonl"
    write_stream(stream, path)
    back = read_stream(path)
    assert back.rule_names == stream.rule_names and back.group_names == stream.group_names
    np.testing.assert_array_equal(back.groups, stream.groups)
    np.testing.assert_array_equal(back.losses, stream.losses)
    np.testing.assert_array_equal(back.labels, stream.labels)


def test_read_stream_rejects_gaps(tmp_path):
    path = tmp_path / "s.jsonl"
    path.write_text('{"t": 1, "groups": "0x0", "losses": [0.1]}\n{"t": 3, "groups": "0x0", "losses": [0.1]}\n')
    with pytest.raises(MalformedRoundError):
        read_stream(path)


def test_history_iteration_gives_rounds(two_round):
    entries = list(two_round)
    rnd, dist, explored = entries[0]
    assert rnd.t == 1 and rnd.losses == {0: 0.0, 1: 1.0}
    assert math.isclose(expected_loss(dist, rnd.losses), 0.5)
    assert not explored
