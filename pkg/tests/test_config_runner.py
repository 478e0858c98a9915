import json

import numpy as np
import pytest

from sleepfair.config import load_config, parse_config, with_override
from sleepfair.core import ConfigError, MalformedRoundError
from sleepfair.runner import sample_actions, simulate, substream

RANDOM = {"instance": {"T": 300, "groups": ["a", "b"], "membership": [0.5, 0.5], "n_global": 2, "n_per_group": 1}}


@pytest.mark.parametrize(
    "data",
    [
        {"instance": {"T": 10, "surprise": 1}},
        {"instance": {"generator": "ic", "T": 11}},
        {"instance": {"groups": ["a"], "membership": []}},
        {"learner": {"algorithm": "mw"}, "feedback": {"reduction": 2}},
        {"learner": {"algorithm": "intersection_mw"}, "feedback": {"reduction": 1}},
        {"feedback": {"reduction": 2}, "pool": {"additions": [{"t": 5, "rule": "f0"}]}},
        {"feedback": {"mode": "pay-for-feedback"}},
        {"seeds": [-1]},
        {"learner": {"eta": 1.5}},
    ],
)
def test_invalid_configs(data):
    with pytest.raises(ConfigError):
        parse_config(data)


def test_error_lists_fields():
    with pytest.raises(ConfigError) as err:
        parse_config({"instance": {"T": -1, "bogus": 2}})
    assert "instance.T" in str(err.value) and "instance.bogus" in str(err.value)


def test_defaults_and_mode():
    cfg = parse_config({})
    assert cfg.feedback.mode == "full" and cfg.seeds == [0]
    assert parse_config({"feedback": {"reduction": 3}}).feedback.mode == "pay-for-feedback"


def test_digest_is_canonical():
    a = parse_config(RANDOM)
    b = parse_config(json.loads(json.dumps(RANDOM)))
    assert a.digest() == b.digest() and len(a.digest()) == 64
    assert with_override(a, "instance.T", 301).digest() != a.digest()


def test_with_override():
    cfg = with_override(parse_config(RANDOM), "instance.T", 500)
    assert cfg.instance.T == 500
    with pytest.raises(ConfigError):
        with_override(cfg, "instance.nope", 1)
    with pytest.raises(ConfigError):
        with_override(cfg, "instance.T", -5)


def test_load_config(tmp_path):
    path = tmp_path / "c.yaml"
    path.write_text("instance:\n  generator: ic\n  T: 20\n")
    assert load_config(path).instance.generator == "ic"
    path.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(path)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_substreams_are_independent():
    a = substream(3, "stream-gen").random(5)
    substream(3, "sampling").random(100)
    np.testing.assert_array_equal(a, substream(3, "stream-gen").random(5))
    assert not np.array_equal(a, substream(3, "exploration-draws").random(5))
    assert not np.array_equal(a, substream(4, "stream-gen").random(5))


def test_simulate_is_deterministic():
    cfg = parse_config({**RANDOM, "feedback": {"reduction": 3}})
    a, b = simulate(cfg, 2), simulate(cfg, 2)
    np.testing.assert_array_equal(a.history.probs, b.history.probs)
    assert a.log.explored == b.log.explored


def test_exploration_draws_do_not_change_the_stream():
    full = simulate(parse_config(RANDOM), 1)
    limited = simulate(parse_config({**RANDOM, "feedback": {"reduction": 2}}), 1)
    np.testing.assert_array_equal(full.stream.losses, limited.stream.losses)


def test_additions_are_born_late():
    cfg = parse_config({**RANDOM, "pool": {"additions": [{"t": 100, "rule": "f0", "group": "b"}]}})
    sim = simulate(cfg, 0)
    new = sim.pool.N - 1
    assert sim.pool[new].born_at == 100 and sim.history.born_at[new] == 100
    assert not sim.history.awake[:99, new].any()
    assert np.all(sim.history.probs[:99, new] == 0)
    np.testing.assert_allclose(sim.history.probs.sum(axis=1), 1.0)


def test_pool_errors():
    with pytest.raises(ConfigError):
        simulate(parse_config({**RANDOM, "pool": {"global": ["nope"]}}), 0)
    with pytest.raises(ConfigError):
        simulate(parse_config({**RANDOM, "pool": {"groups": {"zzz": ["f0"]}}}), 0)
    with pytest.raises(ConfigError):
        simulate(parse_config({**RANDOM, "pool": {"global": [], "groups": {}}}), 0)
    with pytest.raises(ConfigError):
        simulate(parse_config({**RANDOM, "learner": {"prior": [1.0]}}), 0)


def test_file_stream_loss_violation_reports_round(tmp_path):
    path = tmp_path / "s.jsonl"
    rows = [{"t": t, "groups": "0x0", "losses": [x]} for t, x in ((1, 0.1), (2, 0.2), (3, 1.5))]
    path.write_text('{"rules": ["f"], "groups": []}\n' + "".join(json.dumps(r) + "\n" for r in rows))
    cfg = parse_config({"instance": {"generator": "file", "path": str(path)}})
    with pytest.raises(MalformedRoundError) as err:
        simulate(cfg, 0)
    assert err.value.t == 3


def test_sample_actions():
    probs = np.array([[1.0, 0.0], [0.0, 1.0], [0.5, 0.5]])
    picks = sample_actions(probs, np.random.default_rng(0))
    assert picks[0] == 0 and picks[1] == 1
    sim = simulate(parse_config({**RANDOM, "sample_actions": True}), 0)
    assert np.all(sim.history.probs[np.arange(300), sim.sampled] > 0)
