import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepfair.algorithms import (
    AdaNormalHedge,
    IntersectionEnsemble,
    MultiplicativeWeights,
    anh_predict,
    anh_probs,
    anh_update,
    anh_weight,
    ensemble_step,
    make_learner,
    mw_learning_rate,
    mw_step,
)
from sleepfair.core import MalformedRoundError


def test_weight_examples():
    assert anh_weight(0, 0) == pytest.approx(0.5 * (math.exp(1 / 3) - 1), abs=1e-15)
    # the worked example prints 0.197801; e^(1/3) gives 0.1978062
    assert anh_weight(0, 0) == pytest.approx(0.197806, abs=1e-6)
    assert anh_weight(-5, 10) == 0.0
    assert anh_weight(2, 3) == pytest.approx(0.5 * (math.exp(9 / 12) - math.exp(1 / 12)), abs=1e-15)
    assert anh_weight(2, 3) == pytest.approx(0.515048, abs=1e-6)


def test_fresh_learner_is_uniform():
    np.testing.assert_array_equal(anh_predict(AdaNormalHedge(2), np.array([True, True])), [0.5, 0.5])


def test_probs_example():
    p = anh_probs(np.array([0.5, -0.5]), np.array([0.5, 0.5]), np.array([True, True]))
    w1, w2 = 0.5 * (math.exp(0.5) - 1), 0.5 * (math.exp(1 / 18) - 1)
    np.testing.assert_allclose(p, [w1 / (w1 + w2), w2 / (w1 + w2)], rtol=0, atol=1e-15)
    np.testing.assert_allclose(p, [0.91907, 0.08093], atol=1e-5)


def test_all_zero_weights_fall_back_to_uniform():
    p = anh_probs(np.array([-3.0, -2.0, 5.0]), np.array([4.0, 4.0, 1.0]), np.array([True, True, False]))
    np.testing.assert_array_equal(p, [0.5, 0.5, 0.0])


def test_no_awake_expert_errors():
    with pytest.raises(MalformedRoundError):
        anh_probs(np.zeros(2), np.zeros(2), np.array([False, False]))


def test_update_example():
    learner = AdaNormalHedge(2)
    anh_update(learner, np.array([0.5, 0.5]), np.array([0.0, 1.0]), np.array([True, True]))
    np.testing.assert_array_equal(learner.R, [0.5, -0.5])
    np.testing.assert_array_equal(learner.C, [0.5, 0.5])


def test_sleeping_expert_state_unchanged():
    learner = AdaNormalHedge(3)
    learner.R[:] = [0.3, -0.2, 1.0]
    learner.C[:] = [0.5, 0.4, 2.0]
    anh_update(learner, np.array([0.5, 0.5, 0.0]), np.array([0.2, 0.8, 0.0]), np.array([True, True, False]))
    assert learner.R[2] == 1.0 and learner.C[2] == 2.0


def test_loss_equal_to_expected_leaves_state():
    learner = AdaNormalHedge(2)
    anh_update(learner, np.array([0.5, 0.5]), np.array([0.4, 0.4]), np.array([True, True]))
    np.testing.assert_array_equal(learner.R, [0, 0])
    np.testing.assert_array_equal(learner.C, [0, 0])


def test_huge_regret_does_not_overflow():
    p = anh_probs(np.array([5000.0, 4999.0]), np.array([5000.0, 5000.0]), np.array([True, True]))
    assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0)
    assert p[0] > p[1]


def test_added_expert_joins_uniform_prior():
    learner = AdaNormalHedge(2)
    learner.add_expert()
    assert learner.n_experts == 3
    np.testing.assert_allclose(learner.q, [1 / 3] * 3)


def test_mw_example():
    mw = MultiplicativeWeights(2, 0.5)
    probs, mw = mw_step(mw, np.array([0.0, 1.0]))
    np.testing.assert_array_equal(probs, [0.5, 0.5])
    np.testing.assert_allclose(mw.weights, [1.0, 0.5])
    np.testing.assert_allclose(mw.distribution(), [2 / 3, 1 / 3], atol=1e-15)


def test_mw_zero_losses_keep_weights():
    mw = MultiplicativeWeights(3, 0.3)
    mw.step(np.zeros(3))
    np.testing.assert_array_equal(mw.weights, [1, 1, 1])


def test_mw_learning_rate():
    assert mw_learning_rate(4, 400) == pytest.approx(math.sqrt(math.log(4) / 400), abs=1e-15)
    assert mw_learning_rate(4, 400) == pytest.approx(0.058870, abs=1e-6)
    assert mw_learning_rate(100, 1) == 0.5
    assert mw_learning_rate(1, 1000) == 0.5
    with pytest.raises(ValueError):
        MultiplicativeWeights(2, 1.0)


def test_mw_log_weights_do_not_underflow():
    mw = MultiplicativeWeights(2, 0.5)
    for _ in range(5000):
        mw.step(np.array([1.0, 0.9]))
    p = mw.distribution()
    assert np.isfinite(p).all() and p[1] == pytest.approx(1.0)


def test_ensemble_routes_by_profile():
    ens = IntersectionEnsemble(3, eta=0.5)
    awake = np.ones(3, dtype=bool)
    ensemble_step(ens, 1, 0b01, awake, np.array([1.0, 0.0, 0.0]))
    probs_b, _ = ensemble_step(ens, 2, 0b10, awake, np.array([0.0, 0.0, 1.0]))
    np.testing.assert_allclose(probs_b, [1 / 3] * 3)
    np.testing.assert_allclose(ens.subs[0b01].mw.weights, [0.5, 1, 1])
    np.testing.assert_allclose(ens.subs[0b10].mw.weights, [1, 1, 0.5])


def test_ensemble_doubling_restarts():
    ens = IntersectionEnsemble(2)
    awake = np.ones(2, dtype=bool)
    for t in range(1, 4):
        ensemble_step(ens, t, 0b1, awake, np.array([0.0, 1.0]))
    sub = ens.subs[0b1]
    assert sub.r == 2 and sub.mw.weights[1] < 1
    ensemble_step(ens, 4, 0b1, awake, np.array([0.0, 1.0]))
    assert sub.r == 3 and sub.count == 0
    np.testing.assert_array_equal(sub.mw.weights, [1, 1])
    assert sub.mw.eta == mw_learning_rate(2, 8)


def test_ensemble_resets_on_new_expert():
    ens = IntersectionEnsemble(2, eta=0.5)
    ensemble_step(ens, 1, 0b1, np.array([True, True]), np.array([0.0, 1.0]))
    ens.add_expert()
    probs, _ = ensemble_step(ens, 2, 0b1, np.array([True, True, True]), np.array([0.0, 0.0, 0.0]))
    np.testing.assert_allclose(probs, [1 / 3] * 3)
    np.testing.assert_array_equal(ens.subs[0b1].mw.weights, [1, 1, 1])


def test_make_learner():
    assert isinstance(make_learner("adanormalhedge", 3), AdaNormalHedge)
    assert make_learner("mw", 4, horizon=400).eta == mw_learning_rate(4, 400)
    assert isinstance(make_learner("intersection_mw", 3), IntersectionEnsemble)
    with pytest.raises(ValueError):
        make_learner("exp3", 2)


grid = st.floats(-20, 20, allow_nan=False)


@settings(max_examples=300, deadline=None)
@given(R=grid, C=st.floats(0, 40), dR=st.floats(0, 5))
def test_weight_properties(R, C, dR):
    w = anh_weight(R, C)
    assert w >= 0
    assert (w == 0) == (R <= -1)
    assert anh_weight(R + dR, C) >= w


@st.composite
def sleeping_runs(draw):
    n = draw(st.integers(1, 5))
    T = draw(st.integers(1, 30))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    awake = rng.random((T, n)) < 0.7
    awake[np.arange(T), rng.integers(0, n, T)] = True
    return awake, rng.random((T, n))


@settings(max_examples=200, deadline=None)
@given(sleeping_runs())
def test_anh_invariants(run):
    awake, losses = run
    learner = AdaNormalHedge(awake.shape[1])
    for aw, loss in zip(awake, losses):
        p = learner.predict(0, 0, aw)
        assert abs(p.sum() - 1) <= 1e-9
        assert np.all(p[~aw] == 0) and np.all(p >= 0)
        learner.update(0, 0, aw, p, loss)
        assert np.all(learner.C >= np.abs(learner.R) - 1e-12)


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(1, 6),
    T=st.integers(1, 64),
    eta=st.floats(0.01, 0.5),
    seed=st.integers(0, 2**32 - 1),
)
def test_mw_segment_near_equality(n, T, eta, seed):
    # 0 <= L_MW - L* <= eta L* + ln N / eta for (1 - eta)^loss updates
    losses = np.random.default_rng(seed).random((T, n))
    mw = MultiplicativeWeights(n, eta)
    total = sum(float(mw.step(row) @ row) for row in losses)
    best = losses.sum(axis=0).min()
    assert total - best >= -1e-9
    assert total - best <= eta * best + math.log(n) / eta + 1e-9


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_ensemble_distribution_normalized(n, seed):
    rng = np.random.default_rng(seed)
    ens = IntersectionEnsemble(n)
    for t in range(1, 40):
        awake = rng.random(n) < 0.7
        awake[rng.integers(n)] = True
        probs, _ = ensemble_step(ens, t, int(rng.integers(0, 4)), awake, rng.random(n))
        assert abs(probs.sum() - 1) <= 1e-9 and np.all(probs[~awake] == 0)
