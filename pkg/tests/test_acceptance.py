"""Every acceptance criterion at its stated tolerance, one line per criterion."""

import pytest

from sleepfair import verify

CRITERIA = {
    1: ("sleeping-regret bound, full feedback", verify.check_regret_bounds),
    2: ("IC counterexample under AdaNormalHedge", verify.check_ic_counterexample),
    3: ("per-intersection MW is asymptotically IC", verify.check_mw_ic),
    4: ("overlapping-groups impossibility", verify.check_impossibility),
    5: ("phase-estimator unbiasedness", verify.check_unbiased_estimates),
    6: ("exploration-cost accounting", verify.check_exploration_counts),
    7: ("reduction 2/3 regret scaling", verify.check_reduction_scaling),
    8: ("step functions vs straight-line oracles", verify.check_oracle_equivalence),
}


@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, capsys):
    title, run = CRITERIA[number]
    checks = run()
    passed = all(c.passed for c in checks)
    with capsys.disabled():
        print(f"\ncriterion {number} ({title}): {'PASS' if passed else 'FAIL'}")
        for c in checks:
            print(f"    {c.line()}")
    assert passed, "; ".join(c.line() for c in checks if not c.passed)
