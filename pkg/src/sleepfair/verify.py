"""Executable acceptance suites.  Each check reports a measured value, its
threshold and whether it passed."""

from __future__ import annotations

import itertools
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .algorithms import AdaNormalHedge, MultiplicativeWeights, mw_learning_rate
from .audit import fpr_fnr, ic_gain, impossibility_scan
from .config import parse_config
from .core import in_group, sleeping_regret, subgroup_regret
from .environments import gen_overlap_instance
from .experiment import default_checkpoints, regret_curves, run_sweep
from .feedback import ceil_root, phase_estimate
from .runner import make_instance, simulate


@dataclass(frozen=True)
class Check:
    name: str
    measured: float
    threshold: float
    relation: str  # "<=", ">=" or "within"
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: measured {self.measured:.6g} {self.relation} {self.threshold:.6g}"


def _le(name: str, measured: float, threshold: float) -> Check:
    return Check(name, float(measured), float(threshold), "<=", bool(measured <= threshold))


def _ge(name: str, measured: float, threshold: float) -> Check:
    return Check(name, float(measured), float(threshold), ">=", bool(measured >= threshold))


# -- 1: sleeping-regret bound under full feedback ---------------------------

REGRET_BOUNDS_CONFIG = {
    "instance": {
        "generator": "random",
        "T": 50_000,
        "groups": ["g0", "g1", "g2"],
        "membership": [0.5, 0.4, 0.3],
        "n_global": 4,
        "n_per_group": 4,
        # fixed per-profile losses: with Bernoulli noise the signed average
        # regret wanders by O(1/sqrt(T(g))) and is never strictly monotone
        "loss": {"kind": "fixed", "low": 0.1, "high": 0.9, "planted_best": True},
    },
    "learner": {"algorithm": "adanormalhedge"},
}


def check_regret_bounds(seeds=range(10), T: int = 50_000) -> list[Check]:
    cfg = parse_config({**REGRET_BOUNDS_CONFIG, "instance": {**REGRET_BOUNDS_CONFIG["instance"], "T": T}})
    slack, avg_worst, rise_worst = -math.inf, -math.inf, -math.inf
    for seed in seeds:
        sim = simulate(cfg, seed)
        h = sim.history
        log_n = math.log(h.n_experts)
        for i in range(h.n_experts):
            t_h = int(h.awake[:, i].sum())
            slack = max(slack, sleeping_regret(h, i) - (4 * math.sqrt(t_h * log_n) + 10))
        _, curves = regret_curves(sim)
        points = [t for t in default_checkpoints(T) if t >= 2**10]
        for g, curve in curves.items():
            rows = in_group(h.groups, g)
            avg_worst = max(avg_worst, subgroup_regret(h, g, sim.pool.group_ids(g)) / rows.sum())
            sizes = np.cumsum(rows)
            avg = [curve[t - 1] / sizes[t - 1] for t in points]
            rise_worst = max(rise_worst, max(b - a for a, b in zip(avg, avg[1:])))
    return [
        _le("sleeping regret minus 4*sqrt(T(h) ln N)+10, worst expert", slack, 0.0),
        _le("subgroup regret / T(g), worst group", avg_worst, 0.05),
        _le("largest rise of average subgroup regret between checkpoints >= 2^10", rise_worst, 0.0),
    ]


# -- 2: the incentive-compatibility counterexample --------------------------


def check_ic_counterexample(seeds=range(10), T: int = 20_000, burn_in: int = 1000) -> list[Check]:
    cfg = parse_config({"instance": {"generator": "ic", "T": T}, "learner": {"algorithm": "adanormalhedge"}})
    gains, shares = [], []
    for seed in seeds:
        gains.append(ic_gain(cfg, 0, ["f(B)"], seed).gain / T)
        h = simulate(cfg, seed).history
        f = 0  # the global rule comes first in the pool
        even = (h.t % 2 == 0) & (h.t > burn_in)
        shares.append(float(np.mean(h.probs[even, f] <= 0.5)))
    return [
        _ge("mean ic_gain(B, {f(B)}) / T", float(np.mean(gains)), 0.03),
        _ge("share of even rounds after burn-in with P(f) <= 1/2, worst seed", min(shares), 0.9),
    ]


# -- 3: per-intersection MW is asymptotically IC ----------------------------

MW_IC_RANDOM = {
    "instance": {
        "generator": "random",
        "T": 10_000,
        "groups": ["a", "b"],
        "membership": [0.5, 0.4],
        "n_global": 2,
        "n_per_group": 2,
        "loss": {"kind": "bernoulli", "low": 0.1, "high": 0.9, "specialist_advantage": 0.1},
    },
    "learner": {"algorithm": "intersection_mw"},
}


def check_mw_ic(T: int = 10_000, random_seeds=range(5)) -> list[Check]:
    cases = [(parse_config({"instance": {"generator": "ic", "T": T}, "learner": {"algorithm": "intersection_mw"}}), 0)]
    rnd = parse_config({**MW_IC_RANDOM, "instance": {**MW_IC_RANDOM["instance"], "T": T}})
    cases += [(rnd, s) for s in random_seeds]
    worst = -math.inf
    for cfg, seed in cases:
        stream, spec = make_instance(cfg, seed)
        log_n = math.log(spec.N)
        for g, rules in spec.per_group.items():
            for rule in rules:
                rep = ic_gain(cfg, g, [rule], seed)
                bound = 8 * math.sqrt(rep.T_g * log_n) * math.log2(T)
                worst = max(worst, abs(rep.gain) / bound)
    return [_le("|ic_gain(g, H)| / (8*sqrt(T(g) ln N)*log2 T), worst singleton H", worst, 1.0)]


# -- 4: overlapping-groups impossibility ------------------------------------


def check_impossibility(n: int = 100, resolution: int = 10_001) -> list[Check]:
    inst = gen_overlap_instance(n, exact=True)
    scan = impossibility_scan(inst, resolution)
    err = abs(scan.min_max - 5 / 18)
    own = [fpr_fnr(inst.predictions[f"f_{g}"], inst.labels, inst.group(g)).unweighted_avg for g in "AB"]
    return [
        Check("scan min-max vs 5/18", err, 1e-9, "within", err <= 1e-9),
        _ge("scan min-max", scan.min_max, 0.25),
        Check("f_g average on its own group vs 1/18", max(abs(x - 1 / 18) for x in own), 1e-12, "within", max(abs(x - 1 / 18) for x in own) <= 1e-12),
    ]


# -- 5, 6: estimators and exploration accounting ----------------------------


def check_unbiased_estimates(length: int = 10, n_experts: int = 4, trials: int = 20, seed: int = 0) -> list[Check]:
    """Averaging the one-round estimate over every explored position
    recovers the phase averages."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        awake = rng.random((length, n_experts)) < 0.7
        awake[np.arange(length), rng.integers(0, n_experts, length)] = True
        losses = np.where(awake, rng.random((length, n_experts)), np.nan)
        w = np.where(awake, rng.random((length, n_experts)), 0.0)
        probs = w / w.sum(axis=1, keepdims=True)
        est = [phase_estimate(probs, losses, awake, k) for k in range(length)]
        filled = np.where(awake, losses, 0.0)
        worst = max(
            worst,
            abs(np.mean([e[0] for e in est]) - np.mean((probs * filled).sum(axis=1))),
            float(np.max(np.abs(np.mean([e[1] for e in est], axis=0) - filled.mean(axis=0)))),
        )
    return [Check("phase estimate mean vs phase average", worst, 1e-12, "within", worst <= 1e-12)]


EXPLORATION_CONFIG = {
    "instance": {"generator": "random", "T": 5000, "groups": ["a", "b"], "membership": [0.5, 0.4], "n_global": 2, "n_per_group": 1},
}


def check_exploration_counts(seed: int = 0) -> list[Check]:
    base = parse_config(EXPLORATION_CONFIG)
    stream, _ = make_instance(base, seed)
    profiles, counts = np.unique(stream.groups, return_counts=True)
    sizes = {hex(int(p)): int(c) for p, c in zip(profiles, counts)}
    r1 = parse_config({**EXPLORATION_CONFIG, "learner": {"algorithm": "mw"}, "feedback": {"reduction": 1, "intersection_sizes": sizes}})
    got1 = len(simulate(r1, seed).log.explored)
    want1 = sum(ceil_root(c, 2, 3) for c in sizes.values())
    r2 = parse_config({**EXPLORATION_CONFIG, "feedback": {"reduction": 2}})
    got2 = len(simulate(r2, seed).log.explored)
    want2 = ceil_root(stream.T, 2, 3)
    return [
        Check("reduction 1 |E| vs sum ceil(T(I)^(2/3))", abs(got1 - want1), 0, "within", got1 == want1),
        Check("reduction 2 |E| vs ceil(T^(2/3))", abs(got2 - want2), 0, "within", got2 == want2),
    ]


# -- 7: regret scaling of reductions 2 and 3 --------------------------------

SCALING_CONFIG = {
    "instance": {
        "generator": "random",
        "T": 4096,
        "groups": ["a", "b"],
        "membership": [0.6, 0.5],
        "n_global": 2,
        "n_per_group": 2,
        "loss": {"kind": "bernoulli", "low": 0.2, "high": 0.8, "planted_best": True},
    },
}


def check_reduction_scaling(exponents=range(12, 18), n_seeds: int = 20, workers=None) -> list[Check]:
    axis = "instance.T=" + ",".join(str(2**k) for k in exponents)
    checks = []
    for reduction, limit in ((2, 0.85), (3, 0.90)):
        cfg = parse_config({**SCALING_CONFIG, "feedback": {"reduction": reduction}})
        slopes = run_sweep(cfg, axis, n_seeds, workers=workers)["slopes"]
        for g, fit in slopes.items():
            slope = math.inf if fit is None else fit["slope"]
            checks.append(_le(f"reduction {reduction} log-log slope of subgroup regret vs T(g), group {g}", slope, limit))
    return checks


# -- 8: step functions against straight-line oracles ------------------------

_ALPHABET = (0.0, 0.5, 1.0)
_CHUNK_ROWS = 500_000


class _AnhImpl:
    def __init__(self, learner: AdaNormalHedge):
        self.learner = learner
        self.awake = np.ones(learner.R.shape, dtype=bool)

    def probs(self):
        return self.learner.predict(0, 0, self.awake)

    def state(self):
        return np.concatenate([self.learner.R, self.learner.C], axis=-1)

    def advance(self, choices):
        k = len(choices)
        nxt = AdaNormalHedge(self.learner.R.shape[-1])
        nxt.R = np.repeat(self.learner.R, k, axis=0)
        nxt.C = np.repeat(self.learner.C, k, axis=0)
        out = _AnhImpl(nxt)
        out.learner.update(0, 0, out.awake, np.repeat(self.probs(), k, axis=0), np.tile(choices, (len(self.awake), 1)))
        return out

    def part(self, sl):
        nxt = AdaNormalHedge(self.learner.R.shape[-1])
        nxt.R, nxt.C = self.learner.R[sl], self.learner.C[sl]
        return _AnhImpl(nxt)


class _AnhOracle:
    """w_i = (exp([R_i+1]_+^2 / 3(C_i+1)) - exp([R_i-1]_+^2 / 3(C_i+1))) / 2."""

    def __init__(self, R, C):
        self.R, self.C = R, C

    def probs(self):
        n = self.R.shape[1]
        w = 0.5 * (np.exp(np.maximum(self.R + 1, 0) ** 2 / (3 * (self.C + 1))) - np.exp(np.maximum(self.R - 1, 0) ** 2 / (3 * (self.C + 1))))
        s = w.sum(axis=1, keepdims=True)
        return np.where(s > 0, w / np.where(s > 0, s, 1), 1.0 / n)

    def state(self):
        return np.concatenate([self.R, self.C], axis=1)

    def advance(self, choices):
        k = len(choices)
        p = np.repeat(self.probs(), k, axis=0)
        loss = np.tile(choices, (len(self.R), 1))
        ell = (p * loss).sum(axis=1, keepdims=True)
        r = ell - loss
        return _AnhOracle(np.repeat(self.R, k, axis=0) + r, np.repeat(self.C, k, axis=0) + np.abs(r))

    def part(self, sl):
        return _AnhOracle(self.R[sl], self.C[sl])


class _MwImpl:
    def __init__(self, learner: MultiplicativeWeights):
        self.learner = learner

    def probs(self):
        return self.learner.distribution()

    def state(self):
        return self.probs()

    def advance(self, choices):
        nxt = MultiplicativeWeights(self.learner.log_w.shape[-1], self.learner.eta)
        nxt.log_w = np.repeat(self.learner.log_w, len(choices), axis=0)
        nxt.step(np.tile(choices, (len(self.learner.log_w), 1)))
        return _MwImpl(nxt)

    def part(self, sl):
        nxt = MultiplicativeWeights(self.learner.log_w.shape[-1], self.learner.eta)
        nxt.log_w = self.learner.log_w[sl]
        return _MwImpl(nxt)


class _MwOracle:
    """w_i = (1 - eta)^(cumulative loss of i), normalized."""

    def __init__(self, cum, eta):
        self.cum, self.eta = cum, eta

    def probs(self):
        w = (1 - self.eta) ** self.cum
        return w / w.sum(axis=1, keepdims=True)

    def state(self):
        return self.probs()

    def advance(self, choices):
        k = len(choices)
        return _MwOracle(np.repeat(self.cum, k, axis=0) + np.tile(choices, (len(self.cum), 1)), self.eta)

    def part(self, sl):
        return _MwOracle(self.cum[sl], self.eta)


def _walk(impl, oracle, rounds_left: int, choices: np.ndarray) -> float:
    """Largest disagreement over every continuation of the given states.

    Compares the played distributions for ``rounds_left`` more rounds and the
    internal state after each observed loss vector.
    """
    worst = float(np.max(np.abs(impl.probs() - oracle.probs())))
    worst = max(worst, float(np.max(np.abs(impl.state() - oracle.state()))))
    if rounds_left <= 1:
        return worst
    rows = len(impl.probs())
    if rows * len(choices) > _CHUNK_ROWS and rows > 1:
        step = max(1, _CHUNK_ROWS // len(choices))
        for lo in range(0, rows, step):
            sl = slice(lo, lo + step)
            worst = max(worst, _walk(impl.part(sl), oracle.part(sl), rounds_left, choices))
        return worst
    return max(worst, _walk(impl.advance(choices), oracle.advance(choices), rounds_left - 1, choices))


def oracle_disagreement(algorithm: str, n_experts: int, rounds: int) -> float:
    """Exhaustive over loss sequences in {0, 1/2, 1}^(rounds x n_experts)."""
    choices = np.array(list(itertools.product(_ALPHABET, repeat=n_experts)))
    if algorithm == "adanormalhedge":
        impl = _AnhImpl(AdaNormalHedge(n_experts))
        impl.learner.R, impl.learner.C = np.zeros((1, n_experts)), np.zeros((1, n_experts))
        impl.awake = np.ones((1, n_experts), dtype=bool)
        oracle = _AnhOracle(np.zeros((1, n_experts)), np.zeros((1, n_experts)))
    else:
        eta = mw_learning_rate(n_experts, rounds)
        impl = _MwImpl(MultiplicativeWeights(n_experts, eta))
        impl.learner.log_w = np.zeros((1, n_experts))
        oracle = _MwOracle(np.zeros((1, n_experts)), eta)
    return _walk(impl, oracle, rounds, choices)


def check_oracle_equivalence(max_experts: int = 3, rounds: int = 6) -> list[Check]:
    checks = []
    for algorithm in ("adanormalhedge", "mw"):
        worst = max(oracle_disagreement(algorithm, n, rounds) for n in range(1, max_experts + 1))
        checks.append(Check(f"{algorithm} vs oracle, all sequences T<={rounds}, N<={max_experts}", worst, 1e-12, "within", worst <= 1e-12))
    return checks


def _estimators() -> list[Check]:
    return check_unbiased_estimates() + check_exploration_counts()


def _regret_bounds() -> list[Check]:
    return check_regret_bounds() + check_reduction_scaling() + check_oracle_equivalence()


SUITES: dict[str, Callable[[], list[Check]]] = {
    "regret-bounds": _regret_bounds,
    "ic-counterexample": check_ic_counterexample,
    "mw-ic": check_mw_ic,
    "impossibility": check_impossibility,
    "estimators": _estimators,
}


def run_suite(name: str) -> list[Check]:
    if name == "all":
        return [c for suite in SUITES.values() for c in suite()]
    if name not in SUITES:
        raise KeyError(f"unknown suite {name!r}; valid suites: {', '.join([*SUITES, 'all'])}")
    return SUITES[name]()
