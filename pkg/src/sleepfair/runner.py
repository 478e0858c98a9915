"""Turns a validated config and a seed into a finished run."""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import environments as envs
from .algorithms import Learner, MultiplicativeWeights, make_learner, mw_learning_rate
from .config import ExperimentConfig
from .core import ConfigError, History, MalformedRoundError, Stream, check_losses, read_stream
from .experts import Always, ExpertPool, InGroup, PoolSpec, add_expert
from .feedback import (
    ExplorationLog,
    Phase,
    pay_for_feedback_charges,
    run_reduction1,
    run_reduction2,
    run_reduction3,
    to_apple_tasting,
)


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named consumer of randomness.

    Streams are keyed by (root seed, name), so adding a consumer never
    shifts the draws of another.
    """
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(name.encode())]))


@dataclass
class Simulation:
    stream: Stream
    pool: ExpertPool
    pool_spec: PoolSpec
    history: History
    log: ExplorationLog
    phases: list[Phase] = field(default_factory=list)
    sampled: Optional[np.ndarray] = None


def make_instance(cfg: ExperimentConfig, seed: int) -> tuple[Stream, PoolSpec]:
    inst = cfg.instance
    if inst.generator == "ic":
        return envs.gen_ic_instance(inst.T, inst.swap_parity)
    if inst.generator == "overlap":
        batch = envs.gen_overlap_instance(inst.n, exact=inst.exact, rng=substream(seed, "stream-gen"))
        return batch.to_stream(), PoolSpec([], {0: ["f_A"], 1: ["f_B"]})
    if inst.generator == "file":
        stream = read_stream(inst.path)
        return stream, PoolSpec(list(stream.rule_names), {})
    spec = envs.InstanceSpec(
        generator="random",
        T=inst.T,
        groups=list(inst.groups),
        membership=list(inst.membership),
        n_global=inst.n_global,
        n_per_group=inst.n_per_group,
        loss=envs.LossModel(**inst.loss.model_dump()),
        seed=seed,
    )
    return envs.gen_random_adversary(spec, substream(seed, "stream-gen")), envs.random_pool_spec(spec)


def resolve_pool_spec(cfg: ExperimentConfig, stream: Stream, default: PoolSpec) -> PoolSpec:
    pc = cfg.pool
    spec = PoolSpec(list(default.global_rules), {g: list(v) for g, v in default.per_group.items()})
    if pc.global_rules is not None:
        spec.global_rules = list(pc.global_rules)
    if pc.groups is not None:
        spec.per_group = {_group_id(stream, name): list(rules) for name, rules in pc.groups.items()}
    for rule in spec.global_rules + [r for v in spec.per_group.values() for r in v]:
        if rule not in stream.rule_names:
            raise ConfigError(f"pool names unknown rule {rule!r}")
    return spec


def _group_id(stream: Stream, name: str) -> int:
    try:
        return stream.group_names.index(name)
    except ValueError:
        raise ConfigError(f"unknown group {name!r}; declared groups: {list(stream.group_names)}") from None


def run_full_feedback(
    stream: Stream,
    pool: ExpertPool,
    learner: Learner,
    additions: list[tuple[int, str, Optional[int]]] = (),
) -> History:
    """Predict, reveal every awake expert's loss, update; one round at a time.

    ``additions`` are (t, rule, group or None) experts that join at round t.
    """
    T = stream.T
    n0 = pool.N
    schedule = sorted(additions, key=lambda a: a[0])
    for t_add, rule, g in schedule:
        add_expert(pool, rule, Always() if g is None else InGroup(g), t_add)
    ts = np.arange(1, T + 1)
    awake = pool.awake_matrix(ts, stream.groups)
    losses = pool.loss_matrix(stream, awake)
    check_losses(losses, awake)
    probs = np.zeros((T, pool.N))
    filled = np.nan_to_num(losses)
    n = n0
    pending = [a[0] for a in schedule]
    groups = stream.groups
    for i in range(T):
        t = i + 1
        while pending and pending[0] <= t:
            pending.pop(0)
            learner.add_expert()
            n += 1
        aw = awake[i, :n]
        if not aw.any():
            raise MalformedRoundError("no expert is awake", t)
        p = learner.predict(t, int(groups[i]), aw)
        learner.update(t, int(groups[i]), aw, p, filled[i, :n])
        probs[i, :n] = p
    return History(
        t=ts,
        groups=stream.groups.copy(),
        probs=probs,
        losses=losses,
        awake=awake,
        explored=np.zeros(T, dtype=bool),
        born_at=np.array([e.born_at for e in pool], dtype=int),
    )


def _declared(cfg: ExperimentConfig, stream: Stream):
    fb = cfg.feedback
    group_sizes = None
    if fb.group_sizes is not None:
        group_sizes = {_group_id(stream, k): v for k, v in fb.group_sizes.items()}
    intersections = None
    if fb.intersection_sizes is not None:
        intersections = {int(k, 16): v for k, v in fb.intersection_sizes.items()}
    return fb.horizon, group_sizes, intersections


def simulate(cfg: ExperimentConfig, seed: int, pool_spec: Optional[PoolSpec] = None) -> Simulation:
    """Generate the instance for ``seed`` and run the configured learner on it.

    ``pool_spec`` replaces the configured pool (used to hide experts).
    """
    stream, default_spec = make_instance(cfg, seed)
    spec = pool_spec if pool_spec is not None else resolve_pool_spec(cfg, stream, default_spec)
    pool = spec.build()
    if pool.N == 0:
        raise ConfigError("the expert pool is empty")
    lc, fb = cfg.learner, cfg.feedback
    prior = None if lc.prior is None else np.asarray(lc.prior, dtype=float)
    if prior is not None and len(prior) != pool.N:
        raise ConfigError(f"prior has {len(prior)} entries for {pool.N} experts")
    doubling = fb.sizes == "doubling"
    log, phases = ExplorationLog(), []
    if fb.reduction == "none":
        learner = make_learner(lc.algorithm, pool.N, lc.eta, prior, horizon=stream.T)
        additions = [(a.t, a.rule, None if a.group is None else _group_id(stream, a.group)) for a in cfg.pool.additions]
        for _, rule, _ in additions:
            if rule not in stream.rule_names:
                raise ConfigError(f"addition names unknown rule {rule!r}")
        history = run_full_feedback(stream, pool, learner, additions)
    else:
        rng = substream(seed, "exploration-draws")
        horizon, group_sizes, intersections = _declared(cfg, stream)
        if fb.reduction == 1:

            def make_base(n_experts: int, roster: int, n_updates: int) -> Learner:
                if lc.algorithm == "mw":
                    return MultiplicativeWeights(n_experts, lc.eta or mw_learning_rate(roster, n_updates))
                return make_learner(lc.algorithm, n_experts, lc.eta, prior)

            run = run_reduction1(stream, pool, make_base, rng, intersections, doubling)
        elif fb.reduction == 2:
            learner = make_learner(lc.algorithm, pool.N, lc.eta, prior)
            run = run_reduction2(stream, pool, learner, rng, horizon, doubling)
        else:
            learner = make_learner(lc.algorithm, pool.N, lc.eta, prior)
            run = run_reduction3(stream, pool, learner, rng, group_sizes, fb.draw_range, doubling)
        history, log, phases = run.history, run.log, run.phases
        history.born_at = np.ones(pool.N, dtype=int)
        if fb.mode == "pay-for-feedback":
            history.charged = pay_for_feedback_charges(history)
        else:
            history.charged = to_apple_tasting(history, stream.labels).charged
    sampled = None
    if cfg.sample_actions:
        sampled = sample_actions(history.probs, substream(seed, "sampling"))
    return Simulation(stream, pool, spec, history, log, phases, sampled)


def sample_actions(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One expert drawn per round from that round's distribution."""
    u = rng.random(len(probs))
    cdf = np.cumsum(probs, axis=1)
    idx = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)
