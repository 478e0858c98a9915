"""Exploration reductions for one-sided feedback.

In the pay-for-feedback model the learner may ask for a round's losses at
a cost of 1 instead of that round's loss.  The three reductions here turn
a full-feedback learner into one that only sees the rounds it paid for:

1. ``run_reduction1``: an independent classical learner per exact group
   profile, with ``ceil(T(I)^(2/3))`` equal phases per profile.
2. ``run_reduction2``: one sleeping learner, ``ceil(T^(2/3))`` equal phases
   over the whole stream.
3. ``run_reduction3``: one sleeping learner, phases that end as soon as any
   group has sent ``ceil(T(g)^(1/4))`` examples.

In every phase the learner's state is frozen, one uniformly drawn round
per phase (per group, for reduction 3) is explored, and the learner is
updated at the phase end from the explored rounds only.
"""

from __future__ import annotations

from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .algorithms import AdaNormalHedge, Learner, MultiplicativeWeights, anh_probs
from .core import History, MalformedRoundError, Stream, check_losses, in_group
from .experts import ExpertPool


def ceil_root(n: int, num: int, den: int) -> int:
    """Smallest integer m >= 0 with m**den >= n**num, i.e. ceil(n^(num/den)) exactly."""
    if n < 0:
        raise ValueError("n must be non-negative")
    target = n**num
    m = int(round(n ** (num / den)))
    while m > 0 and (m - 1) ** den >= target:
        m -= 1
    while m**den < target:
        m += 1
    return m


def equal_phases(length: int, n_phases: int) -> np.ndarray:
    """Boundaries splitting ``length`` items into ``n_phases`` runs differing by at most one."""
    if n_phases <= 0:
        return np.zeros(1, dtype=int)
    base, extra = divmod(length, n_phases)
    sizes = np.full(n_phases, base)
    sizes[:extra] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


@dataclass
class ExplorationLog:
    explored: list[int] = field(default_factory=list)  # 1-based timesteps

    @property
    def cost(self) -> int:
        return len(self.explored)


@dataclass
class Phase:
    start: int  # 1-based, inclusive
    end: int  # 1-based, inclusive
    explored: list[int]
    draws: dict = field(default_factory=dict)  # group -> X(g, r) (reduction 3)
    estimates: dict = field(default_factory=dict)  # group -> timestep, or None for a zero estimate


@dataclass
class ReductionRun:
    history: History
    log: ExplorationLog
    phases: list[Phase]


def phase_estimate(probs: np.ndarray, losses: np.ndarray, awake: np.ndarray, position: int) -> tuple[float, np.ndarray]:
    """What the learner learns when ``position`` is the explored round of a phase.

    Returns the learner's expected loss there and the experts' losses
    (zero for sleeping experts).
    """
    row = np.where(awake[position], losses[position], 0.0)
    return float(probs[position] @ row), row


def _frozen_probs(learner: Learner, t: np.ndarray, groups: np.ndarray, awake: np.ndarray) -> np.ndarray:
    if isinstance(learner, AdaNormalHedge):
        return anh_probs(learner.R, learner.C, awake, learner.prior)
    if isinstance(learner, MultiplicativeWeights):
        logits = np.where(awake, learner.log_w, -np.inf)
        w = np.exp(logits - logits.max(axis=1, keepdims=True))
        return w / w.sum(axis=1, keepdims=True)
    return np.stack([learner.predict(int(a), int(b), c) for a, b, c in zip(t, groups, awake)])


@dataclass
class _Prepared:
    history: History
    awake: np.ndarray
    losses: np.ndarray


def _prepare(stream: Stream, pool: ExpertPool) -> _Prepared:
    t = np.arange(1, stream.T + 1)
    awake = pool.awake_matrix(t, stream.groups)
    losses = pool.loss_matrix(stream, awake)
    check_losses(losses, awake)
    if stream.T and not awake.any(axis=1).all():
        bad = int(np.flatnonzero(~awake.any(axis=1))[0]) + 1
        raise MalformedRoundError("no expert is awake", bad)
    history = History.empty(stream.T, pool.N)
    history.groups = stream.groups.copy()
    history.losses = losses
    history.awake = awake
    return _Prepared(history, awake, losses)


def _finish(prep: _Prepared) -> History:
    h = prep.history
    h.__dict__.pop("expected_losses", None)
    h.charged = h.expected_losses.copy()
    return h


def _run_phases(
    prep: _Prepared,
    learner: Learner,
    rows: np.ndarray,
    bounds: np.ndarray,
    rng: np.random.Generator,
    log: ExplorationLog,
    phases: list[Phase],
) -> None:
    """Frozen play plus one uniform exploration per phase over ``rows``.

    ``bounds`` index into ``rows`` and may plan past its end (unknown
    horizon); a draw landing past the end is never reached.
    """
    h = prep.history
    for a, b in zip(bounds[:-1], bounds[1:]):
        if a >= len(rows):
            break
        pick = int(rng.integers(a, b))
        seg = rows[a : min(b, len(rows))]
        probs = _frozen_probs(learner, h.t[seg], h.groups[seg], prep.awake[seg])
        h.probs[seg] = probs
        explored = []
        if pick < len(rows):
            i = rows[pick]
            h.explored[i] = True
            log.explored.append(int(h.t[i]))
            explored.append(int(h.t[i]))
            learner.update(int(h.t[i]), int(h.groups[i]), prep.awake[i], h.probs[i], np.nan_to_num(prep.losses[i]))
        phases.append(Phase(int(h.t[seg[0]]), int(h.t[seg[-1]]), explored))


def _doubling_bounds(n_rows: int, first_exponent: int = 2) -> list[tuple[int, int]]:
    """(offset, planned length) of epochs 2^k, 2^(k+1), ... covering n_rows."""
    out, offset, k = [], 0, first_exponent
    while offset < n_rows:
        out.append((offset, 2**k))
        offset += 2**k
        k += 1
    return out


def run_reduction1(
    stream: Stream,
    pool: ExpertPool,
    make_base: Callable[[int, int, int], Learner],
    rng: np.random.Generator,
    sizes: Optional[Mapping[int, int]] = None,
    doubling: bool = False,
) -> ReductionRun:
    """Independent classical learners, one per exact group profile.

    ``make_base(n_experts, roster_size, n_updates)`` builds a fresh learner
    over the pool whose ``roster_size`` awake experts will be updated on
    ``n_updates`` exploration rounds.  ``sizes`` declares T(I) per profile
    (bitmask); by default the realized counts are used.
    """
    prep = _prepare(stream, pool)
    groups = stream.groups
    realized = stream.meta().intersection_sizes
    if sizes is None:
        sizes = realized
    for profile, count in ([] if doubling else realized.items()):
        if profile not in sizes:
            raise MalformedRoundError(f"profile {hex(profile)} was not declared")
        if count > sizes[profile]:
            raise MalformedRoundError(f"profile {hex(profile)} has {count} rounds, declared {sizes[profile]}")
    log, phases = ExplorationLog(), []
    for profile in sorted(realized):
        rows = np.flatnonzero(groups == np.uint64(profile))
        if doubling:
            epochs = _doubling_bounds(len(rows))
        else:
            epochs = [(0, int(sizes[profile]))]
        for offset, length in epochs:
            n_phases = ceil_root(length, 2, 3)
            learner = make_base(pool.N, int(prep.awake[rows[0]].sum()), n_phases)
            _run_phases(prep, learner, rows[offset:], equal_phases(length, n_phases), rng, log, phases)
    log.explored.sort()
    phases.sort(key=lambda p: p.start)
    return ReductionRun(_finish(prep), log, phases)


def run_reduction2(
    stream: Stream,
    pool: ExpertPool,
    learner: Learner,
    rng: np.random.Generator,
    horizon: Optional[int] = None,
    doubling: bool = False,
) -> ReductionRun:
    """One sleeping learner with ``ceil(T^(2/3))`` equal global phases."""
    prep = _prepare(stream, pool)
    rows = np.arange(stream.T)
    horizon = stream.T if horizon is None else horizon
    if not doubling and horizon < stream.T:
        raise MalformedRoundError(f"stream has {stream.T} rounds, declared {horizon}")
    log, phases = ExplorationLog(), []
    epochs = _doubling_bounds(stream.T) if doubling else [(0, horizon)]
    for offset, length in epochs:
        _run_phases(prep, learner, rows[offset:], equal_phases(length, ceil_root(length, 2, 3)), rng, log, phases)
    return ReductionRun(_finish(prep), log, phases)


def run_reduction3(
    stream: Stream,
    pool: ExpertPool,
    learner: Learner,
    rng: np.random.Generator,
    group_sizes: Optional[Mapping[int, int]] = None,
    draw_range: str = "cap",
    doubling: bool = False,
) -> ReductionRun:
    """One sleeping learner with adaptive phases driven by per-group caps.

    Each phase ends on the round at which some group's in-phase count
    reaches its cap ``ceil(T(g)^(1/4))``.  At the phase start every group
    draws X(g) and the X(g)-th example of g in the phase is explored; with
    ``draw_range="cap"`` X(g) is uniform on 1..cap(g), with
    ``"group-size"`` on 1..T(g).  Groups whose draw is not reached
    contribute a zero estimate.  Each distinct explored round is fed to the
    learner once at the phase end.
    """
    if draw_range not in ("cap", "group-size"):
        raise ValueError(f"unknown draw range {draw_range!r}")
    prep = _prepare(stream, pool)
    h = prep.history
    n_groups = len(stream.group_names)
    member = np.stack([in_group(stream.groups, g) for g in range(n_groups)], axis=1) if n_groups else np.zeros((stream.T, 0), bool)
    realized = stream.meta().group_sizes
    if doubling:
        guesses = np.full(n_groups, 4, dtype=np.int64)
    else:
        sizes = realized if group_sizes is None else group_sizes
        guesses = np.array([int(sizes.get(g, 0)) for g in range(n_groups)], dtype=np.int64)
        for g in range(n_groups):
            if realized[g] > guesses[g]:
                raise MalformedRoundError(f"group {g} has {realized[g]} rounds, declared {guesses[g]}")
    seen = np.zeros(n_groups, dtype=np.int64)
    log, phases = ExplorationLog(), []
    s = 0
    while s < stream.T:
        if doubling:
            while np.any(seen >= guesses):
                guesses = np.where(seen >= guesses, guesses * 2, guesses)
        caps = np.array([max(1, ceil_root(int(n), 1, 4)) for n in guesses], dtype=np.int64)
        upper = caps if draw_range == "cap" else np.maximum(guesses, 1)
        draws = rng.integers(1, upper + 1) if n_groups else np.zeros(0, dtype=np.int64)
        # locate the phase end: first round where some group count hits its cap
        window = max(16, int(caps.sum()) * 2)
        while True:
            e = min(stream.T, s + window)
            counts = np.cumsum(member[s:e], axis=0)
            hit = np.flatnonzero((counts >= caps).any(axis=1)) if n_groups else np.zeros(0, int)
            if hit.size or e == stream.T:
                break
            window *= 4
        end = s + int(hit[0]) if hit.size else stream.T - 1
        counts = counts[: end - s + 1]
        seg = np.arange(s, end + 1)
        h.probs[seg] = _frozen_probs(learner, h.t[seg], h.groups[seg], prep.awake[seg])
        estimates, picked = {}, set()
        for g in range(n_groups):
            reached = np.flatnonzero(member[seg, g] & (counts[:, g] == draws[g]))
            if reached.size:
                i = s + int(reached[0])
                estimates[g] = int(h.t[i])
                picked.add(i)
            else:
                estimates[g] = None
        for i in sorted(picked):
            h.explored[i] = True
            log.explored.append(int(h.t[i]))
            learner.update(int(h.t[i]), int(h.groups[i]), prep.awake[i], h.probs[i], np.nan_to_num(prep.losses[i]))
        seen += counts[-1] if n_groups else 0
        phases.append(
            Phase(
                int(h.t[s]),
                int(h.t[end]),
                sorted(int(h.t[i]) for i in picked),
                draws={g: int(draws[g]) for g in range(n_groups)},
                estimates=estimates,
            )
        )
        s = end + 1
    return ReductionRun(_finish(prep), log, phases)


# -- charging and apple tasting ----------------------------------------------


def pay_for_feedback_charges(history: History) -> np.ndarray:
    """Expected loss on ordinary rounds, cost 1 on every explored round."""
    return np.where(history.explored, 1.0, history.expected_losses)


@dataclass
class AppleTastingRun:
    """A run re-expressed in the apple-tasting model.

    ``actions`` is +1 where the positive action was forced (explored
    rounds) and 0 where the policy's own action was played.  ``observed``
    maps explored timesteps to the losses revealed there; nothing else is
    revealed.
    """

    actions: np.ndarray
    charged: np.ndarray
    observed: dict[int, np.ndarray]


def to_apple_tasting(history: History, labels: Optional[np.ndarray] = None) -> AppleTastingRun:
    """Play positive on the explored rounds and pass the policy through elsewhere.

    On explored rounds the charge is the loss of predicting positive
    (0 for a positive label, 1 for a negative one, and the pay-for-feedback
    cost 1 when the label is unknown).
    """
    explored = history.explored
    if labels is None:
        positive_loss = np.ones(len(history))
    else:
        labels = np.asarray(labels)
        positive_loss = np.where(labels > 0, 0.0, 1.0)
    charged = np.where(explored, positive_loss, history.expected_losses)
    actions = np.where(explored, 1, 0).astype(np.int8)
    observed = {int(history.t[i]): np.where(history.awake[i], history.losses[i], np.nan) for i in np.flatnonzero(explored)}
    return AppleTastingRun(actions, charged, observed)
