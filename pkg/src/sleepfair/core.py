"""Streams, rounds, histories and the three regret metrics.

Group memberships are bitmasks (bit ``g`` set iff the example belongs to
group ``g``), stored as ``uint64`` so up to 64 groups fit in one word.
Expert losses for a whole run live in dense ``(T, N)`` arrays with NaN
marking rounds where an expert is asleep.
"""

from __future__ import annotations

import json
import math
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

MAX_GROUPS = 64
PROB_TOL = 1e-9


class SleepfairError(Exception):
    """Base class for errors raised by this package."""


class MalformedRoundError(SleepfairError, ValueError):
    """A round's losses or distribution do not fit together."""

    def __init__(self, message: str, t: Optional[int] = None):
        self.t = t
        super().__init__(message if t is None else f"round {t}: {message}")


class ConfigError(SleepfairError, ValueError):
    pass


def group_mask(groups: Iterable[int]) -> int:
    mask = 0
    for g in groups:
        if not 0 <= g < MAX_GROUPS:
            raise ValueError(f"group id {g} outside [0, {MAX_GROUPS})")
        mask |= 1 << g
    return mask


def group_members(mask: int) -> tuple[int, ...]:
    mask = int(mask)
    return tuple(g for g in range(MAX_GROUPS) if mask >> g & 1)


def in_group(groups: np.ndarray, g: int) -> np.ndarray:
    """Boolean mask of rounds whose group set contains ``g``."""
    return ((groups.astype(np.uint64) >> np.uint64(g)) & np.uint64(1)).astype(bool)


@dataclass(frozen=True)
class Round:
    t: int
    groups: int
    losses: Mapping[int, float]
    label: Optional[int] = None

    def __post_init__(self):
        for key, value in self.losses.items():
            if not 0.0 <= value <= 1.0:
                raise MalformedRoundError(f"loss {value!r} of expert {key} outside [0, 1]", self.t)
        if self.label not in (None, 1, -1):
            raise MalformedRoundError(f"label must be +1, -1 or None, got {self.label!r}", self.t)


@dataclass(frozen=True)
class Distribution:
    """Probability of following each expert on one round."""

    probs: Mapping[int, float]

    def __post_init__(self):
        if any(p < 0 for p in self.probs.values()):
            raise MalformedRoundError("negative probability")
        total = math.fsum(self.probs.values())
        if abs(total - 1.0) > PROB_TOL:
            raise MalformedRoundError(f"probabilities sum to {total!r}")

    @classmethod
    def from_array(cls, probs: np.ndarray, ids: Optional[Iterable[int]] = None) -> "Distribution":
        ids = range(len(probs)) if ids is None else ids
        return cls({int(i): float(p) for i, p in zip(ids, probs) if p > 0})

    @property
    def support(self) -> frozenset[int]:
        return frozenset(i for i, p in self.probs.items() if p > 0)


def expected_loss(dist: Distribution, losses: Mapping[int, float]) -> float:
    """Loss suffered in expectation when following ``dist``."""
    missing = dist.support - set(losses)
    if missing:
        raise MalformedRoundError(f"no loss for experts {sorted(missing)} in the support")
    return math.fsum(p * losses[i] for i, p in dist.probs.items() if p > 0)


def check_losses(losses: np.ndarray, awake: Optional[np.ndarray] = None, t0: int = 1) -> None:
    """Reject losses outside [0, 1] (and undefined losses of awake experts)."""
    defined = ~np.isnan(losses)
    bad = defined & ((losses < 0.0) | (losses > 1.0))
    if awake is not None:
        bad |= awake & ~defined
    if bad.any():
        row, col = np.argwhere(bad)[0]
        value = float(losses[row, col])
        what = "undefined" if np.isnan(value) else f"{value!r} outside [0, 1]"
        raise MalformedRoundError(f"loss of column {col} is {what}", int(row) + t0)


@dataclass(frozen=True, eq=False)
class Stream:
    """A sequence of rounds over a fixed list of base rules.

    ``losses[t, k]`` is the loss of base rule ``k`` at round ``t + 1`` (NaN
    where the rule has no prediction).  ``labels`` holds +1/-1, or 0 for
    rounds without a label.
    """

    groups: np.ndarray
    losses: np.ndarray
    rule_names: tuple[str, ...]
    group_names: tuple[str, ...]
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "groups", np.asarray(self.groups, dtype=np.uint64))
        object.__setattr__(self, "losses", np.asarray(self.losses, dtype=float))
        if self.losses.ndim != 2 or self.losses.shape != (len(self.groups), len(self.rule_names)):
            raise ValueError(
                f"losses shape {self.losses.shape} does not match "
                f"{len(self.groups)} rounds x {len(self.rule_names)} rules"
            )
        if len(self.group_names) > MAX_GROUPS:
            raise ValueError(f"at most {MAX_GROUPS} groups supported")
        if len(self.group_names) < MAX_GROUPS and len(self.groups):
            if int(self.groups.max()) >> len(self.group_names):
                raise ValueError("group bitmask references an undeclared group")
        if self.labels is not None:
            labels = np.asarray(self.labels, dtype=np.int8)
            if labels.shape != self.groups.shape or not np.isin(labels, (-1, 0, 1)).all():
                raise ValueError("labels must be one of -1, 0, +1 per round")
            object.__setattr__(self, "labels", labels)
        check_losses(self.losses)

    @property
    def T(self) -> int:
        return len(self.groups)

    def round(self, t: int) -> Round:
        """The round at 1-based timestep ``t`` with losses keyed by rule index."""
        row = self.losses[t - 1]
        label = None if self.labels is None or self.labels[t - 1] == 0 else int(self.labels[t - 1])
        losses = {k: float(v) for k, v in enumerate(row) if not np.isnan(v)}
        return Round(t, int(self.groups[t - 1]), losses, label)

    def __iter__(self) -> Iterator[Round]:
        for t in range(1, self.T + 1):
            yield self.round(t)

    def rule_index(self, name: str) -> int:
        try:
            return self.rule_names.index(name)
        except ValueError:
            raise KeyError(f"unknown rule {name!r}") from None

    def meta(self) -> "StreamMeta":
        return StreamMeta.from_groups(self.groups, len(self.group_names))


@dataclass(frozen=True)
class StreamMeta:
    T: int
    group_sizes: dict[int, int]
    intersection_sizes: dict[int, int]

    @classmethod
    def from_groups(cls, groups: np.ndarray, n_groups: int) -> "StreamMeta":
        profiles, counts = np.unique(np.asarray(groups, dtype=np.uint64), return_counts=True)
        intersections = {int(p): int(c) for p, c in zip(profiles, counts)}
        sizes = {g: int(in_group(groups, g).sum()) for g in range(n_groups)}
        return cls(len(groups), sizes, intersections)


@dataclass(eq=False)
class History:
    """Everything a run showed the learner and what the learner played.

    Rows are rounds; columns are the pool's experts.  ``losses`` is NaN
    where an expert is asleep and ``probs`` is zero there.
    """

    t: np.ndarray
    groups: np.ndarray
    probs: np.ndarray
    losses: np.ndarray
    awake: np.ndarray
    explored: np.ndarray
    charged: Optional[np.ndarray] = None
    born_at: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        if len(self.t) and np.any(np.diff(self.t) <= 0):
            raise ValueError("timesteps must be strictly increasing")
        if self.charged is None:
            self.charged = self.expected_losses.copy()

    @classmethod
    def empty(cls, T: int, n_experts: int) -> "History":
        return cls(
            t=np.arange(1, T + 1),
            groups=np.zeros(T, dtype=np.uint64),
            probs=np.zeros((T, n_experts)),
            losses=np.full((T, n_experts), np.nan),
            awake=np.zeros((T, n_experts), dtype=bool),
            explored=np.zeros(T, dtype=bool),
            charged=np.zeros(T),
        )

    def __len__(self) -> int:
        return len(self.t)

    @property
    def n_experts(self) -> int:
        return self.probs.shape[1]

    @cached_property
    def expected_losses(self) -> np.ndarray:
        return np.where(self.awake, self.probs * np.nan_to_num(self.losses), 0.0).sum(axis=1)

    def entry(self, i: int) -> tuple[Round, Distribution, bool]:
        awake = np.flatnonzero(self.awake[i])
        rnd = Round(int(self.t[i]), int(self.groups[i]), {int(j): float(self.losses[i, j]) for j in awake})
        return rnd, Distribution.from_array(self.probs[i]), bool(self.explored[i])

    def __iter__(self) -> Iterator[tuple[Round, Distribution, bool]]:
        for i in range(len(self)):
            yield self.entry(i)


def running_total(x: np.ndarray) -> np.ndarray:
    """Sum over the first axis, accumulated in order.

    Matches the last entry of ``np.cumsum`` bit for bit, so final metrics
    agree exactly with the end of their trajectories.
    """
    x = np.asarray(x, dtype=float)
    return np.cumsum(x, axis=0)[-1] if len(x) else np.zeros(x.shape[1:])


def _comparator_ids(history: History, comparators: Iterable[int]) -> np.ndarray:
    ids = np.array(sorted(set(int(c) for c in comparators)), dtype=int)
    if ids.size == 0:
        raise ValueError("comparator set is empty")
    if ids.min() < 0 or ids.max() >= history.n_experts:
        raise KeyError(f"unknown expert in comparators {ids.tolist()}")
    return ids


def best_comparator(history: History, comparators: Iterable[int], rows: Optional[np.ndarray] = None) -> tuple[int, float]:
    """(expert id, cumulative loss) of the best comparator; ties go to the lowest id."""
    ids = _comparator_ids(history, comparators)
    rows = np.ones(len(history), dtype=bool) if rows is None else rows
    if not history.awake[np.ix_(rows, ids)].all():
        raise ValueError("every comparator must be awake on every counted round")
    totals = running_total(history.losses[np.ix_(rows, ids)])
    k = int(np.argmin(totals))
    return int(ids[k]), float(totals[k])


def _regret(history: History, comparators: Iterable[int], rows: np.ndarray, learner_losses: Optional[np.ndarray]) -> float:
    learner_losses = history.expected_losses if learner_losses is None else learner_losses
    _, best = best_comparator(history, comparators, rows)
    return float(running_total(learner_losses[rows])) - best


def overall_regret(history: History, comparators: Iterable[int], learner_losses: Optional[np.ndarray] = None) -> float:
    """Cumulative expected loss minus that of the best always-awake comparator."""
    return _regret(history, comparators, np.ones(len(history), dtype=bool), learner_losses)


def subgroup_regret(
    history: History, g: int, comparators: Iterable[int], learner_losses: Optional[np.ndarray] = None
) -> float:
    """Regret restricted to the rounds whose example belongs to group ``g``."""
    rows = in_group(history.groups, g)
    if not rows.any():
        _comparator_ids(history, comparators)
        return 0.0
    return _regret(history, comparators, rows, learner_losses)


def sleeping_regret(history: History, h: int) -> float:
    if not 0 <= h < history.n_experts:
        raise KeyError(f"unknown expert {h}")
    rows = history.awake[:, h]
    return float(history.expected_losses[rows].sum() - history.losses[rows, h].sum())


def regret_trajectory(
    history: History,
    comparators: Iterable[int],
    rows: Optional[np.ndarray] = None,
    learner_losses: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Cumulative regret after every round (rounds outside ``rows`` add nothing).

    The comparator is re-chosen at every prefix, so the final entry equals
    the corresponding regret metric.
    """
    ids = _comparator_ids(history, comparators)
    rows = np.ones(len(history), dtype=bool) if rows is None else rows
    learner_losses = history.expected_losses if learner_losses is None else learner_losses
    if not history.awake[np.ix_(rows, ids)].all():
        raise ValueError("every comparator must be awake on every counted round")
    own = np.cumsum(np.where(rows, learner_losses, 0.0))
    comp = np.cumsum(np.where(rows[:, None], np.nan_to_num(history.losses[:, ids]), 0.0), axis=0)
    return own - comp.min(axis=1) if len(ids) else own


# -- stream serialization ---------------------------------------------------


def _fmt_loss(x: float) -> Optional[float]:
    return None if np.isnan(x) else float(x)


def write_stream(stream: Stream, path: str | Path) -> None:
    """One JSON object per line; the first line names the rules and groups."""
    with open(path, "w") as fh:
        fh.write(json.dumps({"rules": list(stream.rule_names), "groups": list(stream.group_names)}) + "\n")
        for i in range(stream.T):
            record = {
                "t": i + 1,
                "groups": hex(int(stream.groups[i])),
                "losses": [_fmt_loss(x) for x in stream.losses[i]],
            }
            if stream.labels is not None and stream.labels[i] != 0:
                record["label"] = "+" if stream.labels[i] > 0 else "-"
            fh.write(json.dumps(record) + "\n")


def read_stream(path: str | Path) -> Stream:
    rules: Optional[list[str]] = None
    group_names: Optional[list[str]] = None
    groups, losses, labels = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            rec = json.loads(line)
            if "rules" in rec and "t" not in rec:
                rules, group_names = rec["rules"], rec.get("groups")
                continue
            if rec["t"] != len(groups) + 1:
                raise MalformedRoundError(f"expected t={len(groups) + 1} on line {lineno}", rec["t"])
            groups.append(int(rec["groups"], 16))
            losses.append([np.nan if x is None else float(x) for x in rec["losses"]])
            labels.append({"+": 1, "-": -1}.get(rec.get("label"), 0))
    width = len(losses[0]) if losses else len(rules or [])
    if rules is None:
        rules = [f"r{k}" for k in range(width)]
    if group_names is None:
        n_groups = max((int(g).bit_length() for g in groups), default=0)
        group_names = [f"g{j}" for j in range(n_groups)]
    return Stream(
        groups=np.array(groups, dtype=np.uint64),
        losses=np.array(losses, dtype=float).reshape(len(groups), width),
        rule_names=tuple(rules),
        group_names=tuple(group_names),
        labels=np.array(labels, dtype=np.int8) if any(labels) else None,
    )
