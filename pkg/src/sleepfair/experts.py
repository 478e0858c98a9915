"""Sleeping-expert pools built from global and group-specific rules.

Every global rule becomes an always-awake expert; every rule offered for
group ``g`` becomes a separate copy that fires only on members of ``g``.
Copies of the same base rule in different groups are distinct experts.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import Round, Stream, in_group


@dataclass(frozen=True)
class Always:
    def accepts(self, t: np.ndarray, groups: np.ndarray) -> np.ndarray:
        return np.ones(len(groups), dtype=bool)


@dataclass(frozen=True)
class InGroup:
    group: int

    def accepts(self, t: np.ndarray, groups: np.ndarray) -> np.ndarray:
        return in_group(groups, self.group)


@dataclass(frozen=True)
class Intersection:
    """Fires only when the round's group set equals ``groups`` exactly."""

    groups: int

    def accepts(self, t: np.ndarray, groups: np.ndarray) -> np.ndarray:
        return np.asarray(groups, dtype=np.uint64) == np.uint64(self.groups)


@dataclass(frozen=True)
class Custom:
    predicate: Callable[[int, int], bool]

    def accepts(self, t: np.ndarray, groups: np.ndarray) -> np.ndarray:
        return np.array([bool(self.predicate(int(a), int(b))) for a, b in zip(t, groups)], dtype=bool)


ActivationRule = Union[Always, InGroup, Intersection, Custom]


@dataclass(frozen=True)
class SleepingExpert:
    id: int
    base: str
    rule: ActivationRule
    born_at: int = 1
    origin: Optional[int] = None  # None for global experts, else the group id


@dataclass
class ExpertPool:
    experts: list[SleepingExpert] = field(default_factory=list)

    @property
    def N(self) -> int:
        return len(self.experts)

    @property
    def origin(self) -> dict[int, Optional[int]]:
        return {e.id: e.origin for e in self.experts}

    def __iter__(self):
        return iter(self.experts)

    def __getitem__(self, i: int) -> SleepingExpert:
        return self.experts[i]

    def global_ids(self) -> list[int]:
        return [e.id for e in self.experts if e.origin is None and e.born_at <= 1]

    def group_ids(self, g: int) -> list[int]:
        return [e.id for e in self.experts if e.origin == g and e.born_at <= 1]

    def names(self, group_names: Sequence[str] = ()) -> list[str]:
        out = []
        for e in self.experts:
            if e.origin is None:
                out.append(e.base)
            else:
                gname = group_names[e.origin] if e.origin < len(group_names) else str(e.origin)
                out.append(f"{e.base}@{gname}")
        return out

    def awake_matrix(self, t: np.ndarray, groups: np.ndarray) -> np.ndarray:
        t = np.asarray(t)
        out = np.zeros((len(t), self.N), dtype=bool)
        for e in self.experts:
            out[:, e.id] = e.rule.accepts(t, groups) & (t >= e.born_at)
        return out

    def loss_matrix(self, stream: Stream, awake: Optional[np.ndarray] = None) -> np.ndarray:
        """Per-expert losses for every round of ``stream``; NaN where asleep."""
        if awake is None:
            awake = self.awake_matrix(np.arange(1, stream.T + 1), stream.groups)
        cols = [stream.rule_index(e.base) for e in self.experts]
        losses = stream.losses[:, cols] if cols else np.zeros((stream.T, 0))
        return np.where(awake, losses, np.nan)


def build_pool(global_rules: Iterable[str], per_group: Mapping[int, Iterable[str]]) -> ExpertPool:
    """One always-awake expert per global rule, one group copy per group rule."""
    pool = ExpertPool()
    for base in global_rules:
        pool.experts.append(SleepingExpert(pool.N, base, Always()))
    for g in sorted(per_group):
        for base in per_group[g]:
            pool.experts.append(SleepingExpert(pool.N, base, InGroup(g), origin=g))
    return pool


def awake_set(pool: ExpertPool, rnd: Round) -> frozenset[int]:
    mask = pool.awake_matrix(np.array([rnd.t]), np.array([rnd.groups], dtype=np.uint64))[0]
    return frozenset(int(i) for i in np.flatnonzero(mask))


def add_expert(
    pool: ExpertPool,
    base: str,
    rule: ActivationRule,
    t: int,
    origin: Optional[int] = None,
    now: Optional[int] = None,
) -> int:
    """Append an expert that sleeps before round ``t``; returns its id."""
    if now is not None and t < now:
        raise ValueError(f"cannot add an expert at t={t} before the current round {now}")
    if origin is None and isinstance(rule, InGroup):
        origin = rule.group
    expert = SleepingExpert(pool.N, base, rule, born_at=t, origin=origin)
    pool.experts.append(expert)
    return expert.id


@dataclass
class PoolSpec:
    """Names of the global rules and of the rules each group brings."""

    global_rules: list[str] = field(default_factory=list)
    per_group: dict[int, list[str]] = field(default_factory=dict)

    @property
    def N(self) -> int:
        return len(self.global_rules) + sum(len(v) for v in self.per_group.values())

    def build(self) -> ExpertPool:
        return build_pool(self.global_rules, self.per_group)

    def hide(self, g: int, hidden: Iterable[str]) -> "PoolSpec":
        """The pool left after group ``g`` withholds ``hidden`` from its own
        list and from the global list."""
        hidden = set(hidden)
        missing = hidden - set(self.per_group.get(g, []))
        if missing:
            raise ValueError(f"{sorted(missing)} are not rules of group {g}")
        return PoolSpec(
            [r for r in self.global_rules if r not in hidden],
            {k: [r for r in v if k != g or r not in hidden] for k, v in self.per_group.items()},
        )
