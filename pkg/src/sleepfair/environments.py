"""Instance generators: the incentive-compatibility counterexample, the
overlapping-groups FPR/FNR construction, and seeded random adversaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import MAX_GROUPS, Stream
from .experts import PoolSpec

BIG, SMALL = 0, 1


def gen_ic_instance(T: int, swap_parity: bool = False) -> tuple[Stream, PoolSpec]:
    """Two groups: B is everyone, S arrives on odd rounds (even with ``swap_parity``).

    Rules: the global ``f`` (loss 1 on S, 0 elsewhere) and one specialist
    per group, ``f(B)`` and ``f(S)``, each with loss 0.2 on its members.
    """
    if T % 2:
        raise ValueError(f"T must be even, got {T}")
    t = np.arange(1, T + 1)
    in_s = (t % 2 == 1) != swap_parity
    groups = np.where(in_s, 0b11, 0b01).astype(np.uint64)
    losses = np.empty((T, 3))
    losses[:, 0] = np.where(in_s, 1.0, 0.0)
    losses[:, 1] = 0.2
    losses[:, 2] = np.where(in_s, 0.2, np.nan)
    stream = Stream(groups, losses, ("f", "f(B)", "f(S)"), ("B", "S"))
    return stream, PoolSpec(["f"], {BIG: ["f(B)"], SMALL: ["f(S)"]})


@dataclass(frozen=True, eq=False)
class OverlapInstance:
    """Two groups A and B sharing a fifth of their examples.

    Rows are laid out as A-only, then shared, then B-only.  ``labels`` are
    +1/-1 and ``predictions`` map predictor name to 0/1 (1 = positive).
    """

    n: int
    membership: np.ndarray  # (M, 2) bool, columns A, B
    labels: np.ndarray
    predictions: dict[str, np.ndarray]
    positive_rate: float = 0.5  # label distribution on the shared part

    @property
    def shared(self) -> np.ndarray:
        return self.membership.all(axis=1)

    def group(self, name: str) -> np.ndarray:
        return self.membership[:, "AB".index(name)]

    def to_stream(self) -> Stream:
        """0/1 losses of both predictors in the common stream format."""
        names = tuple(self.predictions)
        preds = np.stack([self.predictions[k] for k in names], axis=1)
        losses = (preds != (self.labels[:, None] > 0)).astype(float)
        groups = (self.membership[:, 0].astype(np.uint64) | (self.membership[:, 1].astype(np.uint64) << np.uint64(1)))
        return Stream(groups, losses, names, ("A", "B"), labels=self.labels)


def gen_overlap_instance(n: int, seed: Optional[int] = None, exact: bool = True, rng: Optional[np.random.Generator] = None) -> OverlapInstance:
    """``n`` examples per group, 80% exclusive and 20% shared.

    A-only examples are positive and B-only negative.  Shared labels are
    fair coin flips, or exactly half positive when ``exact``.
    """
    if n <= 0 or n % 10:
        raise ValueError(f"n must be a positive multiple of 10, got {n}")
    only, both = 8 * n // 10, 2 * n // 10
    if exact:
        shared_labels = np.where(np.arange(both) < both // 2, 1, -1)
    else:
        rng = rng if rng is not None else np.random.default_rng(seed)
        shared_labels = np.where(rng.random(both) < 0.5, 1, -1)
    labels = np.concatenate([np.ones(only), shared_labels, -np.ones(only)]).astype(np.int8)
    membership = np.zeros((2 * only + both, 2), dtype=bool)
    membership[: only + both, 0] = True
    membership[only:, 1] = True
    section = np.repeat([0, 1, 2], [only, both, only])
    f_a = np.where(section == 0, 1, 0).astype(np.int8)  # positive on A-only, negative elsewhere
    f_b = np.where(section == 1, 1, 0).astype(np.int8)  # positive on the shared part only
    return OverlapInstance(n, membership, labels, {"f_A": f_a, "f_B": f_b})


@dataclass
class LossModel:
    kind: str = "bernoulli"  # bernoulli | fixed | uniform | constant
    low: float = 0.0
    high: float = 1.0
    value: float = 0.0
    specialist_advantage: float = 0.0
    planted_best: bool = False  # first specialist of each group has mean ``low`` on its group
    planted_gap: float = 0.0  # every other mean stays at least this far above ``low``


@dataclass
class InstanceSpec:
    generator: str = "random"
    T: int = 1000
    groups: list[str] = field(default_factory=list)
    membership: list[float] = field(default_factory=list)
    n_global: int = 1
    n_per_group: int = 1
    loss: LossModel = field(default_factory=LossModel)
    seed: Optional[int] = None

    def validate(self) -> None:
        if self.T < 0:
            raise ValueError("T must be non-negative")
        if len(self.groups) > MAX_GROUPS:
            raise ValueError(f"at most {MAX_GROUPS} groups supported")
        if len(self.membership) != len(self.groups):
            raise ValueError("one membership probability per group is required")
        if any(not 0.0 <= p <= 1.0 for p in self.membership):
            raise ValueError(f"membership probabilities must lie in [0, 1]: {self.membership}")
        lm = self.loss
        if lm.kind not in ("bernoulli", "fixed", "uniform", "constant"):
            raise ValueError(f"unknown loss kind {lm.kind!r}")
        if not (0.0 <= lm.low <= lm.high <= 1.0) or not 0.0 <= lm.value <= 1.0:
            raise ValueError("loss parameters must lie in [0, 1] with low <= high")


def random_pool_spec(spec: InstanceSpec) -> PoolSpec:
    return PoolSpec(
        [f"f{i}" for i in range(spec.n_global)],
        {g: [f"{name}_f{i}" for i in range(spec.n_per_group)] for g, name in enumerate(spec.groups)},
    )


def gen_random_adversary(spec: InstanceSpec, rng: Optional[np.random.Generator] = None) -> Stream:
    """Seeded stream with independent group memberships and per-profile losses.

    Each rule gets its own mean loss on every group profile, drawn once from
    U[low, high]; losses are Bernoulli draws around it, or the mean itself
    for kind ``fixed``.  Specialists have their means lowered by
    ``specialist_advantage`` on profiles containing their group.  With
    ``planted_best`` each group's first specialist sits exactly at ``low``
    on its group and every other mean stays at least ``planted_gap`` above
    ``low``, so that specialist is a best expert for the group in expectation.
    """
    spec.validate()
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    G, T = len(spec.groups), spec.T
    member = rng.random((T, G)) < np.asarray(spec.membership, dtype=float)
    weights = (np.uint64(1) << np.arange(G, dtype=np.uint64)) if G else np.zeros(0, np.uint64)
    groups = (member.astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64) if G else np.zeros(T, np.uint64)
    pool = random_pool_spec(spec)
    names = list(pool.global_rules) + [r for g in range(G) for r in pool.per_group[g]]
    owner = [-1] * spec.n_global + [g for g in range(G) for _ in range(spec.n_per_group)]
    K = len(names)
    lm = spec.loss
    if lm.kind == "constant":
        losses = np.full((T, K), lm.value)
    elif lm.kind == "uniform":
        losses = rng.uniform(lm.low, lm.high, size=(T, K))
    else:
        profiles, inverse = np.unique(groups, return_inverse=True)
        means = rng.uniform(lm.low, lm.high, size=(len(profiles), K))
        for k, g in enumerate(owner):
            if g >= 0:
                has_g = ((profiles >> np.uint64(g)) & np.uint64(1)).astype(bool)
                means[has_g, k] -= lm.specialist_advantage
        means = np.clip(means, 0.0, 1.0)
        if lm.planted_best and spec.n_per_group:
            means = np.maximum(means, min(1.0, lm.low + lm.planted_gap))
            for g in range(G):
                has_g = ((profiles >> np.uint64(g)) & np.uint64(1)).astype(bool)
                means[has_g, spec.n_global + g * spec.n_per_group] = lm.low
        means = means[inverse.reshape(-1)]
        losses = means if lm.kind == "fixed" else (rng.random((T, K)) < means).astype(float)
    return Stream(groups, losses, tuple(names), tuple(spec.groups))
