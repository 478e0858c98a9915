"""Learners: sleeping AdaNormalHedge, multiplicative weights, and the
per-intersection multiplicative-weights ensemble with the doubling trick.

All learners share one small protocol used by the run loops::

    probs = learner.predict(t, groups, awake)
    learner.update(t, groups, awake, probs, losses)
    learner.add_expert()

``awake`` is a boolean mask over the pool and ``losses`` a full-width array
(values at asleep positions are ignored).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Protocol

import numpy as np

from .core import MalformedRoundError

# exp() overflows just above 709; weights are rescaled before that point.
_MAX_EXPONENT = 600.0


class Learner(Protocol):
    def predict(self, t: int, groups: int, awake: np.ndarray) -> np.ndarray: ...

    def update(self, t: int, groups: int, awake: np.ndarray, probs: np.ndarray, losses: np.ndarray) -> None: ...

    def add_expert(self) -> None: ...


def _uniform(awake: np.ndarray) -> np.ndarray:
    awake = np.asarray(awake, dtype=bool)
    n = awake.sum(axis=-1, keepdims=True)
    if np.any(n == 0):
        raise MalformedRoundError("no expert is awake")
    return awake / n


# -- AdaNormalHedge ---------------------------------------------------------


def anh_potential(R, C):
    """exp(max(0, R)^2 / (3C))."""
    return np.exp(np.maximum(0.0, R) ** 2 / (3.0 * C))


def anh_weight(R: float, C: float) -> float:
    """Weight of an expert with cumulative regret R and cumulative |regret| C."""
    if C < 0:
        raise ValueError("C must be non-negative")
    return float(0.5 * (anh_potential(R + 1.0, C + 1.0) - anh_potential(R - 1.0, C + 1.0)))


def anh_probs(R: np.ndarray, C: np.ndarray, awake: np.ndarray, prior: Optional[np.ndarray] = None) -> np.ndarray:
    """Distribution over awake experts proportional to prior x weight.

    Works on the last axis, so ``R``, ``C`` and ``awake`` may carry leading
    batch dimensions.  Falls back to uniform over the awake experts when all
    of their weights vanish.
    """
    R = np.asarray(R, dtype=float)
    C = np.asarray(C, dtype=float)
    awake = np.asarray(awake, dtype=bool)
    hi = np.maximum(0.0, R + 1.0) ** 2 / (3.0 * (C + 1.0))
    lo = np.maximum(0.0, R - 1.0) ** 2 / (3.0 * (C + 1.0))
    top = np.max(np.where(awake, hi, 0.0), axis=-1, keepdims=True)
    shift = np.maximum(0.0, top - _MAX_EXPONENT)
    w = 0.5 * (np.exp(hi - shift) - np.exp(lo - shift))
    if prior is not None:
        w = w * prior
    w = np.where(awake, w, 0.0)
    total = w.sum(axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = w / total
    dead = (total <= 0.0)[..., 0]
    if np.any(dead):
        probs[dead] = _uniform(awake[dead])
    return probs


def anh_regrets(probs: np.ndarray, losses: np.ndarray, awake: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(expected loss, instantaneous regret per expert); zero regret for sleepers."""
    safe = np.where(awake, losses, 0.0)
    if np.isnan(safe).any():
        raise MalformedRoundError("an awake expert has no loss")
    ell_hat = np.sum(probs * safe, axis=-1, keepdims=True)
    return ell_hat[..., 0], np.where(awake, ell_hat - safe, 0.0)


class AdaNormalHedge:
    """Sleeping-experts AdaNormalHedge.

    ``R`` accumulates each expert's regret over the rounds it fired and
    ``C`` the absolute values of the same terms.  With no explicit prior the
    prior is uniform over however many experts currently exist.
    """

    def __init__(self, n_experts: int, prior: Optional[np.ndarray] = None):
        self.R = np.zeros(n_experts)
        self.C = np.zeros(n_experts)
        self.prior = None if prior is None else np.asarray(prior, dtype=float)
        if self.prior is not None and self.prior.shape != (n_experts,):
            raise ValueError("prior must have one entry per expert")

    @property
    def n_experts(self) -> int:
        return len(self.R)

    @property
    def q(self) -> np.ndarray:
        if self.prior is None:
            return np.full(self.n_experts, 1.0 / max(self.n_experts, 1))
        return self.prior

    def predict(self, t: int, groups: int, awake: np.ndarray) -> np.ndarray:
        return anh_probs(self.R, self.C, awake, self.prior)

    def update(self, t: int, groups: int, awake: np.ndarray, probs: np.ndarray, losses: np.ndarray) -> None:
        _, r = anh_regrets(probs, losses, awake)
        self.R += r
        self.C += np.abs(r)

    def add_expert(self) -> None:
        self.R = np.append(self.R, 0.0)
        self.C = np.append(self.C, 0.0)
        if self.prior is not None:
            prior = np.append(self.prior, 1.0 / self.n_experts)
            self.prior = prior / prior.sum()


def anh_predict(learner: AdaNormalHedge, awake: np.ndarray) -> np.ndarray:
    return learner.predict(0, 0, awake)


def anh_update(learner: AdaNormalHedge, probs: np.ndarray, losses: np.ndarray, awake: np.ndarray) -> AdaNormalHedge:
    learner.update(0, 0, awake, probs, losses)
    return learner


# -- multiplicative weights -------------------------------------------------


def mw_learning_rate(n_experts: int, horizon: int) -> float:
    """sqrt(ln N / T), clamped to (0, 0.5]."""
    if n_experts <= 1 or horizon <= 0:
        return 0.5
    return min(0.5, math.sqrt(math.log(n_experts) / horizon))


class MultiplicativeWeights:
    """Weights start at 1 and shrink by (1 - eta)^loss; kept in log space."""

    def __init__(self, n_experts: int, eta: float):
        if not 0.0 < eta < 1.0:
            raise ValueError(f"learning rate must lie in (0, 1), got {eta}")
        self.eta = eta
        self.log_w = np.zeros(n_experts)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_w)

    def distribution(self, awake: Optional[np.ndarray] = None) -> np.ndarray:
        logits = self.log_w if awake is None else np.where(awake, self.log_w, -np.inf)
        w = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return w / w.sum(axis=-1, keepdims=True)

    def observe(self, losses: np.ndarray, awake: Optional[np.ndarray] = None) -> None:
        step = np.asarray(losses, dtype=float) * math.log1p(-self.eta)
        self.log_w += step if awake is None else np.where(awake, step, 0.0)

    def step(self, losses: np.ndarray) -> np.ndarray:
        """Play the current distribution, then absorb ``losses``."""
        probs = self.distribution()
        self.observe(losses)
        return probs

    def reset(self, eta: Optional[float] = None) -> None:
        self.log_w[:] = 0.0
        if eta is not None:
            self.eta = eta

    # learner protocol (sleeping experts are simply left out of the draw)
    def predict(self, t: int, groups: int, awake: np.ndarray) -> np.ndarray:
        if not np.any(awake):
            raise MalformedRoundError("no expert is awake", t)
        return self.distribution(awake)

    def update(self, t: int, groups: int, awake: np.ndarray, probs: np.ndarray, losses: np.ndarray) -> None:
        self.observe(np.where(awake, losses, 0.0), awake)

    def add_expert(self) -> None:
        self.log_w = np.append(self.log_w, 0.0)


def mw_step(learner: MultiplicativeWeights, losses: np.ndarray) -> tuple[np.ndarray, MultiplicativeWeights]:
    return learner.step(losses), learner


# -- per-intersection ensemble ----------------------------------------------


@dataclass
class SubLearner:
    roster: np.ndarray
    mw: MultiplicativeWeights
    r: int
    count: int = 0
    restarts: int = 0


@dataclass
class IntersectionEnsemble:
    """A separate multiplicative-weights learner for every exact group profile.

    Each sub-learner plays over the experts awake on its profile and guesses
    its own horizon as 2^r (starting at ``initial_exponent``); after 2^r
    routed rounds it restarts with weights 1, ``r + 1`` and a fresh rate.
    A change in the awake roster (an added expert) also restarts it.
    """

    n_experts: int
    eta: Optional[float] = None
    initial_exponent: int = 2
    subs: dict[int, SubLearner] = field(default_factory=dict)

    def _rate(self, roster_size: int, r: int) -> float:
        return self.eta if self.eta is not None else mw_learning_rate(roster_size, 2**r)

    def sub_learner(self, groups: int, awake: np.ndarray) -> SubLearner:
        key = int(groups)
        roster = np.flatnonzero(awake)
        sub = self.subs.get(key)
        if sub is None:
            r = self.initial_exponent
            sub = SubLearner(roster, MultiplicativeWeights(len(roster), self._rate(len(roster), r)), r)
            self.subs[key] = sub
        elif not np.array_equal(sub.roster, roster):
            sub.roster = roster
            sub.mw = MultiplicativeWeights(len(roster), self._rate(len(roster), sub.r))
            sub.restarts += 1
        return sub

    def predict(self, t: int, groups: int, awake: np.ndarray) -> np.ndarray:
        sub = self.sub_learner(groups, awake)
        if sub.roster.size == 0:
            raise MalformedRoundError("no expert is awake", t)
        probs = np.zeros(self.n_experts)
        probs[sub.roster] = sub.mw.distribution()
        return probs

    def update(self, t: int, groups: int, awake: np.ndarray, probs: np.ndarray, losses: np.ndarray) -> None:
        sub = self.sub_learner(groups, awake)
        sub.mw.observe(losses[sub.roster])
        sub.count += 1
        if sub.count >= 2**sub.r:
            sub.r += 1
            sub.count = 0
            sub.restarts += 1
            sub.mw.reset(self._rate(len(sub.roster), sub.r))

    def add_expert(self) -> None:
        self.n_experts += 1


def ensemble_step(ens: IntersectionEnsemble, t: int, groups: int, awake: np.ndarray, losses: np.ndarray) -> tuple[np.ndarray, IntersectionEnsemble]:
    probs = ens.predict(t, groups, awake)
    ens.update(t, groups, awake, probs, losses)
    return probs, ens


def make_learner(algorithm: str, n_experts: int, eta: Optional[float] = None, prior=None, horizon: Optional[int] = None) -> Learner:
    if algorithm == "adanormalhedge":
        return AdaNormalHedge(n_experts, prior)
    if algorithm == "mw":
        rate = eta if eta is not None else mw_learning_rate(n_experts, horizon or 1)
        return MultiplicativeWeights(n_experts, rate)
    if algorithm == "intersection_mw":
        return IntersectionEnsemble(n_experts, eta)
    raise ValueError(f"unknown algorithm {algorithm!r}")
