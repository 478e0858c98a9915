"""Audits: FPR/FNR rates, the overlapping-groups impossibility scan, and
individual-rationality / incentive-compatibility gains."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .core import History, best_comparator, in_group, running_total
from .environments import OverlapInstance
from .runner import make_instance, resolve_pool_spec, simulate


@dataclass(frozen=True)
class RateReport:
    fpr: Optional[float]
    fnr: Optional[float]
    n_pos: float
    n_neg: float

    @property
    def defined(self) -> bool:
        return self.fpr is not None and self.fnr is not None

    @property
    def unweighted_avg(self) -> Optional[float]:
        return (self.fpr + self.fnr) / 2 if self.defined else None

    def as_dict(self) -> dict:
        return {
            "fpr": self.fpr,
            "fnr": self.fnr,
            "unweighted_avg": self.unweighted_avg,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "fpr_undefined": self.fpr is None,
            "fnr_undefined": self.fnr is None,
        }


def fpr_fnr(predictions, labels, mask=None) -> RateReport:
    """False positive / false negative rates over the masked examples.

    ``predictions`` are probabilities of predicting positive (0/1 for
    deterministic predictors); ``labels`` are +1/-1.  A rate with an empty
    denominator is reported as None.
    """
    pred = np.asarray(predictions, dtype=float)
    labels = np.asarray(labels)
    mask = np.ones(len(labels), dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    pos = mask & (labels > 0)
    neg = mask & (labels < 0)
    n_pos, n_neg = int(pos.sum()), int(neg.sum())
    fpr = float(pred[neg].sum() / n_neg) if n_neg else None
    fnr = float((1.0 - pred[pos]).sum() / n_pos) if n_pos else None
    return RateReport(fpr, fnr, n_pos, n_neg)


@dataclass(frozen=True)
class ScanResult:
    p_grid: np.ndarray
    avg_a: np.ndarray
    avg_b: np.ndarray
    p_star: float
    min_max: float
    bound: float = 0.25

    @property
    def exceeds_bound(self) -> bool:
        return self.min_max >= self.bound


def closed_form_averages(instance: OverlapInstance, p) -> tuple[np.ndarray, np.ndarray]:
    """Each group's expected (FPR + FNR)/2 when exclusive examples are
    classified perfectly and shared ones are called positive w.p. ``p``."""
    p = np.asarray(p, dtype=float)
    shared = instance.shared
    m = float(shared.sum())
    q = instance.positive_rate
    out = []
    for name in "AB":
        own = instance.group(name) & ~shared
        pos = float((instance.labels[own] > 0).sum()) + m * q
        neg = float((instance.labels[own] < 0).sum()) + m * (1.0 - q)
        fpr = p * m * (1.0 - q) / neg
        fnr = (1.0 - p) * m * q / pos
        out.append((fpr + fnr) / 2.0)
    return out[0], out[1]


def impossibility_scan(instance: OverlapInstance, resolution: int = 10001) -> ScanResult:
    """Best achievable worst-group (FPR + FNR)/2 over a grid of shared-part
    positive rates."""
    if resolution < 3:
        raise ValueError("grid resolution must be at least 3")
    grid = np.linspace(0.0, 1.0, resolution)
    a, b = closed_form_averages(instance, grid)
    worst = np.maximum(a, b)
    k = int(np.argmin(worst))
    return ScanResult(grid, a, b, float(grid[k]), float(worst[k]))


@dataclass(frozen=True)
class GainReport:
    group: int
    baseline: float
    alternative: float
    gain: float
    T_g: int

    @property
    def per_round(self) -> Optional[float]:
        return self.gain / self.T_g if self.T_g else None

    def as_dict(self) -> dict:
        return {
            "group": self.group,
            "baseline": self.baseline,
            "alternative": self.alternative,
            "gain": self.gain,
            "T_g": self.T_g,
            "gain_per_round": self.per_round,
        }


def ir_gain(history: History, g: int, comparators: Iterable[int], learner_losses: Optional[np.ndarray] = None) -> GainReport:
    """How much group ``g`` would save by leaving with its best own expert."""
    rows = in_group(history.groups, g)
    learner_losses = history.expected_losses if learner_losses is None else learner_losses
    comparators = list(comparators)
    if not comparators:
        raise ValueError(f"group {g} has no experts of its own")
    if not rows.any():
        return GainReport(g, 0.0, 0.0, 0.0, 0)
    _, alternative = best_comparator(history, comparators, rows)
    baseline = float(running_total(learner_losses[rows]))
    return GainReport(g, baseline, alternative, baseline - alternative, int(rows.sum()))


def group_loss(history: History, g: int) -> float:
    return float(running_total(history.expected_losses[in_group(history.groups, g)]))


def ic_gain(cfg: ExperimentConfig, g: int, hidden: Iterable[str], seed: Optional[int] = None) -> GainReport:
    """Group ``g``'s loss with every expert minus its loss after hiding ``hidden``.

    Both runs share the seed, so they see the same stream and exploration
    draws; a positive gain means hiding would have helped the group.
    """
    hidden = list(hidden)
    seed = cfg.seeds[0] if seed is None else seed
    stream, default = make_instance(cfg, seed)
    full_spec = resolve_pool_spec(cfg, stream, default)
    hidden_spec = full_spec.hide(g, hidden)
    base = simulate(cfg, seed, full_spec)
    alt_history = simulate(cfg, seed, hidden_spec).history
    baseline = group_loss(base.history, g)
    alternative = group_loss(alt_history, g)
    return GainReport(g, baseline, alternative, baseline - alternative, int(in_group(base.history.groups, g).sum()))
