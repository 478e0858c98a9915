"""Experiment runs and sweeps: per-round CSV trajectories and JSON summaries."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np
import yaml
from scipy import stats

from .audit import fpr_fnr, ir_gain
from .config import ExperimentConfig, parse_config, with_override
from .core import ConfigError, SleepfairError, best_comparator, in_group, regret_trajectory, running_total, sleeping_regret
from .runner import Simulation, simulate

WORKERS_ENV = "SLEEPFAIR_WORKERS"


def default_checkpoints(T: int) -> list[int]:
    """Powers of two up to T, plus T itself."""
    return sorted({2**k for k in range(T.bit_length()) if 2**k <= T} | ({T} if T else set()))


def _clean(x) -> Optional[float]:
    x = float(x)
    return x if math.isfinite(x) else None


def _comparators(sim: Simulation) -> tuple[list[int], dict[int, list[int]]]:
    pool = sim.pool
    return pool.global_ids(), {g: pool.group_ids(g) for g in range(len(sim.stream.group_names))}


def regret_curves(sim: Simulation, charged: bool = False) -> tuple[Optional[np.ndarray], dict[int, Optional[np.ndarray]]]:
    """Cumulative overall regret (against the global experts) and per-group
    subgroup regret (against the group's own experts) after every round."""
    h = sim.history
    losses = h.charged if charged else h.expected_losses
    global_ids, group_ids = _comparators(sim)
    overall = regret_trajectory(h, global_ids, learner_losses=losses) if global_ids else None
    per_group = {}
    for g, ids in group_ids.items():
        per_group[g] = regret_trajectory(h, ids, in_group(h.groups, g), losses) if ids else None
    return overall, per_group


def learner_positive_rate(sim: Simulation) -> Optional[np.ndarray]:
    """Probability that the learner predicts positive, when labels and 0/1
    losses make the experts' predictions recoverable."""
    labels = sim.stream.labels
    h = sim.history
    if labels is None or np.any(labels == 0):
        return None
    losses = np.nan_to_num(h.losses)
    if not np.all(np.isin(losses[h.awake], (0.0, 1.0))):
        return None
    says_positive = (losses == 0.0) == (labels[:, None] > 0)
    return np.where(h.awake, h.probs * says_positive, 0.0).sum(axis=1)


def final_metrics(sim: Simulation) -> dict:
    h = sim.history
    names = sim.stream.group_names
    global_ids, group_ids = _comparators(sim)
    out = {"overall_regret": None, "charged_overall_regret": None, "subgroup_regret": {}, "charged_subgroup_regret": {}}
    if global_ids:
        _, best = best_comparator(h, global_ids, np.ones(len(h), dtype=bool))
        out["overall_regret"] = float(running_total(h.expected_losses)) - best
        out["charged_overall_regret"] = float(running_total(h.charged)) - best
    for g, ids in group_ids.items():
        name = names[g]
        rows = in_group(h.groups, g)
        if not ids:
            out["subgroup_regret"][name] = out["charged_subgroup_regret"][name] = None
            continue
        best = best_comparator(h, ids, rows)[1] if rows.any() else 0.0
        out["subgroup_regret"][name] = float(running_total(h.expected_losses[rows])) - best
        out["charged_subgroup_regret"][name] = float(running_total(h.charged[rows])) - best
    out["group_sizes"] = {names[g]: int(in_group(h.groups, g).sum()) for g in range(len(names))}
    out["exploration"] = {"count": len(sim.log.explored), "cost": sim.log.cost}
    return out


def build_report(sim: Simulation, cfg: ExperimentConfig, seed: int) -> tuple[dict, str]:
    """(JSON-ready summary, CSV trajectory text) for one finished run."""
    h = sim.history
    stream = sim.stream
    names = stream.group_names
    expert_names = sim.pool.names(names)
    flags = []
    overall, per_group = regret_curves(sim)
    c_overall, c_per_group = regret_curves(sim, charged=True)
    if overall is None:
        flags.append("no global experts: overall regret undefined")
    for g, curve in per_group.items():
        if curve is None:
            flags.append(f"group {names[g]} has no experts of its own: subgroup regret and IR gain undefined")
    if any(e.born_at > 1 for e in sim.pool):
        flags.append("experts added during the run: their regret counts only rounds from born_at on; they are excluded from comparator sets")

    checkpoints = cfg.checkpoints or default_checkpoints(stream.T)
    points = []
    for t in checkpoints:
        if not 1 <= t <= stream.T:
            continue
        i = t - 1
        points.append(
            {
                "t": t,
                "overall_regret": None if overall is None else _clean(overall[i]),
                "charged_overall_regret": None if c_overall is None else _clean(c_overall[i]),
                "subgroup_regret": {names[g]: None if c is None else _clean(c[i]) for g, c in per_group.items()},
                "charged_subgroup_regret": {names[g]: None if c is None else _clean(c[i]) for g, c in c_per_group.items()},
            }
        )

    final = final_metrics(sim)
    final["sleeping_regret"] = {expert_names[i]: sleeping_regret(h, i) for i in range(h.n_experts)}
    final["expected_loss_total"] = float(running_total(h.expected_losses))
    final["charged_total"] = float(running_total(h.charged))

    ir = {}
    for g in range(len(names)):
        ids = sim.pool.group_ids(g)
        ir[names[g]] = ir_gain(h, g, ids).as_dict() if ids else None
    rates = None
    positive = learner_positive_rate(sim)
    if positive is not None:
        rates = {names[g]: fpr_fnr(positive, stream.labels, in_group(h.groups, g)).as_dict() for g in range(len(names))}

    report = {
        "config_digest": cfg.digest(),
        "seed": seed,
        "T": stream.T,
        "groups": list(names),
        "experts": [
            {"id": e.id, "name": expert_names[e.id], "origin": None if e.origin is None else names[e.origin], "born_at": e.born_at}
            for e in sim.pool
        ],
        "checkpoints": points,
        "final": final,
        "exploration": {"count": len(sim.log.explored), "cost": sim.log.cost, "phases": len(sim.phases)},
        "exploration_count": len(sim.log.explored),
        "audit": {"ir": ir, "rates": rates},
        "flags": flags,
    }
    return report, trajectory_csv(sim, overall, per_group)


def trajectory_csv(sim: Simulation, overall, per_group) -> str:
    h = sim.history
    names = sim.stream.group_names
    header = ["t", "group_bitmask_hex", "explored", "expected_loss", "charged_cost", "cum_overall_regret"]
    header += [f"cum_subgroup_regret_{names[g]}" for g in per_group]
    T = len(h)
    nan = np.full(T, np.nan)
    cols = [overall if overall is not None else nan] + [c if c is not None else nan for c in per_group.values()]
    lines = [",".join(header)]
    ell = h.expected_losses.tolist()
    charged = h.charged.tolist()
    cols = [c.tolist() for c in cols]
    groups = h.groups.tolist()
    explored = h.explored.tolist()
    for i in range(T):
        row = [str(i + 1), hex(groups[i]), "1" if explored[i] else "0", repr(ell[i]), repr(charged[i])]
        row += [repr(c[i]) for c in cols]
        lines.append(",".join(row))
    return "\n".join(lines) + "\n"


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def run_experiment(cfg: ExperimentConfig, seeds: Optional[list[int]] = None, out: Optional[str | Path] = None) -> list[dict]:
    """Run every seed and write ``trajectory_<seed>.csv`` and ``summary_<seed>.json``."""
    seeds = cfg.seeds if seeds is None else seeds
    out = Path(cfg.out if out is None else out)
    out.mkdir(parents=True, exist_ok=True)
    reports = []
    for seed in seeds:
        sim = simulate(cfg, seed)
        report, csv_text = build_report(sim, cfg, seed)
        (out / f"trajectory_{seed}.csv").write_text(csv_text)
        (out / f"summary_{seed}.json").write_text(dump_json(report))
        reports.append(report)
    return reports


# -- sweeps -------------------------------------------------------------------


def parse_axis(axis: str) -> tuple[str, list]:
    """``"instance.T=4096,8192"`` -> ("instance.T", [4096, 8192])."""
    name, sep, values = axis.partition("=")
    if not sep or not name.strip() or not values.strip():
        raise ConfigError(f"axis must look like name=v1,v2,...; got {axis!r}")
    return name.strip(), [yaml.safe_load(v) for v in values.split(",")]


def _sweep_cell(task: tuple[str, str, object, int]) -> dict:
    cfg_json, name, value, seed = task
    cfg = with_override(parse_config(json.loads(cfg_json)), name, value)
    return final_metrics(simulate(cfg, seed))


class SweepError(SleepfairError):
    """A sweep cell failed at run time."""


def _cell_result(compute, task) -> dict:
    _, name, value, seed = task
    try:
        return compute()
    except ConfigError as exc:
        raise ConfigError(f"sweep cell {name}={value!r} seed={seed}: {exc}") from None
    except Exception as exc:
        raise SweepError(f"sweep cell {name}={value!r} seed={seed} failed: {exc}") from exc


def _mean_stderr(xs: list[float]) -> dict:
    arr = np.asarray(xs, dtype=float)
    stderr = float(arr.std(ddof=1) / math.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return {"mean": float(arr.mean()), "stderr": stderr, "n": len(arr)}


def run_sweep(
    cfg: ExperimentConfig,
    axis: str,
    n_seeds: int,
    out: Optional[str | Path] = None,
    workers: Optional[int] = None,
) -> dict:
    """Cross product of axis values and seeds 0..n_seeds-1, aggregated per cell.

    When the axis is a horizon (``*.T``) the log-log slope of the mean final
    charged subgroup regret against the mean group size is fitted per group.
    """
    if n_seeds <= 0:
        raise ConfigError("a sweep needs at least one seed")
    name, values = parse_axis(axis)
    for v in values:
        with_override(cfg, name, v)
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1"))
    cfg_json = json.dumps(cfg.model_dump(mode="json", by_alias=True))
    tasks = [(cfg_json, name, v, seed) for v in values for seed in range(n_seeds)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_sweep_cell, task) for task in tasks]
            results = [_cell_result(f.result, task) for f, task in zip(futures, tasks)]
    else:
        results = [_cell_result(lambda task=task: _sweep_cell(task), task) for task in tasks]

    groups = list(results[0]["group_sizes"]) if results else []
    cells = []
    for i, v in enumerate(values):
        chunk = results[i * n_seeds : (i + 1) * n_seeds]
        cell = {"value": v, "seeds": list(range(n_seeds))}
        overall = [r["charged_overall_regret"] for r in chunk]
        cell["charged_overall_regret"] = _mean_stderr(overall) if None not in overall else None
        cell["subgroup_regret"], cell["charged_subgroup_regret"], cell["group_size"] = {}, {}, {}
        for g in groups:
            for key in ("subgroup_regret", "charged_subgroup_regret"):
                vals = [r[key][g] for r in chunk]
                cell[key][g] = _mean_stderr(vals) if None not in vals else None
            cell["group_size"][g] = _mean_stderr([r["group_sizes"][g] for r in chunk])
        cell["exploration_count"] = _mean_stderr([r["exploration"]["count"] for r in chunk])
        cells.append(cell)

    summary = {"config_digest": cfg.digest(), "axis": name, "values": values, "n_seeds": n_seeds, "cells": cells, "slopes": None}
    if name.split(".")[-1] == "T" and len(values) >= 2:
        summary["slopes"] = {g: fit_slope(cells, g) for g in groups}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.json").write_text(dump_json(summary))
    return summary


def fit_slope(cells: list[dict], group: str) -> Optional[dict]:
    """Least-squares slope of log(regret) on log(group size) across cells."""
    xs, ys = [], []
    for cell in cells:
        reg = cell["charged_subgroup_regret"].get(group)
        size = cell["group_size"][group]["mean"]
        if reg is None or reg["mean"] <= 0 or size <= 0:
            return None
        xs.append(math.log(size))
        ys.append(math.log(reg["mean"]))
    fit = stats.linregress(xs, ys)
    return {"slope": float(fit.slope), "stderr": float(fit.stderr), "intercept": float(fit.intercept)}
