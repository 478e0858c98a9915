"""Experiment configuration: a YAML file validated against a strict schema."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .core import ConfigError


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class LossConfig(_Strict):
    kind: Literal["bernoulli", "fixed", "uniform", "constant"] = "bernoulli"
    low: float = Field(0.0, ge=0.0, le=1.0)
    high: float = Field(1.0, ge=0.0, le=1.0)
    value: float = Field(0.0, ge=0.0, le=1.0)
    specialist_advantage: float = Field(0.0, ge=0.0, le=1.0)
    planted_best: bool = False
    planted_gap: float = Field(0.0, ge=0.0, le=1.0)


class InstanceConfig(_Strict):
    generator: Literal["random", "ic", "overlap", "file"] = "random"
    T: int = Field(1000, ge=0)
    groups: list[str] = Field(default_factory=list, max_length=64)
    membership: list[float] = Field(default_factory=list)
    n_global: int = Field(1, ge=0)
    n_per_group: int = Field(1, ge=0)
    loss: LossConfig = Field(default_factory=LossConfig)
    swap_parity: bool = False
    n: Optional[int] = Field(None, gt=0)
    exact: bool = True
    path: Optional[str] = None

    @model_validator(mode="after")
    def _check(self):
        if self.generator == "random":
            if len(self.membership) != len(self.groups):
                raise ValueError("membership needs one probability per group")
            if any(not 0.0 <= p <= 1.0 for p in self.membership):
                raise ValueError("membership probabilities must lie in [0, 1]")
            if self.loss.low > self.loss.high:
                raise ValueError("loss.low must not exceed loss.high")
        if self.generator == "ic" and self.T % 2:
            raise ValueError("the IC instance needs an even T")
        if self.generator == "overlap" and (self.n is None or self.n % 10):
            raise ValueError("the overlap instance needs n, a multiple of 10")
        if self.generator == "file" and not self.path:
            raise ValueError("generator 'file' needs a path")
        return self


class AdditionConfig(_Strict):
    t: int = Field(ge=1)
    rule: str
    group: Optional[str] = None


class PoolConfig(_Strict):
    global_rules: Optional[list[str]] = Field(None, alias="global")
    groups: Optional[dict[str, list[str]]] = None
    additions: list[AdditionConfig] = Field(default_factory=list)


class LearnerConfig(_Strict):
    algorithm: Literal["adanormalhedge", "mw", "intersection_mw"] = "adanormalhedge"
    eta: Optional[float] = Field(None, gt=0.0, lt=1.0)
    prior: Optional[list[float]] = None


class FeedbackConfig(_Strict):
    reduction: Union[Literal[1, 2, 3], Literal["none"]] = "none"
    mode: Optional[Literal["full", "pay-for-feedback", "apple-tasting"]] = None
    sizes: Literal["known", "doubling"] = "known"
    draw_range: Literal["cap", "group-size"] = "cap"
    horizon: Optional[int] = Field(None, ge=1)
    group_sizes: Optional[dict[str, int]] = None
    intersection_sizes: Optional[dict[str, int]] = None  # keys: hex group bitmasks

    @model_validator(mode="after")
    def _check(self):
        if self.reduction == "none":
            if self.mode not in (None, "full"):
                raise ValueError("limited feedback needs a reduction (1, 2 or 3)")
            self.mode = "full"
        else:
            if self.mode == "full":
                raise ValueError("reductions run under pay-for-feedback or apple-tasting")
            self.mode = self.mode or "pay-for-feedback"
        return self


class ExperimentConfig(_Strict):
    instance: InstanceConfig = Field(default_factory=InstanceConfig)
    pool: PoolConfig = Field(default_factory=PoolConfig)
    learner: LearnerConfig = Field(default_factory=LearnerConfig)
    feedback: FeedbackConfig = Field(default_factory=FeedbackConfig)
    seeds: list[int] = Field(default_factory=lambda: [0])
    checkpoints: Optional[list[int]] = None
    out: str = "out"
    sample_actions: bool = False

    @model_validator(mode="after")
    def _check(self):
        if any(s < 0 for s in self.seeds):
            raise ValueError("seeds must be non-negative")
        red = self.feedback.reduction
        if red in (2, 3) and self.learner.algorithm != "adanormalhedge":
            raise ValueError(f"reduction {red} needs a sleeping learner (adanormalhedge)")
        if red == 1 and self.learner.algorithm == "intersection_mw":
            raise ValueError("reduction 1 already runs one learner per intersection; use mw or adanormalhedge")
        if red != "none" and self.pool.additions:
            raise ValueError("scheduled expert additions are only supported with full feedback")
        if self.learner.prior is not None and self.pool.additions:
            raise ValueError("a custom prior cannot be combined with expert additions")
        return self

    def canonical(self) -> str:
        return json.dumps(self.model_dump(mode="json", by_alias=True), sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data or {})
    except ValidationError as exc:
        lines = [f"  {'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in exc.errors()]
        raise ConfigError("invalid config:\n" + "\n".join(lines)) from None


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config must be a mapping of sections")
    return parse_config(data)


def with_override(cfg: ExperimentConfig, dotted: str, value) -> ExperimentConfig:
    """Copy of ``cfg`` with the field at ``dotted`` (e.g. ``instance.T``) replaced."""
    data = cfg.model_dump(mode="json", by_alias=True)
    node = data
    *parents, leaf = dotted.split(".")
    for key in parents:
        if not isinstance(node.get(key), dict):
            raise ConfigError(f"unknown config field {dotted!r}")
        node = node[key]
    if leaf not in node:
        raise ConfigError(f"unknown config field {dotted!r}")
    node[leaf] = value
    return parse_config(data)
