"""Sleeping-experts learners and audits for fairness across overlapping groups."""

from .algorithms import AdaNormalHedge, IntersectionEnsemble, MultiplicativeWeights, make_learner
from .audit import fpr_fnr, ic_gain, impossibility_scan, ir_gain
from .config import ExperimentConfig, load_config, parse_config
from .core import (
    ConfigError,
    Distribution,
    History,
    MalformedRoundError,
    Round,
    Stream,
    overall_regret,
    sleeping_regret,
    subgroup_regret,
)
from .environments import gen_ic_instance, gen_overlap_instance, gen_random_adversary
from .experiment import run_experiment, run_sweep
from .experts import ExpertPool, PoolSpec, SleepingExpert, build_pool
from .runner import simulate

__version__ = "0.1.0"
