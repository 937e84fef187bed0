"""Online Bayesian bipartite matching: exact value-to-go, baselines, locality checks and a message-passing policy."""

__version__ = "0.1.0"

from .core import SKIP, Action, Instance, MatchingState, make_instance, run_episode, validate_instance
from .exact_dp import OptOnPolicy, VtgTable, vtg
from .offline_opt import max_weight_matching, offline_opt

__all__ = [
    "SKIP",
    "Action",
    "Instance",
    "MatchingState",
    "OptOnPolicy",
    "VtgTable",
    "make_instance",
    "max_weight_matching",
    "offline_opt",
    "run_episode",
    "validate_instance",
    "vtg",
]
