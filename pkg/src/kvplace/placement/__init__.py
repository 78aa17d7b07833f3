from .baselines import baseline_lru, fixed_config, lru_cascade, lru_promote
from .greedy import UpdateCandidate, insert, least_drop_update, rearrange, settle, total_utility
from .oracle import DEFAULT_LIMIT, InstanceTooLarge, OracleResult, oracle_mckp
from .policies import (
    JointPolicy,
    LRUPolicy,
    Policy,
    baseline_fixed_compression,
    baseline_impress,
    parse_policy,
)
from .store import PlacementError, StoreState

__all__ = [
    "DEFAULT_LIMIT",
    "InstanceTooLarge",
    "JointPolicy",
    "LRUPolicy",
    "OracleResult",
    "PlacementError",
    "Policy",
    "StoreState",
    "UpdateCandidate",
    "baseline_fixed_compression",
    "baseline_impress",
    "baseline_lru",
    "fixed_config",
    "insert",
    "least_drop_update",
    "lru_cascade",
    "lru_promote",
    "oracle_mckp",
    "parse_policy",
    "rearrange",
    "settle",
    "total_utility",
]
