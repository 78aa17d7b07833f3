"""Exact multi-choice knapsack solver for small placement instances.

Each context picks exactly one (tier, method, ratio) candidate; the sum of
sizes on every finite tier must fit its capacity. Depth-first branch and
bound over candidates sorted by utility, with an optimistic bound from the
best remaining choice per context.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from ..core import CompressionMethod, ContextId, KVPlaceError, TierSpec, UtilityParams, validate_hierarchy
from ..quality import ContextProfile
from ..utility import ConfigCandidate, all_candidates

DEFAULT_LIMIT = 10**7


class InstanceTooLarge(KVPlaceError):
    """The exhaustive search space exceeds the configured bound."""


@dataclass(frozen=True)
class OracleResult:
    assignment: dict[ContextId, ConfigCandidate]
    total_utility: float
    nodes: int


def _prune_dominated(cands: list[ConfigCandidate], tiers: dict[int, TierSpec]) -> list[ConfigCandidate]:
    # A candidate is redundant if another one on the same tier is no larger and
    # no worse, or if an unlimited-tier candidate is no worse.
    free_best = max((c.utility for c in cands if tiers[c.tier].unlimited), default=-math.inf)
    keep = []
    for c in sorted(cands, key=ConfigCandidate.sort_key):
        if not tiers[c.tier].unlimited:
            if free_best >= c.utility:
                continue
            if any(k.tier == c.tier and k.compressed_size <= c.compressed_size and k.utility >= c.utility for k in keep):
                continue
        elif any(tiers[k.tier].unlimited for k in keep):
            continue
        keep.append(c)
    return keep


def oracle_mckp(
    profiles: Sequence[ContextProfile],
    tiers: Sequence[TierSpec],
    params: UtilityParams,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    limit: int = DEFAULT_LIMIT,
) -> OracleResult:
    """Maximum-total-utility feasible assignment, or ``InstanceTooLarge``."""
    tiers = validate_hierarchy(tiers)
    specs = {t.tier_id: t for t in tiers}
    raw = {p.context: all_candidates(p, tiers, params, methods, grid) for p in profiles}
    space = math.prod(len(c) for c in raw.values())
    if space > limit:
        raise InstanceTooLarge(f"search space {space} exceeds limit {limit}")
    if not profiles:
        return OracleResult({}, 0.0, 0)

    order = sorted(raw, key=lambda ctx: (-max(c.compressed_size for c in raw[ctx]), ctx))
    choices = [_prune_dominated(raw[ctx], specs) for ctx in order]
    suffix_best = [0.0] * (len(order) + 1)
    for i in range(len(order) - 1, -1, -1):
        suffix_best[i] = suffix_best[i + 1] + choices[i][0].utility

    capacity = {t.tier_id: t.capacity_bytes for t in tiers if not t.unlimited}
    used = dict.fromkeys(capacity, 0)
    picked: list[Optional[ConfigCandidate]] = [None] * len(order)
    best_total = -math.inf
    best_pick: list[ConfigCandidate] = []
    nodes = 0

    def dfs(i: int, total: float) -> None:
        nonlocal best_total, best_pick, nodes
        nodes += 1
        if i == len(order):
            if total > best_total:
                best_total = total
                best_pick = list(picked)
            return
        for cand in choices[i]:
            if total + cand.utility + suffix_best[i + 1] <= best_total:
                break  # candidates are sorted by utility, so the rest cannot help
            if cand.tier in capacity:
                if used[cand.tier] + cand.compressed_size > capacity[cand.tier]:
                    continue
                used[cand.tier] += cand.compressed_size
            picked[i] = cand
            dfs(i + 1, total + cand.utility)
            if cand.tier in capacity:
                used[cand.tier] -= cand.compressed_size

    dfs(0, 0.0)
    if not best_pick:
        raise KVPlaceError("no feasible assignment exists")
    return OracleResult(dict(zip(order, best_pick)), best_total, nodes)
