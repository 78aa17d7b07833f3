"""Greedy-vs-exact comparison on small random placement instances."""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .core import GB, CacheEntry, CompressionConfig, TierSpec, UtilityParams
from .placement import PlacementError, StoreState, oracle_mckp, rearrange, total_utility
from .quality import ContextProfile

GRID_POOL = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9)
METHOD_POOL = ("keydiff", "knorm", "snapkv")


@dataclass(frozen=True)
class Instance:
    profiles: list[ContextProfile]
    tiers: tuple[TierSpec, ...]
    params: UtilityParams


@dataclass(frozen=True)
class GapRow:
    instance: int
    n_contexts: int
    greedy: float
    oracle: float
    gap: float
    relative_gap: float
    feasible: bool


def random_instance(
    rng: np.random.Generator,
    max_contexts: int = 6,
    n_ratios: int = 4,
    n_methods: int = 2,
) -> Instance:
    """Random instance: monotone quality tables, a finite fast tier, unlimited slow tier."""
    n = int(rng.integers(1, max_contexts + 1))
    grid = tuple(sorted(rng.choice(GRID_POOL, size=n_ratios - 1, replace=False).tolist())) + (1.0,)
    methods = METHOD_POOL[:n_methods]
    profiles = []
    for i in range(n):
        table = {}
        for m in methods:
            row = np.sort(rng.uniform(0.0, 1.0, size=len(grid) - 1))
            table[m] = tuple(row.tolist()) + (1.0,)
        profiles.append(
            ContextProfile(
                context=f"c{i}",
                original_size_bytes=int(rng.integers(1, 9)) * GB,
                ratio_grid=grid,
                methods=table,
                frequency=float(rng.integers(1, 6)),
            )
        )
    total = sum(p.original_size_bytes for p in profiles)
    tiers = (
        TierSpec(0, "fast", int(total * rng.uniform(0.15, 0.7)), 20 * GB),
        TierSpec(1, "slow", None, 2 * GB),
    )
    params = UtilityParams(alpha=float(rng.choice([0.5, 1.0, 2.0, 5.0])))
    return Instance(profiles, tiers, params)


def greedy_placement(inst: Instance) -> StoreState:
    """The heuristic's placement: every context rearranged from an empty store."""
    store = StoreState(inst.tiers)
    profiles = {p.context: p for p in inst.profiles}
    bottom = inst.tiers[-1].tier_id
    for p in inst.profiles:
        store.add(CacheEntry(p.context, p.original_size_bytes, CompressionConfig.uncompressed(), bottom, p.frequency))
    placed, _ = rearrange(store, profiles, inst.params)
    return placed


def solve_gap(inst: Instance, index: int = 0) -> GapRow:
    placed = greedy_placement(inst)
    profiles = {p.context: p for p in inst.profiles}
    try:
        placed.check()
        feasible = True
    except PlacementError:
        feasible = False
    greedy = total_utility(placed, profiles, inst.params)
    oracle = oracle_mckp(inst.profiles, inst.tiers, inst.params).total_utility
    gap = oracle - greedy
    rel = gap / abs(oracle) if oracle else 0.0
    return GapRow(index, len(inst.profiles), greedy, oracle, gap, rel, feasible)


def oracle_gap(seed: int, n_instances: int, **instance_kwargs) -> list[GapRow]:
    rng = np.random.default_rng(seed)
    return [solve_gap(random_instance(rng, **instance_kwargs), i) for i in range(n_instances)]


def summarize(rows: list[GapRow]) -> dict:
    if not rows:
        return {"n": 0}
    return {
        "n": len(rows),
        "all_feasible": all(r.feasible for r in rows),
        "greedy_le_oracle": all(r.gap >= -1e-9 for r in rows),
        "median_gap": statistics.median(r.gap for r in rows),
        "max_gap": max(r.gap for r in rows),
        "median_relative_gap": statistics.median(r.relative_gap for r in rows),
        "max_relative_gap": max(r.relative_gap for r in rows),
        "optimal_fraction": sum(1 for r in rows if r.gap <= 1e-9) / len(rows),
    }
