"""Reference policies: eviction-only LRU, fixed compression + LRU, and a
top-X% token-keeping scheme with chunked loading."""

from __future__ import annotations

from dataclasses import replace

from ..core import CacheEntry, CompressionConfig, CompressionMethod, PlacementAction, ValidationError, check_ratio
from .store import StoreState


def _lru_victim(store: StoreState, tier_id: int) -> CacheEntry:
    return min(store.residents[tier_id].values(), key=lambda e: (e.last_access, e.context))


def lru_cascade(store: StoreState) -> list[PlacementAction]:
    """Push least-recently-used entries down until every finite tier fits."""
    actions = []
    for tier in store.tiers:
        while store.over_capacity(tier.tier_id):
            lower = store.next_tier(tier.tier_id)
            if lower is None:
                raise ValidationError(f"bottom tier {tier.tier_id} is finite and full")
            victim = _lru_victim(store, tier.tier_id)
            store.put(replace(victim, tier=lower))
            actions.append(PlacementAction(victim.context, "evict", lower, victim.config))
    return actions


def baseline_lru(store: StoreState, entry: CacheEntry) -> list[PlacementAction]:
    """Insert ``entry`` at the top tier as given, then cascade LRU evictions."""
    entry = replace(entry, tier=store.top)
    store.add(entry)
    return [PlacementAction(entry.context, "insert", entry.tier, entry.config)] + lru_cascade(store)


def lru_promote(store: StoreState, context: str) -> list[PlacementAction]:
    """Move a resident entry back to the top tier after a hit, then cascade."""
    entry = store.lookup(context)
    if entry is None or entry.tier == store.top:
        return []
    store.put(replace(entry, tier=store.top))
    return [PlacementAction(context, "insert", store.top, entry.config)] + lru_cascade(store)


def fixed_config(method: CompressionMethod | str | None, ratio: float) -> CompressionConfig:
    ratio = check_ratio(ratio)
    if ratio == 1.0 or method is None:
        if ratio != 1.0:
            raise ValidationError("a compression method is required for ratio < 1")
        return CompressionConfig.uncompressed()
    if isinstance(method, str):
        method = CompressionMethod(method)
    return CompressionConfig(method, ratio)
