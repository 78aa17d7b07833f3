"""Greedy least-utility-drop placement with cascading eviction.

A new entry goes in at its highest-utility configuration. While a finite
tier is over capacity, the resident whose cheapest space-saving move loses
the least utility is recompressed in place or pushed to a lower tier; the
receiving tier is then settled the same way.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Optional, Sequence

from ..core import CacheEntry, CompressionMethod, ContextId, PlacementAction, UtilityParams
from ..quality import ContextProfile
from ..utility import ConfigCandidate, best_config, enumerate_candidates, score_candidate
from .store import PlacementError, StoreState


@dataclass(frozen=True)
class UpdateCandidate:
    entry: CacheEntry
    action: PlacementAction
    candidate: ConfigCandidate
    utility_drop: float
    bytes_freed: int


def _profile_for(profiles: Mapping[ContextId, ContextProfile], context: ContextId) -> ContextProfile:
    try:
        return profiles[context]
    except KeyError:
        raise PlacementError(f"no profile for resident context {context}") from None


def _entry_move(entry, tier_id, profile, spec, tiers, params, methods, grid):
    """(tie-break key, update) for the cheapest move of one resident, or None."""
    best = None
    current = score_candidate(profile, entry.config, spec, params, entry.frequency).utility
    for cand in enumerate_candidates(entry, profile, tiers, params, methods, grid):
        drop = current - cand.utility
        freed = entry.size if cand.tier != tier_id else entry.size - cand.compressed_size
        key = (round(drop, 12), -freed, entry.context, cand.sort_key())
        if best is None or key < best[0]:
            kind = "evict" if cand.tier != tier_id else "recompress"
            action = PlacementAction(entry.context, kind, cand.tier, cand.config)
            best = (key, UpdateCandidate(entry, action, cand, drop, freed))
    return best


def least_drop_update(
    store: StoreState,
    tier_id: int,
    profiles: Mapping[ContextId, ContextProfile],
    params: UtilityParams,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    cache: Optional[dict] = None,
) -> UpdateCandidate:
    """Cheapest space-saving move among the residents of ``tier_id``.

    Ties go to the move freeing more bytes, then to the smaller context id.
    ``cache`` memoizes per-entry moves; only share it while ``profiles``,
    ``params``, ``methods`` and ``grid`` stay fixed.
    """
    best = None
    spec = store.spec(tier_id)
    for entry in store.residents[tier_id].values():
        memo_key = (entry.context, entry.tier, entry.config, entry.frequency)
        if cache is not None and memo_key in cache:
            move = cache[memo_key]
        else:
            profile = _profile_for(profiles, entry.context)
            move = _entry_move(entry, tier_id, profile, spec, store.tiers, params, methods, grid)
            if cache is not None:
                cache[memo_key] = move
        if move is not None and (best is None or move[0] < best[0]):
            best = move
    if best is None:
        raise PlacementError(f"tier {tier_id} is over capacity and nothing on it can shrink")
    upd = best[1]
    # a cached move may carry an entry object older than the resident one
    current = store.residents[tier_id][upd.entry.context]
    return upd if upd.entry is current else replace(upd, entry=current)


def settle(
    store: StoreState,
    profiles: Mapping[ContextId, ContextProfile],
    params: UtilityParams,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    cache: Optional[dict] = None,
) -> list[PlacementAction]:
    """Resolve every overflow top-down; evictions only move entries downwards."""
    cache = {} if cache is None else cache
    actions = []
    for tier in store.tiers:
        while store.over_capacity(tier.tier_id):
            upd = least_drop_update(store, tier.tier_id, profiles, params, methods, grid, cache)
            store.put(replace(upd.entry, config=upd.candidate.config, tier=upd.candidate.tier))
            actions.append(upd.action)
    return actions


def insert(
    store: StoreState,
    profile: ContextProfile,
    profiles: Mapping[ContextId, ContextProfile],
    params: UtilityParams,
    *,
    frequency: Optional[float] = None,
    stamp: int = 0,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    select: str = "utility",
    cache: Optional[dict] = None,
) -> list[PlacementAction]:
    """Place a new context and return the full list of resulting actions."""
    if profile.context in store:
        raise PlacementError(f"{profile.context} is already resident")
    freq = profile.frequency if frequency is None else frequency
    cand = best_config(profile, store.tiers, params, methods, grid, freq, by=select)
    store.add(CacheEntry(profile.context, profile.original_size_bytes, cand.config, cand.tier, freq, stamp))
    if profile.context not in profiles:
        profiles = {**profiles, profile.context: profile}
    actions = [PlacementAction(profile.context, "insert", cand.tier, cand.config)]
    actions.extend(settle(store, profiles, params, methods, grid, cache))
    return actions


def rearrange(
    store: StoreState,
    profiles: Mapping[ContextId, ContextProfile],
    params: UtilityParams,
    *,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    select: str = "utility",
    keep_better: bool = True,
) -> tuple[StoreState, list[PlacementAction]]:
    """Re-place every resident context from scratch under ``profiles``.

    Contexts are reinserted in descending order of their best utility, so
    the most valuable ones claim the fast tiers first. Frequencies and
    recency stamps carry over. With ``keep_better`` the current placement is
    kept (and no actions are returned) when it scores at least as high as
    the fresh one under ``profiles``; the greedy pass alone can lose utility.
    """
    entries = list(store.entries())
    ranked = []
    for e in entries:
        profile = _profile_for(profiles, e.context)
        top = best_config(profile, store.tiers, params, methods, grid, e.frequency, by=select)
        ranked.append((-top.utility, e.context, e))
    ranked.sort(key=lambda x: x[:2])

    fresh = StoreState(store.tiers)
    cache: dict = {}
    actions = []
    for _, _, e in ranked:
        actions.extend(
            insert(
                fresh,
                profiles[e.context],
                profiles,
                params,
                frequency=e.frequency,
                stamp=e.last_access,
                methods=methods,
                grid=grid,
                select=select,
                cache=cache,
            )
        )
    if keep_better and entries:
        if total_utility(store, profiles, params) >= total_utility(fresh, profiles, params) and not store.overfull():
            return store.copy(), []
    return fresh, actions


def total_utility(
    store: StoreState,
    profiles: Mapping[ContextId, ContextProfile],
    params: UtilityParams,
) -> float:
    return sum(
        score_candidate(_profile_for(profiles, e.context), e.config, store.spec(e.tier), params, e.frequency).utility
        for e in store.entries()
    )
