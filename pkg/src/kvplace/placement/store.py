from __future__ import annotations

from typing import Iterator, Optional, Sequence

from ..core import CacheEntry, ContextId, KVPlaceError, TierSpec, validate_hierarchy


class PlacementError(KVPlaceError):
    """The placement state or request is inconsistent."""


class StoreState:
    """Resident KV-cache entries per tier, with byte occupancy.

    Entries are immutable; moving or recompressing one replaces it. Each tier
    keeps its residents in insertion order.
    """

    def __init__(self, tiers: Sequence[TierSpec]):
        self.tiers = validate_hierarchy(tiers)
        self._specs = {t.tier_id: t for t in self.tiers}
        self.residents: dict[int, dict[ContextId, CacheEntry]] = {t.tier_id: {} for t in self.tiers}
        self.occupancy: dict[int, int] = {t.tier_id: 0 for t in self.tiers}
        self.index: dict[ContextId, int] = {}

    def __contains__(self, context: ContextId) -> bool:
        return context in self.index

    def __len__(self) -> int:
        return len(self.index)

    def spec(self, tier_id: int) -> TierSpec:
        return self._specs[tier_id]

    @property
    def top(self) -> int:
        return self.tiers[0].tier_id

    def next_tier(self, tier_id: int) -> Optional[int]:
        ids = [t.tier_id for t in self.tiers]
        pos = ids.index(tier_id)
        return ids[pos + 1] if pos + 1 < len(ids) else None

    def lookup(self, context: ContextId) -> Optional[CacheEntry]:
        tier = self.index.get(context)
        return None if tier is None else self.residents[tier][context]

    def entries(self) -> Iterator[CacheEntry]:
        for t in self.tiers:
            yield from self.residents[t.tier_id].values()

    def add(self, entry: CacheEntry) -> None:
        if entry.context in self.index:
            raise PlacementError(f"{entry.context} is already resident")
        if entry.tier not in self._specs:
            raise PlacementError(f"unknown tier {entry.tier}")
        self.residents[entry.tier][entry.context] = entry
        self.occupancy[entry.tier] += entry.size
        self.index[entry.context] = entry.tier

    def remove(self, context: ContextId) -> CacheEntry:
        tier = self.index.pop(context)
        entry = self.residents[tier].pop(context)
        self.occupancy[tier] -= entry.size
        return entry

    def put(self, entry: CacheEntry) -> None:
        """Replace the resident entry for ``entry.context`` in place or across tiers."""
        old_tier = self.index.get(entry.context)
        if old_tier == entry.tier:
            old = self.residents[old_tier][entry.context]
            self.residents[old_tier][entry.context] = entry
            self.occupancy[old_tier] += entry.size - old.size
            return
        if old_tier is not None:
            self.remove(entry.context)
        self.add(entry)

    def over_capacity(self, tier_id: int) -> bool:
        return not self._specs[tier_id].fits(self.occupancy[tier_id])

    def overfull(self) -> list[int]:
        return [t.tier_id for t in self.tiers if self.over_capacity(t.tier_id)]

    def check(self) -> None:
        """Raise if an internal invariant or a capacity limit is violated."""
        seen: set[ContextId] = set()
        for t in self.tiers:
            entries = self.residents[t.tier_id]
            if sum(e.size for e in entries.values()) != self.occupancy[t.tier_id]:
                raise PlacementError(f"occupancy drift on tier {t.tier_id}")
            if not t.fits(self.occupancy[t.tier_id]):
                raise PlacementError(f"tier {t.tier_id} over capacity")
            for ctx, e in entries.items():
                if ctx in seen or e.tier != t.tier_id or self.index.get(ctx) != t.tier_id:
                    raise PlacementError(f"index mismatch for {ctx}")
                seen.add(ctx)
        if seen != set(self.index):
            raise PlacementError("index holds contexts that are not resident")

    def copy(self) -> StoreState:
        other = StoreState.__new__(StoreState)
        other.tiers = self.tiers
        other._specs = self._specs
        other.residents = {k: dict(v) for k, v in self.residents.items()}
        other.occupancy = dict(self.occupancy)
        other.index = dict(self.index)
        return other

    def placement(self) -> dict[ContextId, tuple[int, str, float]]:
        """Snapshot of where each context sits and how it is compressed."""
        return {e.context: (e.tier, e.config.label, e.config.ratio) for e in self.entries()}
