"""Policy objects the simulator drives: what happens on a miss, on a hit, and
after profiles change."""

from __future__ import annotations

from dataclasses import replace
from typing import Mapping, Optional, Sequence

from ..core import (
    CacheEntry,
    CompressionConfig,
    CompressionMethod,
    ContextId,
    PlacementAction,
    UtilityParams,
    ValidationError,
    check_ratio,
)
from ..quality import ContextProfile
from .baselines import baseline_lru, fixed_config, lru_promote
from .greedy import insert, rearrange
from .store import StoreState

Profiles = Mapping[ContextId, ContextProfile]


class Policy:
    """Base policy: stores nothing, so every request is a full prefill."""

    name = "prefill"
    stores = False
    uses_profiles = False
    rearrange_on_admit = False
    chunk_overhead = 1.0

    def admit(self, store: StoreState, profile: ContextProfile, profiles: Profiles, *, frequency: float, stamp: int) -> list[PlacementAction]:
        return []

    def touch(self, store: StoreState, context: ContextId, stamp: int) -> list[PlacementAction]:
        entry = store.lookup(context)
        if entry is not None:
            store.put(replace(entry, frequency=entry.frequency + 1, last_access=stamp))
        return []

    def refresh(self, store: StoreState, profiles: Profiles) -> tuple[StoreState, list[PlacementAction]]:
        return store, []

    def load_multiplier(self, entry: CacheEntry) -> float:
        return 1.0


class JointPolicy(Policy):
    """Utility-driven joint compression and eviction."""

    stores = True
    uses_profiles = True

    def __init__(
        self,
        params: UtilityParams,
        methods: Optional[Mapping[str, CompressionMethod]] = None,
        grid: Optional[Sequence[float]] = None,
        select: str = "utility",
        miss_store: str = "direct",
    ):
        if miss_store not in ("direct", "bottom_then_rearrange"):
            raise ValidationError(f"unknown miss_store mode {miss_store!r}")
        self.params = params
        self.methods = methods
        self.grid = grid
        self.select = select
        self.miss_store = miss_store
        self.rearrange_on_admit = miss_store == "bottom_then_rearrange"
        self.name = "joint" if select == "utility" else "joint-quality"

    def admit(self, store, profile, profiles, *, frequency, stamp):
        if self.miss_store == "direct":
            return insert(
                store, profile, profiles, self.params,
                frequency=frequency, stamp=stamp, methods=self.methods, grid=self.grid, select=self.select,
            )
        bottom = store.tiers[-1].tier_id
        store.add(CacheEntry(profile.context, profile.original_size_bytes, CompressionConfig.uncompressed(), bottom, frequency, stamp))
        return [PlacementAction(profile.context, "insert", bottom, CompressionConfig.uncompressed())]

    def refresh(self, store, profiles):
        return rearrange(store, profiles, self.params, methods=self.methods, grid=self.grid, select=self.select)


class LRUPolicy(Policy):
    """Every entry stored at one fixed configuration; LRU eviction between tiers.

    Hits on lower tiers are promoted back to the top tier. ``chunk_overhead``
    multiplies the load time of compressed entries (chunked partial loading).
    """

    stores = True

    def __init__(
        self,
        method: CompressionMethod | str | None = None,
        ratio: float = 1.0,
        chunk_overhead: float = 1.0,
        promote: bool = True,
        name: Optional[str] = None,
    ):
        if chunk_overhead < 1.0:
            raise ValidationError("chunk overhead multiplier must be >= 1")
        self.config = fixed_config(method, ratio)
        self.chunk_overhead = chunk_overhead
        self.promote = promote
        self.name = name or ("lru" if self.config.is_uncompressed else f"fixed:{self.config.label}:{self.config.ratio:g}")

    def admit(self, store, profile, profiles, *, frequency, stamp):
        entry = CacheEntry(profile.context, profile.original_size_bytes, self.config, store.top, frequency, stamp)
        return baseline_lru(store, entry)

    def touch(self, store, context, stamp):
        super().touch(store, context, stamp)
        return lru_promote(store, context) if self.promote else []

    def load_multiplier(self, entry):
        return self.chunk_overhead if not entry.config.is_uncompressed else 1.0


def baseline_fixed_compression(method: CompressionMethod | str, ratio: float) -> LRUPolicy:
    return LRUPolicy(method, ratio)


def baseline_impress(keep_fraction: float, method: CompressionMethod | str = "snapkv", chunk_overhead: float = 1.0) -> LRUPolicy:
    """Keep the top ``keep_fraction`` of tokens; loads pay a chunking overhead."""
    ratio = check_ratio(keep_fraction)
    return LRUPolicy(method, ratio, chunk_overhead=chunk_overhead, name=f"impress:{ratio:g}")


def parse_policy(spec: str, params: UtilityParams, **joint_kwargs) -> Policy:
    """Build a policy from ``joint | lru | prefill | fixed:<method>:<ratio> | impress:<X>[:<overhead>[:<method>]]``."""
    parts = spec.split(":")
    try:
        if parts[0] == "joint" and len(parts) == 1:
            return JointPolicy(params, **joint_kwargs)
        if parts[0] == "lru" and len(parts) == 1:
            return LRUPolicy()
        if parts[0] == "prefill" and len(parts) == 1:
            return Policy()
        if parts[0] == "fixed" and len(parts) == 3:
            return baseline_fixed_compression(parts[1], float(parts[2]))
        if parts[0] == "impress" and len(parts) in (2, 3, 4):
            overhead = float(parts[2]) if len(parts) >= 3 else 1.0
            method = parts[3] if len(parts) == 4 else "snapkv"
            return baseline_impress(float(parts[1]), method, chunk_overhead=overhead)
    except ValueError as exc:
        raise ValidationError(f"bad policy {spec!r}: {exc}") from None
    raise ValidationError(f"unknown policy {spec!r}; expected joint, lru, prefill, fixed:<method>:<ratio> or impress:<X>")
