"""Domain types shared by the placement, quality and simulation modules.

Sizes are integer bytes. A compression ratio is the retained-size fraction
(compressed size / original size), so smaller ratios are more aggressive.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

ContextId = str

GB = 10**9
MB = 10**6


class KVPlaceError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(KVPlaceError, ValueError):
    """A value or configuration violates a documented constraint."""


@dataclass(frozen=True, order=True)
class CompressionMethod:
    name: str
    decompression_overhead: float = 0.0  # seconds per byte

    def __post_init__(self) -> None:
        if not self.name:
            raise ValidationError("compression method needs a name")
        if not math.isfinite(self.decompression_overhead) or self.decompression_overhead < 0:
            raise ValidationError(f"bad decompression overhead for {self.name!r}")


# Ratio 1.0 means "uncompressed" regardless of method; this label is the
# canonical method for that case.
NONE = CompressionMethod("none")

DEFAULT_METHODS: tuple[CompressionMethod, ...] = (
    CompressionMethod("keydiff"),
    CompressionMethod("knorm"),
    CompressionMethod("snapkv"),
)


def check_ratio(ratio: float) -> float:
    if not (isinstance(ratio, (int, float)) and 0.0 < ratio <= 1.0):
        raise ValidationError(f"compression ratio must be in (0, 1], got {ratio!r}")
    return float(ratio)


@dataclass(frozen=True)
class CompressionConfig:
    method: CompressionMethod
    ratio: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "ratio", check_ratio(self.ratio))
        if self.ratio == 1.0 and self.method != NONE:
            object.__setattr__(self, "method", NONE)

    @classmethod
    def uncompressed(cls) -> CompressionConfig:
        return cls(NONE, 1.0)

    @property
    def is_uncompressed(self) -> bool:
        return self.ratio == 1.0

    @property
    def label(self) -> str:
        return "none" if self.is_uncompressed else self.method.name

    def __str__(self) -> str:
        return f"{self.label}@{self.ratio:g}"


def compressed_size(original_size_bytes: int, ratio: float) -> int:
    """Size after compression, rounded half-up, never below one byte."""
    if original_size_bytes <= 0:
        raise ValidationError(f"original size must be positive, got {original_size_bytes}")
    ratio = check_ratio(ratio)
    return max(1, math.floor(original_size_bytes * ratio + 0.5))


@dataclass(frozen=True)
class TierSpec:
    """One storage level. ``capacity_bytes=None`` marks an unlimited tier."""

    tier_id: int
    name: str
    capacity_bytes: Optional[int]
    read_bandwidth: float  # bytes per second
    fixed_access_latency: float = 0.0

    @property
    def unlimited(self) -> bool:
        return self.capacity_bytes is None

    def fits(self, occupancy: int) -> bool:
        return self.capacity_bytes is None or occupancy <= self.capacity_bytes


def validate_hierarchy(tiers: Iterable[TierSpec]) -> tuple[TierSpec, ...]:
    """Sort tiers by id and check the structural rules of a hierarchy.

    Only the bottom tier may be unlimited. Bandwidth that does not strictly
    decrease going down the hierarchy is allowed but warned about.
    """
    ordered = tuple(sorted(tiers, key=lambda t: t.tier_id))
    if not ordered:
        raise ValidationError("hierarchy needs at least one tier")
    ids = [t.tier_id for t in ordered]
    if len(set(ids)) != len(ids):
        raise ValidationError(f"duplicate tier ids in {ids}")
    for pos, tier in enumerate(ordered):
        if not (tier.read_bandwidth > 0 and math.isfinite(tier.read_bandwidth)):
            raise ValidationError(f"tier {tier.tier_id} needs a positive bandwidth")
        if tier.fixed_access_latency < 0:
            raise ValidationError(f"tier {tier.tier_id} has negative access latency")
        if tier.capacity_bytes is not None and tier.capacity_bytes < 0:
            raise ValidationError(f"tier {tier.tier_id} has negative capacity")
        if tier.unlimited and pos != len(ordered) - 1:
            raise ValidationError(f"only the bottom tier may be unlimited (tier {tier.tier_id})")
    for upper, lower in zip(ordered, ordered[1:]):
        if lower.read_bandwidth >= upper.read_bandwidth:
            warnings.warn(
                f"tier {lower.tier_id} is not slower than tier {upper.tier_id}",
                stacklevel=2,
            )
    return ordered


@dataclass(frozen=True)
class CacheEntry:
    context: ContextId
    original_size_bytes: int
    config: CompressionConfig
    tier: int
    frequency: float = 1.0
    last_access: int = 0

    @property
    def size(self) -> int:
        return compressed_size(self.original_size_bytes, self.config.ratio)


ActionKind = Literal["insert", "recompress", "evict"]


@dataclass(frozen=True)
class PlacementAction:
    """One step of a placement decision: where a context ends up and how."""

    context: ContextId
    kind: ActionKind
    tier: int
    config: CompressionConfig

    def to_record(self, seq: int) -> dict:
        return {
            "seq": seq,
            "context": self.context,
            "kind": self.kind,
            "tier": self.tier,
            "method": self.config.label,
            "ratio": self.config.ratio,
        }


@dataclass(frozen=True)
class UtilityParams:
    alpha: float = 1.0  # quality weight, in seconds per unit quality
    prefill_a: float = 0.0  # seconds per token
    prefill_b: float = 0.0  # seconds per token squared
    bytes_per_token: float = 0.12 * MB

    def __post_init__(self) -> None:
        for name in ("alpha", "prefill_a", "prefill_b", "bytes_per_token"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValidationError(f"{name} must be finite and non-negative")
        if self.bytes_per_token <= 0:
            raise ValidationError("bytes_per_token must be positive")

    def tokens(self, size_bytes: int) -> int:
        return round(size_bytes / self.bytes_per_token)


def method_table(methods: Sequence[CompressionMethod]) -> dict[str, CompressionMethod]:
    if not methods:
        raise ValidationError("at least one compression method is required")
    table: dict[str, CompressionMethod] = {}
    for m in methods:
        if m.name in table:
            raise ValidationError(f"duplicate compression method {m.name!r}")
        table[m.name] = m
    return table


__all__ = [
    "ActionKind",
    "CacheEntry",
    "CompressionConfig",
    "CompressionMethod",
    "ContextId",
    "DEFAULT_METHODS",
    "GB",
    "KVPlaceError",
    "MB",
    "NONE",
    "PlacementAction",
    "TierSpec",
    "UtilityParams",
    "ValidationError",
    "check_ratio",
    "compressed_size",
    "method_table",
    "validate_hierarchy",
]
