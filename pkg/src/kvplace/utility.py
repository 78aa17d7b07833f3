"""Utility scoring of (tier, method, ratio) configurations.

A configuration's utility is ``(alpha * quality - ttft) * frequency`` where
``ttft`` is the time to fetch the (compressed) KV cache from its tier.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

from .core import (
    NONE,
    CacheEntry,
    CompressionConfig,
    CompressionMethod,
    TierSpec,
    UtilityParams,
    ValidationError,
    compressed_size,
)
from .quality import ContextProfile, check_grid, quality_of


def load_time(size_bytes: float, tier: TierSpec, method: CompressionMethod = NONE) -> float:
    """Seconds to read ``size_bytes`` from ``tier`` and decompress it."""
    if size_bytes < 0:
        raise ValidationError("size must be >= 0")
    return tier.fixed_access_latency + size_bytes / tier.read_bandwidth + size_bytes * method.decompression_overhead


def prefill_time(n_tokens: int, params: UtilityParams) -> float:
    if n_tokens < 0:
        raise ValidationError("token count must be >= 0")
    return params.prefill_a * n_tokens + params.prefill_b * n_tokens * n_tokens


def utility(quality: float, ttft: float, frequency: float, alpha: float) -> float:
    return (alpha * quality - ttft) * frequency


@dataclass(frozen=True)
class ConfigCandidate:
    tier: int
    config: CompressionConfig
    compressed_size: int
    quality: float
    ttft: float
    utility: float
    frequency: float = 1.0

    def sort_key(self) -> tuple:
        """Ascending key whose minimum is the preferred candidate among equals."""
        return (-self.utility, -self.quality, self.tier, -self.config.ratio, self.config.label)


def config_grid(
    profile: ContextProfile,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
) -> list[CompressionConfig]:
    """Every (method, ratio) a profile can be scored at; ratio 1.0 appears once."""
    ratios = profile.ratio_grid if grid is None else check_grid(grid)
    names = [n for n in profile.method_names if methods is None or n in methods]
    out = []
    for r in ratios:
        if r == 1.0:
            out.append(CompressionConfig.uncompressed())
            continue
        for name in names:
            method = methods[name] if methods is not None else CompressionMethod(name)
            out.append(CompressionConfig(method, r))
    return out


def score_candidate(
    profile: ContextProfile,
    config: CompressionConfig,
    tier: TierSpec,
    params: UtilityParams,
    frequency: Optional[float] = None,
) -> ConfigCandidate:
    freq = profile.frequency if frequency is None else frequency
    size = compressed_size(profile.original_size_bytes, config.ratio)
    q = quality_of(profile, config)
    ttft = load_time(size, tier, config.method)
    return ConfigCandidate(tier.tier_id, config, size, q, ttft, utility(q, ttft, freq, params.alpha), freq)


def enumerate_candidates(
    entry: CacheEntry,
    profile: ContextProfile,
    tiers: Sequence[TierSpec],
    params: UtilityParams,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
) -> list[ConfigCandidate]:
    """Space-saving moves for a resident entry.

    Same-tier options must shrink the entry; options on any lower tier are
    kept at every ratio.
    """
    current = entry.size
    out = []
    for tier in tiers:
        if tier.tier_id < entry.tier:
            continue
        for config in config_grid(profile, methods, grid):
            cand = score_candidate(profile, config, tier, params, entry.frequency)
            if tier.tier_id == entry.tier and cand.compressed_size >= current:
                continue
            out.append(cand)
    return out


def all_candidates(
    profile: ContextProfile,
    tiers: Sequence[TierSpec],
    params: UtilityParams,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    frequency: Optional[float] = None,
) -> list[ConfigCandidate]:
    configs = config_grid(profile, methods, grid)
    return [score_candidate(profile, c, t, params, frequency) for t in tiers for c in configs]


def best_config(
    profile: ContextProfile,
    tiers: Sequence[TierSpec],
    params: UtilityParams,
    methods: Optional[Mapping[str, CompressionMethod]] = None,
    grid: Optional[Sequence[float]] = None,
    frequency: Optional[float] = None,
    by: str = "utility",
) -> ConfigCandidate:
    """Highest-utility configuration over the full (tier, method, ratio) space.

    Ties go to higher quality, then the faster tier, then the larger ratio,
    then method name. ``by="quality"`` ranks by quality first instead.
    """
    cands = all_candidates(profile, tiers, params, methods, grid, frequency)
    if not cands:
        raise ValidationError(f"{profile.context}: empty configuration space")
    if by == "quality":
        return min(cands, key=lambda c: (-c.quality,) + c.sort_key())
    if by != "utility":
        raise ValidationError(f"unknown selection rule {by!r}")
    return min(cands, key=ConfigCandidate.sort_key)
