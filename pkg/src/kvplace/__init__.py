"""Joint KV-cache compression and eviction placement over a tiered store."""

from .core import (
    GB,
    MB,
    CacheEntry,
    CompressionConfig,
    CompressionMethod,
    KVPlaceError,
    PlacementAction,
    TierSpec,
    UtilityParams,
    ValidationError,
    compressed_size,
    validate_hierarchy,
)
from .quality import ContextProfile, quality_of, synth_quality
from .utility import best_config, load_time, prefill_time, score_candidate, utility

__version__ = "0.1.0"
