"""Deterministic trace replay of a placement policy over a tier hierarchy.

Each request is a hit (load the resident, possibly compressed, KV cache from
its tier and prefill the query suffix) or a miss (prefill the whole context,
then hand the new KV cache to the policy). With drift tracking on, observed
quality is compared against the profile and stale contexts are re-profiled,
after which the joint policy rearranges every tier.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter, deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Mapping, Optional, Sequence

import numpy as np

from .core import CacheEntry, CompressionConfig, ContextId, KVPlaceError, PlacementAction, UtilityParams
from .placement import Policy, StoreState
from .quality import (
    ContextProfile,
    DriftState,
    ProfilingEvent,
    quality_of,
    record_observation,
    reprofile,
    should_reprofile,
)
from .utility import load_time, prefill_time

if TYPE_CHECKING:
    from .workload import ScenarioSpec

log = logging.getLogger(__name__)


class TraceError(KVPlaceError):
    """A trace is malformed or refers to unknown contexts."""


@dataclass(frozen=True)
class Request:
    timestamp: float
    context: ContextId
    n_new_tokens: int = 0


@dataclass(frozen=True)
class RequestRecord:
    request: Request
    tier: Optional[int]  # None on a miss
    config: Optional[CompressionConfig]
    ttft: float
    quality: float
    predicted_quality: float = 1.0
    penalty: float = 0.0

    @property
    def hit(self) -> bool:
        return self.tier is not None

    @property
    def outcome(self) -> str:
        return "hit" if self.hit else "miss"


@dataclass(frozen=True)
class DriftEvent:
    """At time ``t`` the true sensitivity of some contexts changes to ``s * scale + shift``."""

    t: float
    contexts: Optional[tuple[ContextId, ...]] = None
    fraction: float = 1.0
    scale: float = 1.0
    shift: float = 0.0


@dataclass(frozen=True)
class DriftConfig:
    reprofile: bool = False
    threshold: float = 0.3
    min_samples: int = 10
    window: Optional[int] = None
    profiling_duration: float = 2.0
    profiling_penalty: float = 0.5
    profile_noise: float = 0.0
    query_noise: float = 0.0
    max_batch: int = 8
    service_time: float = 1.0
    events: tuple[DriftEvent, ...] = ()


@dataclass(frozen=True)
class SimConfig:
    rearrange_interval: float = 0.0  # seconds; 0 disables periodic rearrangement
    contention: bool = False  # per-tier FIFO read channel


def lookup(store: StoreState, context: ContextId) -> Optional[CacheEntry]:
    """The resident entry for ``context`` (its ``tier`` says where), or ``None``."""
    return store.lookup(context)


class Simulator:
    """Single-threaded replay state: the store, both profile views and drift."""

    def __init__(
        self,
        policy: Policy,
        tiers,
        params: UtilityParams,
        profiles: Iterable[ContextProfile],
        *,
        drift: DriftConfig = DriftConfig(),
        sim: SimConfig = SimConfig(),
        seed: int = 0,
    ):
        self.policy = policy
        self.params = params
        self.store = StoreState(tiers)
        self.truth: dict[ContextId, ContextProfile] = {p.context: p for p in profiles}
        self.profiles: dict[ContextId, ContextProfile] = dict(self.truth)
        self.drift = drift
        self.sim = sim
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.stamp = 0
        self.actions: list[PlacementAction] = []
        self.events: list[ProfilingEvent] = []
        self.states: dict[ContextId, DriftState] = {}
        self._recent: deque[float] = deque()
        self._pending = sorted(drift.events, key=lambda e: e.t)
        self._busy_until: dict[int, float] = {}
        self._next_rearrange = sim.rearrange_interval if sim.rearrange_interval > 0 else math.inf

    @property
    def tracks_drift(self) -> bool:
        return self.drift.reprofile and getattr(self.policy, "uses_profiles", False)

    def preload(self, contexts: Sequence[ContextId]) -> None:
        for ctx in contexts:
            self.stamp += 1
            self._admit(self._profile(ctx), self.stamp)

    def _profile(self, ctx: ContextId) -> ContextProfile:
        try:
            return self.profiles[ctx]
        except KeyError:
            raise TraceError(f"unknown context {ctx!r}") from None

    def _admit(self, profile: ContextProfile, stamp: int) -> None:
        if not self.policy.stores or profile.context in self.store:
            return
        self.actions.extend(self.policy.admit(self.store, profile, self.profiles, frequency=1.0, stamp=stamp))
        if getattr(self.policy, "rearrange_on_admit", False):
            self._rearrange()

    def _rearrange(self) -> None:
        self.store, acts = self.policy.refresh(self.store, self.profiles)
        self.actions.extend(acts)

    def _apply_drift_events(self, t: float) -> None:
        while self._pending and self._pending[0].t <= t:
            ev = self._pending.pop(0)
            ids = sorted(self.truth)
            if ev.contexts is not None:
                chosen = [c for c in ids if c in set(ev.contexts)]
            else:
                k = int(round(ev.fraction * len(ids)))
                chosen = sorted(self.rng.choice(ids, size=k, replace=False).tolist()) if k else []
            for ctx in chosen:
                old = self.truth[ctx]
                if old.curve is None:
                    raise KVPlaceError(f"drift needs a sensitivity curve for {ctx}")
                curve = old.curve.scaled(ev.scale, ev.shift)
                self.truth[ctx] = replace(old, methods=curve.table(old.ratio_grid), curve=curve)
            log.info("drift at t=%.2f changed %d contexts", ev.t, len(chosen))

    def _gpu_free(self, t: float) -> bool:
        while self._recent and self._recent[0] + self.drift.service_time <= t:
            self._recent.popleft()
        return len(self._recent) < self.drift.max_batch

    def _load(self, entry: CacheEntry, t: float) -> float:
        spec = self.store.spec(entry.tier)
        seconds = load_time(entry.size, spec, entry.config.method) * self.policy.load_multiplier(entry)
        if not self.sim.contention:
            return seconds
        start = max(t, self._busy_until.get(entry.tier, -math.inf))
        self._busy_until[entry.tier] = start + seconds
        return start + seconds - t

    def serve(self, request: Request) -> RequestRecord:
        t = request.timestamp
        self._apply_drift_events(t)
        if t >= self._next_rearrange:
            if len(self.store):
                self._rearrange()
            step = self.sim.rearrange_interval
            self._next_rearrange = (math.floor(t / step) + 1) * step
        profile = self._profile(request.context)
        truth = self.truth[request.context]
        gpu_free = self._gpu_free(t)
        self.stamp += 1
        penalty = sum(ev.penalty for ev in self.events if ev.covers(t))
        entry = self.store.lookup(request.context) if self.policy.stores else None

        if entry is None:
            n_tokens = self.params.tokens(profile.original_size_bytes) + request.n_new_tokens
            ttft = prefill_time(n_tokens, self.params) + penalty
            record = RequestRecord(request, None, None, ttft, 1.0, 1.0, penalty)
            self._admit(profile, self.stamp)
        else:
            ttft = self._load(entry, t) + prefill_time(request.n_new_tokens, self.params) + penalty
            predicted = quality_of(profile, entry.config)
            true_q = quality_of(truth, entry.config)
            if self.drift.query_noise > 0 and not entry.config.is_uncompressed:
                true_q = float(np.clip(true_q + self.rng.normal(0.0, self.drift.query_noise), 0.0, 1.0))
            record = RequestRecord(request, entry.tier, entry.config, ttft, true_q, predicted, penalty)
            self.actions.extend(self.policy.touch(self.store, request.context, self.stamp))
            if self.tracks_drift:
                self._track(request.context, entry.config, predicted, true_q, t, gpu_free)
        self._recent.append(t)
        return record

    def _track(self, ctx: ContextId, config: CompressionConfig, predicted: float, true_q: float, t: float, gpu_free: bool) -> None:
        state = self.states.get(ctx) or DriftState(ctx, window=self.drift.window)
        state = record_observation(state, config, predicted, true_q)
        self.states[ctx] = state
        if not should_reprofile(state, self.drift.threshold, gpu_free, self.drift.min_samples):
            return
        new_profile, event = reprofile(
            self.truth[ctx],
            clock=t,
            noise=self.drift.profile_noise,
            seed=self.seed * 1_000_003 + len(self.events),
            duration=self.drift.profiling_duration,
            penalty=self.drift.profiling_penalty,
        )
        self.profiles[ctx] = new_profile
        self.events.append(event)
        self.states[ctx] = DriftState(ctx, window=self.drift.window)
        self._rearrange()


@dataclass
class ReplayMetrics:
    n_requests: int = 0
    ttft_sum: float = 0.0
    mean_ttft: float = 0.0
    p50_ttft: float = 0.0
    p90_ttft: float = 0.0
    p99_ttft: float = 0.0
    mean_quality: float = 0.0
    miss_fraction: float = 0.0
    tier_hit_fraction: dict[int, float] = field(default_factory=dict)
    placement_histogram: dict[str, int] = field(default_factory=dict)
    mean_ttft_in_profiling: Optional[float] = None
    mean_ttft_outside_profiling: Optional[float] = None
    n_reprofiles: int = 0
    series: list[tuple[float, float, float]] = field(default_factory=list)

    def summary(self) -> dict:
        doc = asdict(self)
        doc.pop("series")
        doc["tier_hit_fraction"] = {str(k): v for k, v in self.tier_hit_fraction.items()}
        return doc


def nearest_rank(sorted_values: Sequence[float], pct: float) -> float:
    if not sorted_values:
        return 0.0
    rank = max(1, math.ceil(pct / 100.0 * len(sorted_values)))
    return sorted_values[rank - 1]


def aggregate(records: Sequence[RequestRecord]) -> ReplayMetrics:
    n = len(records)
    if n == 0:
        return ReplayMetrics()
    ttfts = [r.ttft for r in records]
    ordered = sorted(ttfts)
    hits = Counter(r.tier for r in records if r.hit)
    hist = Counter(f"{r.tier}:{r.config.label}:{r.config.ratio:g}" for r in records if r.hit)
    inside = [r.ttft for r in records if r.penalty > 0]
    outside = [r.ttft for r in records if r.penalty == 0]
    return ReplayMetrics(
        n_requests=n,
        ttft_sum=math.fsum(ttfts),
        mean_ttft=math.fsum(ttfts) / n,
        p50_ttft=nearest_rank(ordered, 50),
        p90_ttft=nearest_rank(ordered, 90),
        p99_ttft=nearest_rank(ordered, 99),
        mean_quality=math.fsum(r.quality for r in records) / n,
        miss_fraction=sum(1 for r in records if not r.hit) / n,
        tier_hit_fraction={tier: hits[tier] / n for tier in sorted(hits)},
        placement_histogram=dict(sorted(hist.items())),
        mean_ttft_in_profiling=math.fsum(inside) / len(inside) if inside else None,
        mean_ttft_outside_profiling=math.fsum(outside) / len(outside) if outside else None,
        series=[(r.request.timestamp, r.ttft, r.quality) for r in records],
    )


def run(
    scenario: ScenarioSpec,
    policy: Policy,
    trace: Optional[Sequence[Request]] = None,
    seed: Optional[int] = None,
) -> tuple[list[RequestRecord], ReplayMetrics, Simulator]:
    """Like :func:`replay`, also returning the finished simulator."""
    sim = Simulator(
        policy,
        scenario.tiers,
        scenario.params,
        scenario.profiles,
        drift=scenario.drift,
        sim=scenario.sim,
        seed=scenario.seed if seed is None else seed,
    )
    sim.preload(scenario.preload)
    last = -math.inf
    records = []
    for req in scenario.trace if trace is None else trace:
        if req.timestamp < last:
            raise TraceError(f"trace timestamps go backwards at t={req.timestamp}")
        last = req.timestamp
        records.append(sim.serve(req))
    metrics = aggregate(records)
    metrics.n_reprofiles = len(sim.events)
    return records, metrics, sim


def replay(
    trace: Sequence[Request],
    policy: Policy,
    scenario: ScenarioSpec,
    seed: Optional[int] = None,
) -> tuple[list[RequestRecord], ReplayMetrics]:
    """Run ``trace`` through ``policy`` on ``scenario``; deterministic per seed."""
    records, metrics, _ = run(scenario, policy, trace, seed)
    return records, metrics


CSV_FIELDS = ("ts", "context", "outcome", "tier", "method", "ratio", "ttft", "quality")


def write_records_csv(records: Iterable[RequestRecord], path: Path | str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIELDS)
        for r in records:
            writer.writerow(
                [
                    repr(r.request.timestamp),
                    r.request.context,
                    r.outcome,
                    "" if r.tier is None else r.tier,
                    "" if r.config is None else r.config.label,
                    "" if r.config is None else repr(r.config.ratio),
                    repr(r.ttft),
                    repr(r.quality),
                ]
            )


def write_summary_json(metrics: ReplayMetrics, path: Path | str, extra: Optional[Mapping] = None) -> None:
    doc = metrics.summary()
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_actions_jsonl(actions: Iterable[PlacementAction], path: Path | str) -> None:
    with open(path, "w") as fh:
        for seq, action in enumerate(actions):
            fh.write(json.dumps(action.to_record(seq), sort_keys=True) + "\n")
