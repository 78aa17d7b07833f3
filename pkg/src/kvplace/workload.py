"""Synthetic contexts and traces, trace files, and scenario documents."""

from __future__ import annotations

import copy
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import DEFAULT_METHODS, CompressionMethod, TierSpec, UtilityParams, ValidationError, method_table, validate_hierarchy
from .quality import ContextProfile, ProfileParams, gen_profiles, profile_from_json, read_profiles
from .simulate import DriftConfig, DriftEvent, Request, SimConfig, TraceError

DEFAULT_GRID = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0)
TOKEN_BOUNDS = (1_000, 200_000)


@dataclass(frozen=True)
class DatasetPreset:
    name: str
    mean_tokens: float
    std_tokens: float
    median_sensitivity: Optional[float] = None  # None: uniform prior


# Context lengths (mean, std tokens) for the long-context benchmark suite and
# median keydiff sensitivities at ratio 0.9 where they are known.
PRESETS: dict[str, DatasetPreset] = {
    p.name: p
    for p in (
        DatasetPreset("narrativeqa", 108_000, 55_000, 0.340),
        DatasetPreset("qasper", 24_000, 12_000, 0.759),
        DatasetPreset("multifieldqa_en", 29_000, 15_000),
        DatasetPreset("hotpotqa", 57_000, 18_000),
        DatasetPreset("2wikimqa", 30_000, 15_000, 0.681),
        DatasetPreset("musique", 69_000, 9_000),
        DatasetPreset("gov_report", 54_000, 34_000),
        DatasetPreset("qmsum", 57_000, 27_000),
        DatasetPreset("multi_news", 12_000, 10_000, 0.738),
        DatasetPreset("trec", 30_000, 12_000),
        DatasetPreset("triviaqa", 47_000, 25_000, 0.392),
        DatasetPreset("samsum", 34_000, 17_000, 0.676),
    )
}
UNIFORM_PRIOR = (0.3, 0.8)
DEFAULT_CV = 0.2


def preset(name: str) -> DatasetPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValidationError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}") from None


def _split_counts(n: int, weights: Mapping[str, float]) -> dict[str, int]:
    total = sum(weights.values())
    if total <= 0 or any(w < 0 for w in weights.values()):
        raise ValidationError("preset weights must be non-negative with a positive sum")
    exact = {k: n * w / total for k, w in weights.items()}
    counts = {k: math.floor(v) for k, v in exact.items()}
    rest = n - sum(counts.values())
    for k in sorted(exact, key=lambda k: (counts[k] - exact[k], k))[:rest]:
        counts[k] += 1
    return counts


def gen_contexts(
    seed: int,
    presets: Union[str, Mapping[str, float]],
    n_contexts: int,
    *,
    bytes_per_token: float = 0.12e6,
    ratio_grid: Sequence[float] = DEFAULT_GRID,
    cv: float = DEFAULT_CV,
    k: float = 1.0,
    median: Optional[float] = None,
    std_scale: float = 1.0,
    frequency: Union[float, tuple[float, float]] = 1.0,
    method_factors: Optional[Mapping[str, float]] = None,
) -> list[ContextProfile]:
    """Profiles for one preset, or a weighted mix of presets.

    Token counts are normal with the preset's mean and std (times
    ``std_scale``), truncated to [1K, 200K] tokens. ``median`` replaces the
    presets' median sensitivity (and the uniform prior) when given.
    """
    if bytes_per_token <= 0 or cv < 0 or std_scale < 0:
        raise ValidationError("invalid distribution parameters")
    weights = {presets: 1.0} if isinstance(presets, str) else dict(presets)
    counts = _split_counts(n_contexts, weights)
    out: list[ContextProfile] = []
    for idx, name in enumerate(sorted(counts)):
        p = preset(name)
        extra = {} if method_factors is None else {"method_factors": dict(method_factors)}
        params = ProfileParams(
            n_contexts=counts[name],
            median=median if median is not None else (p.median_sensitivity or 0.5),
            uniform=UNIFORM_PRIOR if median is None and p.median_sensitivity is None else None,
            cv=cv,
            k=k,
            size_mean_bytes=p.mean_tokens * bytes_per_token,
            size_std_bytes=p.std_tokens * std_scale * bytes_per_token,
            size_bounds=(TOKEN_BOUNDS[0] * bytes_per_token, TOKEN_BOUNDS[1] * bytes_per_token),
            frequency=frequency,
            ratio_grid=tuple(ratio_grid),
            id_prefix=f"{name}-",
            **extra,
        )
        out.extend(gen_profiles([seed, idx] if len(counts) > 1 else seed, params))
    return out


def gen_trace(
    seed: int,
    contexts: Union[int, Sequence[str]],
    zipf_exponent: float,
    arrival_rate: float,
    duration: float,
    *,
    n_new_tokens: int = 0,
    shuffle: bool = True,
) -> list[Request]:
    """Poisson arrivals over ``[0, duration)`` with Zipf context popularity.

    With ``shuffle`` the popularity ranks are a seeded permutation of the
    contexts rather than their listed order.
    """
    if arrival_rate <= 0 or duration <= 0:
        raise ValidationError("arrival rate and duration must be positive")
    if zipf_exponent < 0:
        raise ValidationError("zipf exponent must be >= 0")
    ids = [f"ctx{i:03d}" for i in range(contexts)] if isinstance(contexts, int) else list(contexts)
    if not ids:
        raise ValidationError("need at least one context")
    rng = np.random.default_rng(seed)
    n = rng.poisson(arrival_rate * duration)
    times = np.sort(rng.uniform(0.0, duration, size=n))
    weights = 1.0 / np.arange(1, len(ids) + 1) ** zipf_exponent
    ranked = [ids[i] for i in rng.permutation(len(ids))] if shuffle else ids
    picks = rng.choice(len(ids), size=n, p=weights / weights.sum())
    return [Request(float(t), ranked[i], n_new_tokens) for t, i in zip(times, picks)]


def serialize_trace(trace: Iterable[Request], sink: Union[str, Path, IO[str]]) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            serialize_trace(trace, fh)
        return
    for r in trace:
        sink.write(json.dumps({"t": r.timestamp, "context_id": r.context, "n_new_tokens": r.n_new_tokens}) + "\n")


def _trace_record(doc: Any, where: str) -> Request:
    if not isinstance(doc, dict):
        raise TraceError(f"{where}: expected a JSON object")
    for key in ("t", "context_id"):
        if key not in doc:
            raise TraceError(f"{where}: missing field {key!r}")
    t, ctx, extra = doc["t"], doc["context_id"], doc.get("n_new_tokens", 0)
    if isinstance(t, bool) or not isinstance(t, (int, float)) or not math.isfinite(t):
        raise TraceError(f"{where}: 't' must be a finite number")
    if not isinstance(ctx, str) or not ctx:
        raise TraceError(f"{where}: 'context_id' must be a non-empty string")
    if isinstance(extra, bool) or not isinstance(extra, int) or extra < 0:
        raise TraceError(f"{where}: 'n_new_tokens' must be a non-negative integer")
    return Request(float(t), ctx, extra)


def trace_from_records(docs: Iterable[Any], origin: str = "trace") -> list[Request]:
    trace = [_trace_record(doc, f"{origin} record {i}") for i, doc in enumerate(docs, 1)]
    return _sorted_trace(trace, origin)


def _sorted_trace(trace: list[Request], origin: str) -> list[Request]:
    if any(b.timestamp < a.timestamp for a, b in zip(trace, trace[1:])):
        warnings.warn(f"{origin}: timestamps out of order; sorting", stacklevel=3)
        trace = sorted(trace, key=lambda r: r.timestamp)
    return trace


def parse_trace(source: Union[str, Path, IO[str]]) -> list[Request]:
    """Read a JSONL trace of ``{t, context_id, n_new_tokens?}`` records."""
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return parse_trace(fh)
    trace = []
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise TraceError(f"line {lineno}: invalid JSON ({exc.msg})") from None
        trace.append(_trace_record(doc, f"line {lineno}"))
    return _sorted_trace(trace, "trace")


# ---------------------------------------------------------------------------
# scenario documents
# ---------------------------------------------------------------------------


@dataclass
class ScenarioSpec:
    tiers: tuple[TierSpec, ...]
    params: UtilityParams
    profiles: list[ContextProfile]
    trace: list[Request]
    methods: dict[str, CompressionMethod] = field(default_factory=lambda: method_table(DEFAULT_METHODS))
    ratio_grid: Optional[tuple[float, ...]] = None
    preload: list[str] = field(default_factory=list)
    policy: str = "joint"
    select: str = "utility"
    miss_store: str = "direct"
    drift: DriftConfig = field(default_factory=DriftConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    seed: int = 0

    def __post_init__(self) -> None:
        known = {p.context for p in self.profiles}
        if len(known) != len(self.profiles):
            raise ValidationError("duplicate context ids in profiles")
        missing = sorted({r.context for r in self.trace} - known) + sorted(set(self.preload) - known)
        if missing:
            raise ValidationError(f"trace or preload refers to unknown contexts: {missing[:5]}")

    def joint_kwargs(self) -> dict:
        return {"methods": self.methods, "grid": self.ratio_grid, "select": self.select, "miss_store": self.miss_store}


def set_dotted(doc: dict, key: str, value: Any) -> None:
    """Assign ``value`` at a dotted path; integer parts index into lists."""
    parts = key.split(".")
    node: Any = doc
    for part in parts[:-1]:
        if isinstance(node, list):
            node = node[int(part)]
        else:
            node = node.setdefault(part, {})
    last = parts[-1]
    if isinstance(node, list):
        node[int(last)] = value
    else:
        node[last] = value


def parse_override(text: str) -> tuple[str, Any]:
    if "=" not in text:
        raise ValidationError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _tiers_from(docs: Sequence[Mapping], total_bytes: int) -> tuple[TierSpec, ...]:
    tiers = []
    for i, d in enumerate(docs):
        cap = d.get("capacity_bytes")
        if "capacity_fraction" in d:
            cap = int(round(float(d["capacity_fraction"]) * total_bytes))
        elif cap in (None, "unlimited"):
            cap = None
        else:
            cap = int(cap)
        tiers.append(
            TierSpec(
                tier_id=int(d.get("tier_id", i)),
                name=str(d.get("name", f"tier{i}")),
                capacity_bytes=cap,
                read_bandwidth=float(d["read_bandwidth"]),
                fixed_access_latency=float(d.get("fixed_access_latency", 0.0)),
            )
        )
    return validate_hierarchy(tiers)


def _profiles_from(spec: Any, base: Path, seed: int, grid: Optional[Sequence[float]], bpt: float) -> list[ContextProfile]:
    if isinstance(spec, list):
        return [profile_from_json(d) for d in spec]
    if not isinstance(spec, dict):
        raise ValidationError("'profiles' must be a list, {file: ...} or {preset: ...}")
    if "file" in spec:
        return read_profiles(base / spec["file"])
    if "preset" in spec:
        opts = {k: v for k, v in spec.items() if k not in ("preset", "n_contexts", "seed")}
        if "frequency" in opts and isinstance(opts["frequency"], list):
            opts["frequency"] = tuple(opts["frequency"])
        return gen_contexts(
            int(spec.get("seed", seed)),
            spec["preset"],
            int(spec["n_contexts"]),
            bytes_per_token=bpt,
            ratio_grid=tuple(grid) if grid else DEFAULT_GRID,
            **opts,
        )
    raise ValidationError("'profiles' object needs 'file' or 'preset'")


def _trace_from(spec: Any, base: Path, seed: int, contexts: Sequence[str]) -> list[Request]:
    if spec is None:
        return []
    if isinstance(spec, list):
        return trace_from_records(spec)
    if "file" in spec:
        return parse_trace(base / spec["file"])
    if "generate" in spec:
        g = dict(spec["generate"])
        return gen_trace(
            int(g.pop("seed", seed)),
            list(contexts),
            float(g.pop("zipf_exponent", 1.0)),
            float(g.pop("arrival_rate")),
            float(g.pop("duration")),
            **g,
        )
    raise ValidationError("'trace' object needs 'file' or 'generate'")


def scenario_from_dict(doc: Mapping, base: Union[str, Path] = ".") -> ScenarioSpec:
    base = Path(base)
    try:
        seed = int(doc.get("seed", 0))
        params = UtilityParams(**doc.get("params", {}))
        methods = method_table(
            [CompressionMethod(**m) for m in doc["methods"]] if "methods" in doc else list(DEFAULT_METHODS)
        )
        grid = tuple(doc["ratio_grid"]) if doc.get("ratio_grid") else None
        profiles = _profiles_from(doc["profiles"], base, seed, grid, params.bytes_per_token)
        total = sum(p.original_size_bytes for p in profiles)
        tiers = _tiers_from(doc["tiers"], total)
        trace = _trace_from(doc.get("trace"), base, seed, [p.context for p in profiles])
        d = dict(doc.get("drift", {}))
        events = tuple(
            DriftEvent(
                t=float(e["t"]),
                contexts=tuple(e["contexts"]) if e.get("contexts") is not None else None,
                fraction=float(e.get("fraction", 1.0)),
                scale=float(e.get("scale", 1.0)),
                shift=float(e.get("shift", 0.0)),
            )
            for e in d.pop("events", [])
        )
        drift = DriftConfig(events=events, **d)
        sim = SimConfig(**doc.get("sim", {}))
        return ScenarioSpec(
            tiers=tiers,
            params=params,
            profiles=profiles,
            trace=trace,
            methods=methods,
            ratio_grid=grid,
            preload=list(doc.get("preload", [])),
            policy=str(doc.get("policy", "joint")),
            select=str(doc.get("select", "utility")),
            miss_store=str(doc.get("miss_store", "direct")),
            drift=drift,
            sim=sim,
            seed=seed,
        )
    except KeyError as exc:
        raise ValidationError(f"scenario is missing {exc.args[0]!r}") from None
    except TypeError as exc:
        raise ValidationError(f"bad scenario field: {exc}") from None


def load_scenario(path: Union[str, Path], overrides: Iterable[str] = ()) -> ScenarioSpec:
    path = Path(path)
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    doc = copy.deepcopy(doc)
    for item in overrides:
        set_dotted(doc, *parse_override(item))
    return scenario_from_dict(doc, path.parent)
