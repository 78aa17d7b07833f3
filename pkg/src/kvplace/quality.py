"""Per-context quality profiles and the drift-triggered re-profiling loop.

A profile maps (method, ratio) to the answer quality a context keeps when its
KV cache is compressed that way. Profiles come either from measured tables
(JSONL import) or from a sensitivity curve anchored at ratio 0.9.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import IO, Iterable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import CompressionConfig, ContextId, KVPlaceError, ValidationError

log = logging.getLogger(__name__)

ANCHOR_RATIO = 0.9


class ProfileError(KVPlaceError, KeyError):
    """A profile lookup cannot be answered (unknown method, ratio off-grid)."""

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else ""


def synth_quality(s: float, k: float, ratio: float) -> float:
    """Quality of a context with sensitivity ``s`` and curve shape ``k``.

    ``1 - s * ((1 - ratio) / 0.1) ** k`` clamped to [0, 1]; the quality at
    ratio 0.9 is exactly ``1 - s`` whatever the shape.
    """
    if s < 0 or k <= 0:
        raise ValidationError(f"need s >= 0 and k > 0, got s={s}, k={k}")
    if not 0.0 < ratio <= 1.0:
        raise ValidationError(f"ratio must be in (0, 1], got {ratio}")
    drop = s * ((1.0 - ratio) / (1.0 - ANCHOR_RATIO)) ** k
    return min(1.0, max(0.0, 1.0 - drop))


@dataclass(frozen=True)
class SensitivityCurve:
    """Per-method ``(sensitivity, shape)`` pairs describing a context."""

    params: Mapping[str, tuple[float, float]]

    def __post_init__(self) -> None:
        for name, (s, k) in self.params.items():
            if s < 0 or k <= 0:
                raise ValidationError(f"bad curve for {name}: s={s}, k={k}")

    def quality(self, method: str, ratio: float) -> float:
        if ratio == 1.0:
            return 1.0
        try:
            s, k = self.params[method]
        except KeyError:
            raise ProfileError(f"curve has no method {method!r}") from None
        return synth_quality(s, k, ratio)

    def table(self, grid: Sequence[float]) -> dict[str, tuple[float, ...]]:
        return {m: tuple(self.quality(m, r) for r in grid) for m in self.params}

    def scaled(self, scale: float = 1.0, shift: float = 0.0) -> SensitivityCurve:
        return SensitivityCurve(
            {m: (min(1.0, max(0.0, s * scale + shift)), k) for m, (s, k) in self.params.items()}
        )


def check_grid(grid: Sequence[float]) -> tuple[float, ...]:
    grid = tuple(float(r) for r in grid)
    if not grid:
        raise ValidationError("ratio grid is empty")
    if any(not 0.0 < r <= 1.0 for r in grid):
        raise ValidationError(f"grid ratios must lie in (0, 1]: {grid}")
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValidationError(f"grid must be strictly ascending: {grid}")
    if grid[-1] != 1.0:
        raise ValidationError("grid must include ratio 1.0")
    return grid


@dataclass(frozen=True)
class ContextProfile:
    """Quality table for one context, plus its size and expected popularity.

    ``methods[name][i]`` is the quality at ``ratio_grid[i]``. ``curve`` is the
    generating sensitivity curve when the profile is synthetic.
    """

    context: ContextId
    original_size_bytes: int
    ratio_grid: tuple[float, ...]
    methods: Mapping[str, tuple[float, ...]]
    frequency: float = 1.0
    curve: Optional[SensitivityCurve] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if not self.context:
            raise ValidationError("context id must be non-empty")
        if self.original_size_bytes <= 0:
            raise ValidationError(f"{self.context}: size must be positive")
        if not (self.frequency >= 0 and math.isfinite(self.frequency)):
            raise ValidationError(f"{self.context}: frequency must be finite and >= 0")
        grid = check_grid(self.ratio_grid)
        object.__setattr__(self, "ratio_grid", grid)
        if not self.methods:
            raise ValidationError(f"{self.context}: profile has no methods")
        tables = {}
        for name, row in self.methods.items():
            row = tuple(float(q) for q in row)
            if len(row) != len(grid):
                raise ValidationError(f"{self.context}/{name}: table length != grid length")
            if any(not 0.0 <= q <= 1.0 for q in row):
                raise ValidationError(f"{self.context}/{name}: qualities must lie in [0, 1]")
            if row[-1] != 1.0:
                raise ValidationError(f"{self.context}/{name}: quality at ratio 1.0 must be 1.0")
            if any(b < a for a, b in zip(row, row[1:])):
                warnings.warn(f"{self.context}/{name}: quality is not monotone in ratio", stacklevel=3)
            tables[name] = row
        object.__setattr__(self, "methods", tables)

    @property
    def method_names(self) -> tuple[str, ...]:
        return tuple(sorted(self.methods))


def quality_of(profile: ContextProfile, config: CompressionConfig) -> float:
    """Profiled quality at ``config``; linear interpolation between grid points."""
    ratio = config.ratio
    if ratio == 1.0:
        return 1.0
    try:
        row = profile.methods[config.method.name]
    except KeyError:
        raise ProfileError(f"{profile.context}: no profile for method {config.method.name!r}") from None
    grid = profile.ratio_grid
    if ratio < grid[0]:
        raise ProfileError(f"{profile.context}: ratio {ratio} below smallest profiled ratio {grid[0]}")
    i = bisect.bisect_left(grid, ratio)
    if grid[i] == ratio:
        return row[i]
    lo, hi = grid[i - 1], grid[i]
    w = (ratio - lo) / (hi - lo)
    return row[i - 1] + w * (row[i] - row[i - 1])


# ---------------------------------------------------------------------------
# synthetic generation
# ---------------------------------------------------------------------------

DEFAULT_METHOD_FACTORS = {"keydiff": 1.0, "snapkv": 1.1, "knorm": 1.2}


@dataclass(frozen=True)
class ProfileParams:
    """Distributions for synthetic profiles.

    The anchor-method sensitivity is normal with mean ``median`` and standard
    deviation ``cv * median`` (or uniform over ``uniform`` when given),
    clipped to [0, 1]. Every other method scales it by its factor and a
    lognormal per-context jitter, so the best method varies across contexts.
    """

    n_contexts: int
    median: float = 0.5
    cv: float = 0.2
    k: float = 1.0
    uniform: Optional[tuple[float, float]] = None
    method_factors: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_METHOD_FACTORS))
    method_jitter: float = 0.15
    size_mean_bytes: float = 4e9
    size_std_bytes: float = 0.0
    size_bounds: tuple[float, float] = (1.0, math.inf)
    frequency: Union[float, tuple[float, float]] = 1.0
    ratio_grid: tuple[float, ...] = (0.05, 0.1, 0.2, 0.4, 0.6, 0.8, 0.9, 1.0)
    id_prefix: str = "ctx"
    anchor_method: str = "keydiff"

    def __post_init__(self) -> None:
        if self.n_contexts < 0:
            raise ValidationError("n_contexts must be >= 0")
        if self.median < 0 or self.cv < 0 or self.k <= 0:
            raise ValidationError("sensitivity distribution needs median >= 0, cv >= 0, k > 0")
        if self.uniform is not None and not 0 <= self.uniform[0] <= self.uniform[1]:
            raise ValidationError(f"bad uniform sensitivity range {self.uniform}")
        if self.size_mean_bytes <= 0 or self.size_std_bytes < 0:
            raise ValidationError("size distribution needs a positive mean and std >= 0")
        if self.anchor_method not in self.method_factors:
            raise ValidationError(f"anchor method {self.anchor_method!r} has no factor")
        check_grid(self.ratio_grid)


def _draw_sensitivities(rng: np.random.Generator, p: ProfileParams) -> np.ndarray:
    if p.uniform is not None:
        base = rng.uniform(p.uniform[0], p.uniform[1], size=p.n_contexts)
    else:
        base = rng.normal(p.median, p.cv * p.median, size=p.n_contexts)
    return np.clip(base, 0.0, 1.0)


def _truncated_normal(rng: np.random.Generator, mean: float, std: float, bounds: tuple[float, float], n: int) -> np.ndarray:
    """Normal draws restricted to ``bounds`` by redrawing the ones outside."""
    lo, hi = bounds
    out = rng.normal(mean, std, size=n)
    if std == 0:
        return np.clip(out, lo, hi)
    for _ in range(1000):
        bad = (out < lo) | (out > hi)
        if not bad.any():
            return out
        out[bad] = rng.normal(mean, std, size=int(bad.sum()))
    return np.clip(out, lo, hi)  # bounds hold almost no mass; give up redrawing


def gen_profiles(seed: int, params: ProfileParams) -> list[ContextProfile]:
    """Draw ``params.n_contexts`` synthetic profiles, reproducibly per seed."""
    rng = np.random.default_rng(seed)
    n = params.n_contexts
    base = _draw_sensitivities(rng, params)
    methods = sorted(params.method_factors)
    per_method = {}
    for m in methods:
        jitter = rng.lognormal(0.0, params.method_jitter, size=n)
        if m == params.anchor_method:
            per_method[m] = base
        else:
            per_method[m] = np.clip(base * params.method_factors[m] * jitter, 0.0, 1.0)
    sizes = _truncated_normal(rng, params.size_mean_bytes, params.size_std_bytes, params.size_bounds, n)
    if isinstance(params.frequency, tuple):
        freqs = rng.uniform(params.frequency[0], params.frequency[1], size=n)
    else:
        freqs = np.full(n, float(params.frequency))

    width = max(3, len(str(max(n - 1, 0))))
    out = []
    for i in range(n):
        curve = SensitivityCurve({m: (float(per_method[m][i]), params.k) for m in methods})
        out.append(
            ContextProfile(
                context=f"{params.id_prefix}{i:0{width}d}",
                original_size_bytes=max(1, int(round(sizes[i]))),
                ratio_grid=params.ratio_grid,
                methods=curve.table(params.ratio_grid),
                frequency=float(freqs[i]),
                curve=curve,
            )
        )
    return out


# ---------------------------------------------------------------------------
# drift tracking and re-profiling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DriftState:
    """Running means of true vs. predicted quality for one context.

    With ``window`` set, the means cover only the last ``window`` samples.
    """

    context: ContextId
    observed: float = 0.0
    profiled: float = 0.0
    n_observations: int = 0
    window: Optional[int] = None
    samples: tuple[tuple[float, float], ...] = ()

    @property
    def gap(self) -> float:
        return self.profiled - self.observed


def record_observation(
    drift: DriftState,
    served_config: Optional[CompressionConfig],
    predicted_quality: float,
    true_quality: float,
) -> DriftState:
    for q in (predicted_quality, true_quality):
        if not 0.0 <= q <= 1.0:
            raise ValidationError(f"quality must lie in [0, 1], got {q}")
    n = drift.n_observations + 1
    if drift.window:
        samples = (drift.samples + ((predicted_quality, true_quality),))[-drift.window :]
        profiled = sum(p for p, _ in samples) / len(samples)
        observed = sum(t for _, t in samples) / len(samples)
        return replace(drift, observed=observed, profiled=profiled, n_observations=n, samples=samples)
    observed = drift.observed + (true_quality - drift.observed) / n
    profiled = drift.profiled + (predicted_quality - drift.profiled) / n
    return replace(drift, observed=observed, profiled=profiled, n_observations=n)


def should_reprofile(drift: DriftState, threshold: float, gpu_free: bool, min_samples: int = 10) -> bool:
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    return drift.n_observations >= min_samples and drift.gap > threshold and gpu_free


@dataclass(frozen=True)
class ProfilingEvent:
    """A re-profiling run; requests arriving in [start, end) pay ``penalty``."""

    context: ContextId
    start: float
    end: float
    penalty: float

    def covers(self, t: float) -> bool:
        return self.start <= t < self.end


def reprofile(
    truth: ContextProfile,
    *,
    clock: float,
    noise: float = 0.0,
    seed: int = 0,
    duration: float = 2.0,
    penalty: float = 0.5,
) -> tuple[ContextProfile, ProfilingEvent]:
    """Re-measure a context against its current true quality curve.

    The new table is the truth on the profile grid plus uniform noise in
    ``[-noise, noise]``, clipped to [0, 1] and made monotone in ratio.
    """
    grid = truth.ratio_grid
    table = truth.curve.table(grid) if truth.curve is not None else dict(truth.methods)
    if noise > 0:
        rng = np.random.default_rng(seed)
        noisy = {}
        for name in sorted(table):
            row = np.asarray(table[name]) + rng.uniform(-noise, noise, size=len(grid))
            row = np.maximum.accumulate(np.clip(row, 0.0, 1.0))
            row[-1] = 1.0
            noisy[name] = tuple(float(q) for q in row)
        table = noisy
    profile = replace(truth, methods=table)
    event = ProfilingEvent(truth.context, clock, clock + duration, penalty)
    log.debug("reprofiled %s at t=%.3f", truth.context, clock)
    return profile, event


# ---------------------------------------------------------------------------
# JSON / JSONL profile files
# ---------------------------------------------------------------------------


def profile_to_json(profile: ContextProfile) -> dict:
    doc = {
        "context_id": profile.context,
        "size_bytes": profile.original_size_bytes,
        "frequency": profile.frequency,
        "grid": list(profile.ratio_grid),
        "methods": {
            name: {repr(r): q for r, q in zip(profile.ratio_grid, row)}
            for name, row in sorted(profile.methods.items())
        },
    }
    if profile.curve is not None:
        doc["curve"] = {m: list(sk) for m, sk in sorted(profile.curve.params.items())}
    return doc


def profile_from_json(doc: Mapping) -> ContextProfile:
    try:
        grid = check_grid(doc["grid"])
        methods = {}
        for name, points in doc["methods"].items():
            by_ratio = {float(r): float(q) for r, q in points.items()}
            row = []
            for r in grid:
                match = [q for rr, q in by_ratio.items() if math.isclose(rr, r, abs_tol=1e-12)]
                if not match:
                    raise ValidationError(f"method {name!r} has no quality for ratio {r}")
                row.append(match[0])
            methods[name] = tuple(row)
        curve = None
        if "curve" in doc:
            curve = SensitivityCurve({m: (float(s), float(k)) for m, (s, k) in doc["curve"].items()})
        return ContextProfile(
            context=str(doc["context_id"]),
            original_size_bytes=int(doc["size_bytes"]),
            ratio_grid=grid,
            methods=methods,
            frequency=float(doc.get("frequency", 1.0)),
            curve=curve,
        )
    except KeyError as exc:
        raise ValidationError(f"profile record missing field {exc.args[0]!r}") from None
    except (TypeError, AttributeError) as exc:
        raise ValidationError(f"malformed profile record: {exc}") from None


def read_profiles(source: Union[str, Path, IO[str]]) -> list[ContextProfile]:
    if isinstance(source, (str, Path)):
        with open(source) as fh:
            return read_profiles(fh)
    out = []
    for lineno, line in enumerate(source, 1):
        if not line.strip():
            continue
        try:
            out.append(profile_from_json(json.loads(line)))
        except (json.JSONDecodeError, ValidationError) as exc:
            raise ValidationError(f"profile line {lineno}: {exc}") from None
    return out


def write_profiles(profiles: Iterable[ContextProfile], sink: Union[str, Path, IO[str]]) -> None:
    if isinstance(sink, (str, Path)):
        with open(sink, "w") as fh:
            write_profiles(profiles, fh)
        return
    for p in profiles:
        sink.write(json.dumps(profile_to_json(p), sort_keys=True) + "\n")
