from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from kvplace.core import GB, CacheEntry, CompressionConfig, CompressionMethod, TierSpec, UtilityParams, ValidationError
from kvplace.quality import ContextProfile
from kvplace.utility import (
    ConfigCandidate,
    all_candidates,
    best_config,
    config_grid,
    enumerate_candidates,
    load_time,
    prefill_time,
    score_candidate,
    utility,
)

from conftest import two_context_profiles, two_context_tiers

KEYDIFF = CompressionMethod("keydiff")


def test_load_time_examples():
    fast, slow = two_context_tiers()
    assert load_time(8 * GB, fast) == pytest.approx(0.4, abs=1e-12)
    assert load_time(0, fast) == 0.0
    assert load_time(0.2 * GB, slow) == pytest.approx(0.1, abs=1e-12)


def test_load_time_adds_latency_and_decompression():
    tier = TierSpec(0, "t", None, 1e9, fixed_access_latency=0.01)
    assert load_time(1e9, tier, CompressionMethod("kivi", 1e-10)) == pytest.approx(0.01 + 1.0 + 0.1)
    with pytest.raises(ValidationError):
        load_time(-1, tier)


def test_prefill_time_examples():
    assert prefill_time(0, UtilityParams(prefill_a=1e-4)) == 0.0
    assert prefill_time(10_000, UtilityParams(prefill_a=1e-4)) == pytest.approx(1.0)
    assert prefill_time(10_000, UtilityParams(prefill_b=1e-9)) == pytest.approx(0.1)


def test_utility_examples():
    assert utility(1.0, 0.4, 1, 1.0) == pytest.approx(0.6)
    assert utility(0.3, 2.0, 0, 5.0) == 0.0
    assert utility(0.67, 0.05, 1, 1.0) == pytest.approx(0.62)
    assert utility(0.65, 0.05, 1, 1.0) == pytest.approx(0.60)


def test_alpha_crossover_is_delta_t_over_delta_q():
    # (q 0.82, t 0.20) against (q 0.92, t 0.24): equal utility at alpha = 0.04 / 0.10
    crossover = (0.24 - 0.20) / (0.92 - 0.82)
    assert crossover == pytest.approx(0.4)
    for alpha in (0.1, 0.3, 0.39):
        assert utility(0.82, 0.20, 1, alpha) > utility(0.92, 0.24, 1, alpha)
    for alpha in (0.41, 0.5, 1.0):
        assert utility(0.92, 0.24, 1, alpha) > utility(0.82, 0.20, 1, alpha)


@given(
    st.floats(-10, 10), st.floats(-10, 10), st.floats(-10, 10),
    st.floats(0, 10), st.floats(0, 10), st.floats(0, 10),
)
def test_utility_linear_in_each_argument(q, t, f, alpha, a, b):
    # three points on a line stay collinear under each argument separately
    for fn in (
        lambda x: utility(x, t, f, alpha),
        lambda x: utility(q, x, f, alpha),
        lambda x: utility(q, t, x, alpha),
    ):
        mid = fn((a + b) / 2)
        assert mid == pytest.approx((fn(a) + fn(b)) / 2, rel=1e-9, abs=1e-9)


def test_score_candidate_examples():
    fast, slow = two_context_tiers()
    ctx1 = two_context_profiles()["ctx1"]
    params = UtilityParams(alpha=1.0)
    c = score_candidate(ctx1, CompressionConfig(KEYDIFF, 0.05), fast, params)
    assert c.compressed_size == 200_000_000
    assert c.utility == pytest.approx(0.99, abs=1e-12)
    assert score_candidate(ctx1, CompressionConfig(KEYDIFF, 0.05), slow, params).utility == pytest.approx(0.9, abs=1e-12)
    doubled = score_candidate(ctx1, CompressionConfig(KEYDIFF, 0.05), fast, params, frequency=2.0)
    assert doubled.utility == pytest.approx(2 * c.utility)


def test_config_grid_lists_uncompressed_once():
    p = ContextProfile("c", 10, (0.5, 1.0), {"keydiff": (0.5, 1.0), "snapkv": (0.4, 1.0)})
    labels = [str(c) for c in config_grid(p)]
    assert labels == ["keydiff@0.5", "snapkv@0.5", "none@1"]
    assert [str(c) for c in config_grid(p, {"snapkv": CompressionMethod("snapkv")})] == ["snapkv@0.5", "none@1"]


def _three_method_profile(size=4 * GB):
    grid = (0.2, 0.5, 0.8, 1.0)
    row = (0.3, 0.6, 0.9, 1.0)
    return ContextProfile("c", size, grid, {"keydiff": row, "knorm": row, "snapkv": row})


def test_enumerate_candidates_counts_and_filter(tiers, params):
    p = _three_method_profile()
    entry = CacheEntry("c", p.original_size_bytes, CompressionConfig.uncompressed(), 0)
    cands = enumerate_candidates(entry, p, tiers, params)
    # 3 methods x 3 ratios + uncompressed = 10 configs per tier; the same-tier
    # uncompressed option does not save space
    assert len(cands) == 10 + 9
    assert all(c.compressed_size < entry.size for c in cands if c.tier == 0)
    assert any(c.tier == 1 and c.config.is_uncompressed for c in cands)


def test_enumerate_candidates_empty_at_bottom_smallest(tiers, params):
    p = _three_method_profile()
    entry = CacheEntry("c", p.original_size_bytes, CompressionConfig(KEYDIFF, 0.2), 1)
    assert enumerate_candidates(entry, p, tiers, params) == []


def test_best_config_examples(tiers, params):
    best = best_config(two_context_profiles()["ctx1"], tiers, params)
    assert (best.tier, best.config) == (0, CompressionConfig(KEYDIFF, 0.05))
    assert best.utility == pytest.approx(0.99)
    single = ContextProfile("s", 10, (1.0,), {"keydiff": (1.0,)})
    only = TierSpec(0, "only", None, 1e9)
    assert best_config(single, [only], params).config.is_uncompressed


def test_best_config_tie_break_is_deterministic(params):
    # identical quality rows and an unlimited tier: every method ties exactly
    grid = (0.5, 1.0)
    p = ContextProfile("c", 1000, grid, {"snapkv": (1.0, 1.0), "keydiff": (1.0, 1.0)})
    tier = [TierSpec(0, "t", None, 1e9)]
    picks = {str(best_config(p, tier, params).config) for _ in range(3)}
    assert picks == {"keydiff@0.5"}
    # ties on utility and quality go to the larger ratio
    flat = ContextProfile("f", 1000, grid, {"keydiff": (1.0, 1.0)})
    instant = [TierSpec(0, "t", None, 1e30)]
    assert best_config(flat, instant, params).config.is_uncompressed


def test_best_config_by_quality(tiers, params):
    pick = best_config(two_context_profiles()["ctx2"], tiers, params, by="quality")
    assert pick.quality == 1.0 and pick.tier == 0
    with pytest.raises(ValidationError):
        best_config(two_context_profiles()["ctx2"], tiers, params, by="speed")


def test_dominated_pair_all_alphas():
    for alpha in (0.0, 0.5, 1.0, 5.0):
        weak = utility(0.65, 0.05, 1.0, alpha)
        strong = utility(0.67, 0.05, 1.0, alpha)
        if alpha > 0:
            assert strong > weak
        else:
            assert strong == weak


@given(
    st.floats(0, 1), st.floats(0, 1), st.floats(0, 5), st.floats(0, 5),
    st.floats(0, 10), st.floats(0, 10),
)
def test_dominance_property(q1, q2, t1, t2, f, alpha):
    qa, qb = max(q1, q2), min(q1, q2)
    ta, tb = min(t1, t2), max(t1, t2)
    assert utility(qa, ta, f, alpha) >= utility(qb, tb, f, alpha)


@given(st.floats(0.01, 100.0), st.sampled_from([0.5, 1.0, 3.0]))
def test_frequency_scaling_keeps_argmax(c, alpha):
    p = _three_method_profile(size=3 * GB)
    params = UtilityParams(alpha=alpha)
    tiers = two_context_tiers()
    base = best_config(p, tiers, params, frequency=1.0)
    scaled = best_config(p, tiers, params, frequency=c)
    assert (scaled.tier, scaled.config) == (base.tier, base.config)
    assert scaled.utility == pytest.approx(c * base.utility, rel=1e-9)


def test_sort_key_orders_by_utility_first():
    cfg = CompressionConfig.uncompressed()
    a = ConfigCandidate(1, cfg, 10, 0.5, 0.1, 2.0)
    b = ConfigCandidate(0, cfg, 10, 0.9, 0.1, 1.0)
    assert min([b, a], key=ConfigCandidate.sort_key) is a


def test_all_candidates_covers_every_tier(tiers, params):
    p = two_context_profiles()["ctx2"]
    cands = all_candidates(p, tiers, params)
    assert len(cands) == 2 * 4
