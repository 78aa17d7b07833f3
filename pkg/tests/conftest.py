from __future__ import annotations

from pathlib import Path

import pytest

from kvplace.core import GB, TierSpec, UtilityParams
from kvplace.quality import ContextProfile

ROOT = Path(__file__).resolve().parent.parent
SCENARIOS = ROOT / "scenarios"

# Two-context example: a 4 GB context that compresses losslessly and an 8 GB
# one that loses half its quality under any compression.
TWO_CONTEXT_GRID = (0.05, 0.5, 0.9, 1.0)


def two_context_tiers() -> tuple[TierSpec, ...]:
    return (
        TierSpec(0, "fast", 8 * GB, 20 * GB),
        TierSpec(1, "slow", None, 2 * GB),
    )


def two_context_profiles() -> dict[str, ContextProfile]:
    return {
        "ctx1": ContextProfile("ctx1", 4 * GB, TWO_CONTEXT_GRID, {"keydiff": (1.0, 1.0, 1.0, 1.0)}),
        "ctx2": ContextProfile("ctx2", 8 * GB, TWO_CONTEXT_GRID, {"keydiff": (0.5, 0.5, 0.5, 1.0)}),
    }


@pytest.fixture
def tiers():
    return two_context_tiers()


@pytest.fixture
def profiles():
    return two_context_profiles()


@pytest.fixture
def params():
    return UtilityParams(alpha=1.0)


# criterion number -> (ok, detail), filled by test_acceptance and echoed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
