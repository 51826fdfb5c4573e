"""Shared fixtures and reporting hooks for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from mtl_affect.annotations import NUM_AUS, NUM_EXPRESSIONS, AffectSample


def pytest_runtest_logreport(report):
    """Print one PASS/FAIL line per acceptance criterion as it finishes."""
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    status = "PASS" if report.passed else "FAIL"
    name = report.nodeid.split("::")[-1]
    print(f"\n[acceptance] {status} {name}", flush=True)


def random_sample(rng: np.random.Generator, ref: str, invalid_rate: float = 0.0) -> AffectSample:
    """One random annotation row, optionally sentinel-masked per task."""
    valence, arousal = rng.uniform(-1.0, 1.0, size=2)
    expression = int(rng.integers(0, NUM_EXPRESSIONS))
    aus = [int(b) for b in rng.integers(0, 2, size=NUM_AUS)]
    if rng.random() < invalid_rate:
        valence = arousal = -5.0
    if rng.random() < invalid_rate:
        expression = -1
    if rng.random() < invalid_rate:
        aus = [-1 if rng.random() < 0.5 else a for a in aus]
    return AffectSample.from_raw(ref, valence, arousal, expression, aus)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
