"""Shared fixtures: seeded record factories and benchmark sets."""

from __future__ import annotations

import numpy as np
import pytest

from stripealign import EmbeddingRecord, EmbeddingSet, SynthSpec, generate


def make_record(rng: np.random.Generator, k: int = 8, d: int = 16,
                ident: int = 0, cam: int = 0) -> EmbeddingRecord:
    return EmbeddingRecord(
        ident, cam, rng.normal(size=d), rng.normal(size=(k, d))
    )


def make_set(rng: np.random.Generator, n: int, k: int = 8, d: int = 16,
             ids=None, cams=None) -> EmbeddingSet:
    if ids is None:
        ids = np.arange(n)
    if cams is None:
        cams = np.zeros(n, dtype=int)
    return EmbeddingSet.from_arrays(
        rng.normal(size=(n, k, d)), rng.normal(size=(n, d)), ids, cams
    )


@pytest.fixture(scope="session")
def shift_heavy_bench():
    """Shift-dominated benchmark where window alignment must win outright."""
    spec = SynthSpec(
        n_ids=20, per_id=4, k=8, d_local=16, noise_sigma=0.05,
        shift_prob=0.8, max_shift=2, occl_prob=0.0, seed=9,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def mixed_bench():
    """Benchmark with both shifts and occlusions at moderate rates."""
    spec = SynthSpec(
        n_ids=20, per_id=4, k=8, d_local=16, noise_sigma=0.1,
        shift_prob=0.5, max_shift=2, occl_prob=0.25, seed=7,
    )
    return generate(spec)


@pytest.fixture(scope="session")
def bench99():
    """Fixed-seed benchmark for determinism checks."""
    spec = SynthSpec(
        n_ids=20, per_id=4, k=8, d_local=16, noise_sigma=0.1,
        shift_prob=0.5, max_shift=2, occl_prob=0.25, seed=99,
    )
    return generate(spec)
