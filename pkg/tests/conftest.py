"""Shared helpers for the test suite."""

import numpy as np
import pytest

from resadapt.classifier import ClassAnchorSet


def make_anchor_set(k, d, rng, scale=1.0):
    rows = (scale * rng.standard_normal((k, d))).astype(np.float32)
    return ClassAnchorSet([f"c{i}" for i in range(k)], rows,
                          [f"a photo of a c{i}" for i in range(k)])


def make_instance(seed, k=4, d=8, n=24):
    """Random bank + anchors for identity/threshold style tests."""
    rng = np.random.default_rng(seed)
    bank = rng.standard_normal((n, d)).astype(np.float32)
    anchors = make_anchor_set(k, d, rng)
    return bank, anchors


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
