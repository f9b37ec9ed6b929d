"""Shared fixtures: tiny handmade datasets and bound configurations."""
from __future__ import annotations

import numpy as np
import pytest

from cogdiag.core import QMatrix, ResponseDataset
from cogdiag.girt import GirtBounds


@pytest.fixture
def tiny_ds() -> ResponseDataset:
    """Two learners, two items, three observed responses."""
    return ResponseDataset.from_triplets(
        [("s0", "e0", 1), ("s0", "e1", 0), ("s1", "e0", 1)]
    )


@pytest.fixture
def tiny_q() -> QMatrix:
    return QMatrix(
        entries=np.array([[1, 0], [1, 1]], dtype=np.int8),
        knowledge_labels=("k00", "k01"),
        item_ids=("e0", "e1"),
    )


@pytest.fixture
def wide_bounds() -> GirtBounds:
    """Bounds that admit scale 1.0 and proxy discriminations around 1.0."""
    return GirtBounds(
        proxy_low=-0.8,
        proxy_high=0.8,
        disc_low=0.9,
        disc_high=1.1,
        ability_low=-4.0,
        ability_high=4.0,
    )
