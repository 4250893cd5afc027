from __future__ import annotations

import numpy as np
import pytest

from vectorhost.geometry import SpatialDomain


def square_domain(n: int, side: float = 1.0, ny: int | None = None) -> SpatialDomain:
    """``n`` by ``ny`` grid of cells of size ``side / n`` with origin 0."""
    return SpatialDomain(side / n, np.ones((ny or n, n), dtype=bool))


@pytest.fixture
def unit_square() -> SpatialDomain:
    return square_domain(10)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
