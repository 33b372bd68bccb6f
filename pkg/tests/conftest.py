"""Shared fixtures: session-cached Green tables (GRNT files under tests/.cache)."""

import pathlib

import pytest
from hypothesis import HealthCheck, settings

from interlacements.walk import GreenTable, build_green_table

settings.register_profile(
    "repro", derandomize=True, max_examples=50,
    suppress_health_check=[HealthCheck.too_slow], deadline=None)
settings.load_profile("repro")

_CACHE = pathlib.Path(__file__).parent / ".cache"


def cached_green(d: int, radius: int) -> GreenTable:
    _CACHE.mkdir(exist_ok=True)
    path = _CACHE / f"green_d{d}_r{radius}.grnt"
    if path.exists():
        try:
            table = GreenTable.load(path)
            if table.d == d and table.radius >= radius:
                return table
        except ValueError:
            pass
    table = build_green_table(d, radius)
    table.save(path)
    return table


@pytest.fixture(scope="session")
def green3():
    """d=3 table wide enough for the B_inf(0,6) window and B_2(0,8) capacities."""
    return cached_green(3, 16)


@pytest.fixture(scope="session")
def green4():
    """d=4 table covering slab(2, 4) windows."""
    return cached_green(4, 10)


@pytest.fixture(scope="session")
def green5():
    """d=5 table covering slab(2, 5) windows."""
    return cached_green(5, 10)
