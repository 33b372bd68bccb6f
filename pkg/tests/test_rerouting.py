"""Path surgery: excursion decomposition, rerouting, and the hypercube lift."""

import numpy as np
import pytest

from interlacements.goodness import GoodnessField, classify_field
from interlacements.lattice import BoundaryKind, Window, boundary, is_connected, neighbors
from interlacements.rerouting import (ExcursionDecomposition, LiftError,
                                      NoRerouteWitness, decompose, lift,
                                      lift_with_stats, reroute, shortest_good_path)
from interlacements.rng import PhiloxStream
from interlacements.walk import loop_erase


def _synthetic_field(core_radius: int, bad_sites=(), u=0.5) -> GoodnessField:
    """Goodness field with prescribed bad sites (no slab needed for rerouting)."""
    core = Window.box_radius(3, core_radius)
    good = np.ones(core.extents, dtype=bool)
    for s in bad_sites:
        good[tuple(c + core_radius for c in s)] = False
    slab = Window.slab(1, 3)
    return GoodnessField(core, u, good, slab, np.ones(slab.extents, dtype=bool))


def test_decompose_all_good():
    gf = _synthetic_field(3)
    dec = decompose([(0, 0, 0), (1, 0, 0)], gf)
    assert dec.departures == [] and dec.returns == [] and dec.complete


def test_decompose_all_bad():
    gf = _synthetic_field(1, bad_sites=[s for s in Window.box_radius(3, 1).sites()])
    dec = decompose([(0, 0, 0), (1, 0, 0)], gf)
    assert dec.departures == [0] and dec.returns == [] and not dec.complete


def test_decompose_pattern():
    gf = _synthetic_field(3, bad_sites=[(0, 1, 0), (0, 2, 0)])
    path = [(0, -1, 0), (0, 0, 0), (0, 1, 0), (0, 2, 0), (0, 3, 0)]
    dec = decompose(path, gf)
    assert dec.departures == [2] and dec.returns == [4]


def test_reroute_identity_on_good_simple_path():
    gf = _synthetic_field(3)
    path = [(0, 0, 0), (1, 0, 0), (1, 1, 0), (1, 1, 1)]
    assert reroute(path, gf) == path


def test_reroute_single_bad_site_detour():
    gf = _synthetic_field(3, bad_sites=[(0, 0, 0)])
    path = [(-2, 0, 0), (-1, 0, 0), (0, 0, 0), (1, 0, 0), (2, 0, 0)]
    out = reroute(path, gf)
    assert out[0] == path[0] and out[-1] == path[-1]
    assert len(set(out)) == len(out)
    assert all(gf.is_good(s) for s in out)
    # detour replaces one bad site with a shortest good bridge; brute force the
    # bridge length with a plain BFS over the good set
    dist = _bfs_distance(gf, (-1, 0, 0), (1, 0, 0))
    assert len(out) == 2 + dist + 1
    # length increase is at most the exterior star boundary of the bad cluster
    ext = boundary([(0, 0, 0)], BoundaryKind.EXTERIOR_STAR)
    assert len(out) - len(path) <= len(ext)


def _bfs_distance(gf, a, b):
    frontier = [a]
    dist = {a: 0}
    while frontier:
        nxt = []
        for s in frontier:
            for w in neighbors(s):
                if w not in dist and gf.contains(w) and gf.is_good(w):
                    dist[w] = dist[s] + 1
                    nxt.append(w)
        if b in dist:
            return dist[b]
        frontier = nxt
    raise AssertionError("no path")


def test_reroute_leading_and_trailing_bad_segments():
    gf = _synthetic_field(3, bad_sites=[(-3, 0, 0), (3, 0, 0)])
    path = [(-3, 0, 0), (-2, 0, 0), (-1, 0, 0)]
    out = reroute(path, gf)
    assert out[0] == (-2, 0, 0) and out[-1] == (-1, 0, 0)
    path2 = [(1, 0, 0), (2, 0, 0), (3, 0, 0)]
    out2 = reroute(path2, gf)
    assert out2 == [(1, 0, 0), (2, 0, 0)]   # truncated trailing excursion


def test_reroute_no_witness_across_bad_wall():
    wall = [(0, y, z) for y in range(-2, 3) for z in range(-2, 3)]
    gf = _synthetic_field(2, bad_sites=wall)
    path = [(-1, 0, 0), (0, 0, 0), (1, 0, 0)]
    with pytest.raises(NoRerouteWitness):
        reroute(path, gf)


def test_reroute_never_good_path_errors():
    gf = _synthetic_field(1, bad_sites=[s for s in Window.box_radius(3, 1).sites()])
    with pytest.raises(NoRerouteWitness):
        reroute([(0, 0, 0), (1, 0, 0)], gf)


def test_shortest_good_path_lexicographic_tie_break():
    gf = _synthetic_field(3, bad_sites=[(0, 0, 0)])
    bridge = shortest_good_path(gf, (-1, 0, 0), (1, 0, 0))
    assert len(bridge) == 5
    # among all shortest detours the lexicographically smallest next site wins
    assert bridge == [(-1, 0, 0), (-1, -1, 0), (0, -1, 0), (1, -1, 0), (1, 0, 0)]
    again = shortest_good_path(gf, (-1, 0, 0), (1, 0, 0))
    assert again == bridge


def test_reroute_randomized_fields_postconditions():
    stream = PhiloxStream(606, 0)
    core = Window.box_radius(3, 4)
    produced = 0
    attempts = 0
    while produced < 60 and attempts < 600:
        attempts += 1
        bad = []
        for s in core.sites():
            if stream.uniform() < 0.06:
                bad.append(s)
        gf = _synthetic_field(4, bad_sites=bad)
        walk = [(0, 0, 0)]
        for _ in range(60):
            nbrs = [w for w in neighbors(walk[-1]) if core.contains(w)]
            walk.append(nbrs[stream.integers(len(nbrs))])
        path = loop_erase(walk)
        try:
            out = reroute(path, gf)
        except NoRerouteWitness:
            continue
        produced += 1
        assert len(set(out)) == len(out)
        assert all(gf.is_good(s) for s in out)
        first_good = next(s for s in path if gf.is_good(s))
        assert out[0] == first_good
    assert produced >= 60


# ---------------------------------------------------------------------------
# lift

def test_lift_single_site_and_gamma():
    slab = Window.slab(2, 3)
    gf = classify_field(np.ones(slab.extents, dtype=bool), slab, u=0.0)
    assert lift([(1, 0, 0)], gf) == [(2, 0, 0)]
    assert lift([(0, -1, 0)], gf) == [(0, -2, 0)]


def test_lift_fully_vacant_d3_hits_doubled_sites():
    slab = Window.slab(2, 3)
    gf = classify_field(np.ones(slab.extents, dtype=bool), slab, u=0.0)
    path = [(0, 0, 0), (1, 0, 0), (1, 1, 0)]
    out, stats = lift_with_stats(path, gf)
    assert out[0] == (0, 0, 0) and out[-1] == (2, 2, 0)
    assert len(set(out)) == len(out)
    assert stats.max_segment <= stats.segment_bound == 7 * 2 ** 3
    for p, q in zip(out, out[1:]):
        assert sum(abs(a - b) for a, b in zip(p, q)) == 1


@pytest.mark.parametrize("d", [3, 4])
def test_lift_random_sparse_fields_stay_vacant_and_bounded(d):
    stream = PhiloxStream(707 + d, 0)
    slab = Window.slab(2, d)
    core = slab.classification_core()
    done = 0
    tried = 0
    while done < 25 and tried < 250:
        tried += 1
        vac = np.array([stream.uniform() > 0.04 for _ in range(slab.size)]
                       ).reshape(slab.extents)
        gf = classify_field(vac, slab)
        walk = [(0, 0, 0)]
        for _ in range(12):
            nbrs = [w for w in neighbors(walk[-1])
                    if core.contains(w) and gf.is_good(w)]
            if not nbrs:
                break
            walk.append(nbrs[stream.integers(len(nbrs))])
        path = loop_erase(walk)
        if not all(gf.is_good(s) for s in path):
            continue
        try:
            out, stats = lift_with_stats(path, gf)
        except LiftError:
            continue  # witness mismatch is possible at small d
        done += 1
        assert stats.max_segment <= 7 * 2 ** d
        assert len(set(out)) == len(out)
        flat = gf.vacant.ravel()
        for s in out:
            assert flat[slab.index(s)], f"lift visited an occupied site {s}"
    assert done >= 25


def test_lift_rejects_bad_or_disconnected_input():
    slab = Window.slab(2, 3)
    gf = classify_field(np.ones(slab.extents, dtype=bool), slab, u=0.0)
    gf.good[1, 1, 1] = False
    with pytest.raises(ValueError):
        lift([(0, 0, 0)], gf)           # (0,0,0) marked bad via the poke above
    gf2 = classify_field(np.ones(slab.extents, dtype=bool), slab, u=0.0)
    with pytest.raises(ValueError):
        lift([(0, 0, 0), (1, 1, 0)], gf2)   # not l1-adjacent
