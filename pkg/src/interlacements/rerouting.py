"""Path surgery: rerouting Z^3 paths around bad clusters and lifting good
Z^3 paths to vacant Z^d paths through the hypercube witnesses.

Rerouting cuts out the maximal excursions of a path into the bad set and
replaces each with a shortest nearest-neighbor path through good sites
(breadth-first, lexicographic tie-break, so reruns are reproducible); the
concatenation is loop-erased. Within a finite window a replacement witness
may not exist even though it would in infinite volume, which surfaces as
NoRerouteWitness rather than being guessed around.

Lifting sends a good site y to the lexicographically smallest site of its
own cube's near-spanning vacant component and connects consecutive images by
shortest vacant paths inside the 7-cube union of the earlier site; goodness
guarantees a connection of length at most 7 * 2^d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .goodness import GoodnessField, _union_structure, _CUBE_CENTERS
from .lattice import Site, embed3, neighbors
from .walk import loop_erase


class NoRerouteWitness(RuntimeError):
    """Excursion endpoints are not connected inside the window's good set."""


class LiftError(RuntimeError):
    """A lift segment had no vacant connection; witness components disagree."""


@dataclass
class ExcursionDecomposition:
    """Departure/return indices of a path into and out of the good set.

    departures[n] is the n-th index entering the bad set, returns[n] the first
    good index after it; a final departure with no return inside the path
    leaves returns one element short.
    """

    departures: list
    returns: list

    @property
    def complete(self) -> bool:
        return len(self.returns) == len(self.departures)


def decompose(path, gf: GoodnessField) -> ExcursionDecomposition:
    sites = [tuple(s) for s in path]
    for s in sites:
        if not gf.contains(s):
            raise ValueError(f"path site {s} outside the classified window")
    departures, returns = [], []
    in_bad = False
    for k, s in enumerate(sites):
        good = gf.is_good(s)
        if not in_bad and not good:
            departures.append(k)
            in_bad = True
        elif in_bad and good:
            returns.append(k)
            in_bad = False
    return ExcursionDecomposition(departures, returns)


def shortest_good_path(gf: GoodnessField, a: Site, b: Site):
    """Shortest nearest-neighbor path from a to b through good sites.

    Ties are broken by always stepping to the lexicographically smallest
    neighbor that still lies on a shortest path. Returns None if b is not
    reachable from a inside the window's good set.
    """
    a, b = tuple(a), tuple(b)
    if not (gf.is_good(a) and gf.is_good(b)):
        raise ValueError("endpoints must be good sites")
    if a == b:
        return [a]
    dist = {b: 0}
    frontier = [b]
    while frontier and a not in dist:
        nxt = []
        for s in frontier:
            for w in neighbors(s):
                if w not in dist and gf.contains(w) and gf.is_good(w):
                    dist[w] = dist[s] + 1
                    nxt.append(w)
        frontier = nxt
    if a not in dist:
        return None
    path = [a]
    cur = a
    while cur != b:
        cur = min(w for w in neighbors(cur) if dist.get(w) == dist[cur] - 1)
        path.append(cur)
    return path


def reroute(path, gf: GoodnessField) -> list:
    """Replace bad excursions of a Z^3 path by good detours; loop-erase.

    A leading bad segment is erased (the output starts at the path's first
    good site); a trailing bad segment without a return is dropped, treating
    the finite path as a truncation. The output is simple and entirely good.
    """
    sites = [tuple(s) for s in path]
    dec = decompose(sites, gf)
    if not dec.departures:
        return loop_erase(sites)
    if dec.departures[0] == 0 and not dec.returns:
        raise NoRerouteWitness("path never enters the good set")
    out = []
    if dec.departures[0] == 0:
        i, k = dec.returns[0], 1
    else:
        i, k = 0, 0
    while True:
        next_dep = dec.departures[k] if k < len(dec.departures) else len(sites)
        out.extend(sites[i:next_dep])
        if k >= len(dec.departures) or k >= len(dec.returns):
            break  # done, or trailing excursion truncated by the window
        r = dec.returns[k]
        bridge = shortest_good_path(gf, sites[next_dep - 1], sites[r])
        if bridge is None:
            raise NoRerouteWitness(
                f"no good connection from {sites[next_dep - 1]} to {sites[r]} "
                f"inside the window")
        out.extend(bridge[1:-1])
        i, k = r, k + 1
    result = loop_erase(out)
    assert all(gf.is_good(s) for s in result)
    return result


def _gamma(witness) -> Site:
    return min(witness[(0, 0, 0)])


@dataclass
class LiftStats:
    max_segment: int
    segment_bound: int


def _vacant_lookup(gf: GoodnessField):
    lo = np.array(gf.slab.lo, dtype=np.int64)
    ext = gf.slab.extents
    strides = np.ones(gf.d, dtype=np.int64)
    for i in range(gf.d - 2, -1, -1):
        strides[i] = strides[i + 1] * ext[i + 1]
    flat = gf.vacant.ravel()

    def vacant(site) -> bool:
        return bool(flat[int((np.array(site, dtype=np.int64) - lo) @ strides)])

    return vacant


def _shortest_vacant_segment(allowed: dict, a: Site, b: Site):
    """Lexicographic shortest path from a to b inside `allowed` (site -> vacant)."""
    if a == b:
        return [a]
    dist = {b: 0}
    frontier = [b]
    while frontier and a not in dist:
        nxt = []
        for s in frontier:
            for w in neighbors(s):
                if w not in dist and allowed.get(w, False):
                    dist[w] = dist[s] + 1
                    nxt.append(w)
        frontier = nxt
    if a not in dist:
        return None
    path = [a]
    cur = a
    while cur != b:
        cur = min(w for w in neighbors(cur) if dist.get(w) == dist[cur] - 1)
        path.append(cur)
    return path


def lift_with_stats(path, gf: GoodnessField):
    """Lift a good Z^3 path to a vacant Z^d path; also report segment sizes."""
    sites = [tuple(s) for s in path]
    if not sites:
        raise ValueError("empty path")
    for s in sites:
        if not gf.is_good(s):
            raise ValueError(f"lift requires good sites; {s} is bad")
    for p, q in zip(sites, sites[1:]):
        if sum(abs(a - b) for a, b in zip(p, q)) != 1:
            raise ValueError("lift requires an l1-nearest-neighbor path")
    d = gf.d
    rel, _, _, _ = _union_structure(d)
    vacant = _vacant_lookup(gf)
    witnesses = {s: gf.witness(s) for s in set(sites)}
    bound = 7 * 2 ** d
    out = [_gamma(witnesses[sites[0]])]
    max_seg = 1
    for y, x in zip(sites, sites[1:]):
        base = np.array(tuple(2 * c for c in embed3(y, d)), dtype=np.int64)
        union_sites = rel + base
        allowed = {tuple(int(v) for v in s): vacant(tuple(s)) for s in union_sites}
        seg = _shortest_vacant_segment(allowed, _gamma(witnesses[y]),
                                       _gamma(witnesses[x]))
        if seg is None:
            raise LiftError(
                f"no vacant connection between the cube components of {y} and {x}; "
                f"witness components disagree (expected only at small d)")
        if len(seg) > bound:
            raise LiftError(f"segment length {len(seg)} exceeds 7*2^d = {bound}")
        max_seg = max(max_seg, len(seg))
        out.extend(seg[1:])
    return loop_erase(out), LiftStats(max_seg, bound)


def lift(path, gf: GoodnessField) -> list:
    """Vacant Z^d image of a good Z^3 path (simple, loop-erased)."""
    return lift_with_stats(path, gf)[0]
