"""Good/bad classification of Z^3 sites over a vacant slab field.

A Z^3 site y is good when, in each of the 7 hypercubes C_z attached to y and
its l1-neighbors z, the vacant set contains a connected component whose
closure covers at least (1 - d^-2) |C_z| sites of that cube, and the seven
components are connected to one another inside the vacant part of the cube
union. Connectivity is nearest-neighbor throughout; the closure adds the
outer lattice boundary of the component (occupied sites included).

The flag at y depends only on the vacant field restricted to the 7-cube union
around y, so the union's adjacency structure is precomputed once per dimension
and classification is a pair of small graph searches per site.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable

import numpy as np

from .lattice import Site, Window, embed3
from .vacancy import components


class SlabCoverageError(ValueError):
    """A hypercube needed by the classifier falls outside the slab window."""


_CUBE_CENTERS = ((-1, 0, 0), (0, -1, 0), (0, 0, -1), (0, 0, 0),
                 (0, 0, 1), (0, 1, 0), (1, 0, 0))
_SELF_CUBE = _CUBE_CENTERS.index((0, 0, 0))


@lru_cache(maxsize=None)
def _cube_pattern(d: int):
    """Corner offsets of {0,1}^d in lexicographic order and their adjacency."""
    eps = [tuple((i >> (d - 1 - k)) & 1 for k in range(d)) for i in range(2 ** d)]
    index = {e: i for i, e in enumerate(eps)}
    nbrs = []
    for e in eps:
        row = []
        for k in range(d):
            f = e[:k] + (1 - e[k],) + e[k + 1:]
            row.append(index[f])
        nbrs.append(tuple(row))
    return tuple(eps), tuple(nbrs)


@lru_cache(maxsize=None)
def _union_structure(d: int):
    """Relative geometry of the 7-cube union around a base site 2*embed(y)."""
    eps, cube_nbrs = _cube_pattern(d)
    rel = []
    cube_sites = []
    for z in _CUBE_CENTERS:
        base = tuple(2 * c for c in embed3(z, d))
        idx = []
        for e in eps:
            idx.append(len(rel))
            rel.append(tuple(b + ei for b, ei in zip(base, e)))
        cube_sites.append(tuple(idx))
    index = {s: i for i, s in enumerate(rel)}
    nbrs = []
    for s in rel:
        row = []
        for k in range(d):
            for sign in (1, -1):
                t = s[:k] + (s[k] + sign,) + s[k + 1:]
                j = index.get(t)
                if j is not None:
                    row.append(j)
        nbrs.append(tuple(row))
    rel_arr = np.array(rel, dtype=np.int64)
    return rel_arr, tuple(nbrs), tuple(cube_sites), cube_nbrs


def closure_threshold(d: int) -> int:
    """Minimal closure overlap: smallest integer count >= (1 - d^-2) 2^d.

    Exact rational arithmetic so boundary cases never misclassify.
    """
    need = (1 - Fraction(1, d * d)) * 2 ** d
    k = int(need)
    return k if k == need else k + 1


def _local_components(vac, site_idx, nbr_lists):
    """Components of the vacant sites among site_idx; nbr_lists is adjacency
    on positions 0..len(site_idx)-1. Returns lists of positions, discovered
    in increasing position order."""
    n = len(site_idx)
    seen = [False] * n
    comps = []
    for p in range(n):
        if seen[p] or not vac[site_idx[p]]:
            continue
        comp = [p]
        seen[p] = True
        stack = [p]
        while stack:
            q = stack.pop()
            for r in nbr_lists[q]:
                if not seen[r] and vac[site_idx[r]]:
                    seen[r] = True
                    comp.append(r)
                    stack.append(r)
        comps.append(sorted(comp))
    return comps


def classify(y: Site, vacant_field: np.ndarray, slab: Window, d: int | None = None,
             want_witness: bool = False):
    """Classify one Z^3 site against a vacant field on its slab window.

    Returns (good, witness); witness maps each of the 7 cube centers z to the
    chosen near-spanning component (absolute Z^d sites) when good and
    want_witness is set, else None.
    """
    d = slab.d if d is None else d
    rel, nbrs, cube_sites, cube_nbrs = _union_structure(d)
    base = np.array(tuple(2 * c for c in embed3(tuple(y), d)), dtype=np.int64)
    abs_sites = rel + base
    lo = np.array(slab.lo, dtype=np.int64)
    hi = np.array(slab.hi, dtype=np.int64)
    if (abs_sites < lo).any() or (abs_sites > hi).any():
        raise SlabCoverageError(f"hypercubes around {tuple(y)} leave the slab window")
    ext = slab.extents
    strides = np.ones(d, dtype=np.int64)
    for i in range(d - 2, -1, -1):
        strides[i] = strides[i + 1] * ext[i + 1]
    flat = (abs_sites - lo) @ strides
    vac = vacant_field.ravel()[flat]

    # nearest-neighbor components of the vacant set over the whole union
    m = len(rel)
    glabel = np.full(m, -1, dtype=np.int64)
    next_label = 0
    for i in range(m):
        if glabel[i] >= 0 or not vac[i]:
            continue
        glabel[i] = next_label
        stack = [i]
        while stack:
            q = stack.pop()
            for r in nbrs[q]:
                if vac[r] and glabel[r] < 0:
                    glabel[r] = next_label
                    stack.append(r)
        next_label += 1

    thresh = closure_threshold(d)
    cube_candidates = []
    for sites in cube_sites:
        cands = []
        for comp in _local_components(vac, sites, cube_nbrs):
            in_comp = [False] * len(sites)
            for p in comp:
                in_comp[p] = True
            overlap = 0
            for p in range(len(sites)):
                if in_comp[p] or any(in_comp[q] for q in cube_nbrs[p]):
                    overlap += 1
            if overlap >= thresh:
                cands.append((comp, int(glabel[sites[comp[0]]])))
        cube_candidates.append(cands)

    common = None
    for cands in cube_candidates:
        labels = {g for _, g in cands}
        common = labels if common is None else (common & labels)
        if not common:
            return False, None
    gamma = min(common)
    if not want_witness:
        return True, None
    witness = {}
    for z, sites, cands in zip(_CUBE_CENTERS, cube_sites, cube_candidates):
        comp = next(c for c, g in cands if g == gamma)
        witness[z] = tuple(tuple(int(v) for v in abs_sites[sites[p]]) for p in comp)
    return True, witness


def uniqueness_check(vacant_cube: np.ndarray, d: int) -> int:
    """Count near-spanning components of a vacant subset of one hypercube.

    At large d at most one component can satisfy the closure threshold; at
    small d the count may exceed one, which is reported, not asserted.
    """
    eps, cube_nbrs = _cube_pattern(d)
    vac = np.asarray(vacant_cube).ravel().astype(bool)
    if vac.size != 2 ** d:
        raise ValueError(f"expected 2^{d} cube occupancy values")
    thresh = closure_threshold(d)
    count = 0
    for comp in _local_components(vac, tuple(range(2 ** d)), cube_nbrs):
        in_comp = [False] * (2 ** d)
        for p in comp:
            in_comp[p] = True
        overlap = sum(1 for p in range(2 ** d)
                      if in_comp[p] or any(in_comp[q] for q in cube_nbrs[p]))
        if overlap >= thresh:
            count += 1
    return count


@dataclass
class GoodnessField:
    """Per-site good/bad flags over a Z^3 core window, with its source field."""

    core: Window                 # Z^3 window of classified sites
    u: float
    good: np.ndarray             # core-shaped bool
    slab: Window
    vacant: np.ndarray           # slab-shaped bool field that was classified
    _witnesses: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def d(self) -> int:
        return self.slab.d

    def is_good(self, y: Site) -> bool:
        return bool(self.good[tuple(c - a for c, a in zip(y, self.core.lo))])

    def contains(self, y: Site) -> bool:
        return self.core.contains(y)

    def witness(self, y: Site) -> dict:
        y = tuple(y)
        wit = self._witnesses.get(y)
        if wit is None:
            good, wit = classify(y, self.vacant, self.slab, want_witness=True)
            if not good:
                raise ValueError(f"{y} is not a good site")
            self._witnesses[y] = wit
        return wit

    def bad_mask(self) -> np.ndarray:
        return ~self.good

    def good_fraction(self) -> float:
        return float(self.good.mean())


def classify_field(vacant_field: np.ndarray, slab: Window, u: float = float("nan"),
                   core: Window | None = None) -> GoodnessField:
    """Classify every Z^3 site whose 7 hypercubes fit inside the slab."""
    core = core or slab.classification_core()
    good = np.zeros(core.extents, dtype=bool)
    for y in core.sites():
        flag, _ = classify(y, vacant_field, slab)
        good[tuple(c - a for c, a in zip(y, core.lo))] = flag
    return GoodnessField(core, u, good, slab, np.asarray(vacant_field, dtype=bool))


def classify_sample(sample, u: float | None = None) -> GoodnessField:
    """GoodnessField of an interlacement sample on a slab window."""
    lvl = sample.u if u is None else u
    return classify_field(sample.vacant_field(lvl), sample.window, u=lvl)


@dataclass
class BadClusterStats:
    """Star-cluster decomposition of the bad sites of a goodness field."""

    sizes: np.ndarray            # per-cluster sizes, canonical order
    n_sites: int                 # sites in the classified core
    max_size: int

    def tail(self, n_max: int | None = None) -> np.ndarray:
        """tail[N-1] = fraction of core sites lying in a bad cluster of size >= N."""
        top = int(self.max_size if n_max is None else n_max)
        out = np.zeros(max(top, 0))
        for n in range(1, top + 1):
            out[n - 1] = self.sizes[self.sizes >= n].sum() / self.n_sites
        return out


def bad_clusters(gf: GoodnessField) -> BadClusterStats:
    lab = components(gf.bad_mask(), adjacency="star")
    mx = int(lab.sizes.max()) if lab.n_components else 0
    return BadClusterStats(lab.sizes, int(gf.good.size), mx)
